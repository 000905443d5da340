"""Zero-temperature limit objects: absorption measures and the limit rate table.

In the vanishing-temperature limit, an excursion that starts with a single
uphill exchange wanders through a connected plateau of equal-energy
configurations by rate-one moves until an energy-lowering exchange drops it
back into one of the droplet families.  All competing moves carry rates that
vanish with the temperature, so the landing distribution is the absorption
law of a finite rate-one chain and can be solved exactly.

Summing these absorption laws over the uphill neighbourhood of each family
class yields the limit jump rates of the droplet's shape chain (a sparse
table on the translation quotient), which the table-driven sampler consumes
with inverse-temperature prefactors: squares exit at order ``exp(-2 beta)``,
everything else at order ``exp(-beta)``.

The corner-detachment rates out of a square also have closed forms in terms
of a few absorption constants of small auxiliary walks (a particle-and-hole
walk on a triangle, one on a square grid with a side pocket, and harmonic
measures of the torus walk); those are computed here as well and
cross-checked against the direct solver.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

from . import droplet
from .chains import FiniteChain, absorption_distribution, check_absorption_normalization
from .droplet import Kind, class_labels, label_sites, side_positions, t_side_positions, w_star, w_star_t
from .lattice import Configuration, Coord, SimulationParams, TorusGeometry

Label = tuple


# ---------------------------------------------------------------------------
# harmonic measure of the rate-one torus walk
# ---------------------------------------------------------------------------


def harmonic_measure(
    geometry: TorusGeometry,
    start: Coord,
    targets: Iterable[Coord],
    absorbing: Iterable[Coord],
    full: bool = False,
):
    """Where the rate-one nearest-neighbour walk first hits the absorbing set.

    Returns the mass on ``targets`` (a subset of the absorbing set); with
    ``full`` also the whole hitting distribution.
    """
    absorbing_idx = {geometry.index(z) for z in absorbing}
    if not absorbing_idx:
        raise ValueError("absorbing set must be nonempty")
    target_idx = {geometry.index(z) for z in targets}
    if not target_idx <= absorbing_idx:
        raise ValueError("targets must lie inside the absorbing set")
    s0 = geometry.index(start)
    if s0 in absorbing_idx:
        dist = {s0: 1.0}
    else:
        chain = FiniteChain()
        nbr = geometry.neighbor_table
        seen = {s0}
        stack = [s0]
        while stack:
            u = stack.pop()
            if u in absorbing_idx:
                continue
            for v in nbr[u]:
                v = int(v)
                chain.add(u, v, 1.0)
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        dist = absorption_distribution(chain, {a: a for a in absorbing_idx & seen})[s0]
        check_absorption_normalization({0: dist})
    mass = sum(p for z, p in dist.items() if z in target_idx)
    if full:
        return mass, {geometry.coord(z): p for z, p in dist.items()}
    return mass


# ---------------------------------------------------------------------------
# auxiliary corner walks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WalkConstants:
    """Absorption constants controlling corner detachments from a square.

    ``q``: the particle-and-hole walk on the triangle {j < k} hits the far
    row before recombining.  ``r_plus/r_minus/r0``: the walk on the square
    grid with its side pocket ends top / bottom / recombines, per start
    column.  The ``A`` family are harmonic measures of the torus walk
    started at the two detached-corner positions.
    """

    n: int
    L: int
    q: float
    r_plus: float
    r_minus: float
    r0: tuple[float, ...]
    r_plus_k: tuple[float, ...]
    r_minus_k: tuple[float, ...]
    A: float
    A_03: float
    A_12: float
    A_j: tuple[float, float, float, float]
    A_e1: float
    A_e2: float

    @property
    def r(self) -> float:
        return self.r_plus + self.r_minus

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "L": self.L,
            "q": self.q,
            "r_plus": self.r_plus,
            "r_minus": self.r_minus,
            "r0": list(self.r0),
            "A": self.A,
            "A_03": self.A_03,
            "A_12": self.A_12,
            "A_j": list(self.A_j),
            "A_e1": self.A_e1,
            "A_e2": self.A_e2,
        }


def _triangle_chain(n: int) -> tuple[FiniteChain, set, set]:
    """Particle-hole walk on D = {(j,k): 0 <= j < k <= n-1} + {(0,0)}.

    Absorbing: the far row {(j, n-1)} and the recombination state (0,0).
    """
    states = {(j, k) for k in range(n) for j in range(k)} | {(0, 0)}
    top = {(j, n - 1) for j in range(n - 1)}
    absorbing = top | {(0, 0)}
    chain = FiniteChain()
    for s in states:
        if s in absorbing:
            continue
        j, k = s
        for t in ((j + 1, k), (j - 1, k), (j, k + 1), (j, k - 1)):
            if t in states:
                chain.add(s, t, 1)
    return chain, top, absorbing


def _pocket_chain(n: int):
    """Particle-hole walk on {0..n-1}^2 with the side pocket off (1,1).

    Absorbing: top row E+, bottom row E- (minus the origin), and the
    recombination state (0,0).
    """
    states = {(j, k) for j in range(n) for k in range(n)} | {"d"}
    e_plus = {(j, n - 1) for j in range(n)}
    e_minus = {(j, 0) for j in range(1, n)}
    absorbing = e_plus | e_minus | {(0, 0)}
    chain = FiniteChain()
    for s in states:
        if s in absorbing:
            continue
        if s == "d":
            chain.add("d", (1, 1), 1)
            continue
        j, k = s
        for t in ((j + 1, k), (j - 1, k), (j, k + 1), (j, k - 1)):
            if t in states and t != "d":
                chain.add(s, t, 1)
        if s == (1, 1):
            chain.add(s, "d", 1)
    return chain, e_plus, e_minus, absorbing


def triangle_hit_probability(n: int, exact: bool = False):
    """P[far row before recombination] from (0,1) for the triangle walk."""
    if n == 2:
        return Fraction(1) if exact else 1.0
    chain, top, absorbing = _triangle_chain(n)
    dist = absorption_distribution(chain, {a: ("top" if a in top else "rec") for a in absorbing}, exact=exact)
    return dist[(0, 1)].get("top", Fraction(0) if exact else 0.0)


def pocket_hit_probabilities(n: int, exact: bool = False):
    """Per-start-column absorption of the pocket walk: (top, bottom, recombine)."""
    chain, e_plus, e_minus, absorbing = _pocket_chain(n)
    groups = {}
    for a in absorbing:
        groups[a] = "plus" if a in e_plus else ("minus" if a in e_minus else "rec")
    dist = absorption_distribution(chain, groups, exact=exact)
    zero = Fraction(0) if exact else 0.0
    rp, rm, r0 = [], [], []
    for k in range(n):
        s = (k, 1)
        if s in absorbing:
            row = {groups[s]: Fraction(1) if exact else 1.0}
        else:
            row = dist[s]
        rp.append(row.get("plus", zero))
        rm.append(row.get("minus", zero))
        r0.append(row.get("rec", zero))
    return tuple(rp), tuple(rm), tuple(r0)


@lru_cache(maxsize=None)
def walk_constants(n: int, L: int) -> WalkConstants:
    """All auxiliary-walk constants for droplet side n on the (2L+1)-torus."""
    if n < 2:
        raise ValueError("need n >= 2")
    geometry = TorusGeometry(L)
    q = float(triangle_hit_probability(n))
    rp_k, rm_k, r0_k = pocket_hit_probabilities(n)
    rp_k = tuple(float(v) for v in rp_k)
    rm_k = tuple(float(v) for v in rm_k)
    r0_k = tuple(float(v) for v in r0_k)

    outer = droplet.outer_side(droplet.square_sites(n), 0)
    boundary = set()
    for j in range(4):
        boundary |= droplet.outer_side(droplet.square_sites(n), j)
    starts = [(0, -2), (-1, -1)]
    dists = [harmonic_measure(geometry, s, boundary, boundary, full=True)[1] for s in starts]

    def mass(sites: Iterable[Coord]) -> float:
        tot = 0.0
        for d in dists:
            for z in sites:
                tot += d.get(geometry.wrap(z), 0.0)
        return tot

    sides = [side_positions(n, 0, j) for j in range(4)]
    A_j = tuple(mass(sides[j]) for j in range(4))
    return WalkConstants(
        n=n,
        L=L,
        q=q,
        r_plus=rp_k[0],
        r_minus=rm_k[0],
        r0=r0_k,
        r_plus_k=rp_k,
        r_minus_k=rm_k,
        A=mass([(0, -1), (-1, 0)]),
        A_03=A_j[0] + A_j[3],
        A_12=A_j[1] + A_j[2],
        A_j=A_j,
        A_e1=mass([(-1, 0)]),
        A_e2=mass([(0, -1)]),
    )


def rate_eta0(n: int, L: int) -> tuple[float, float]:
    """Closed-form limit rates out of a square, to the two symmetry types.

    The first value is the rate to a class whose attached particle sits on a
    side touching the vacant corner, the second to the other eight classes.
    """
    if n < 3:
        raise ValueError("need n >= 3")
    wc = walk_constants(n, L)
    den = 4.0 + wc.q + wc.r - wc.A
    r_same = (1.0 + wc.A_03 + wc.r_minus + wc.q) / den
    r_other = (wc.A_12 + wc.r_plus) / den
    return r_same, r_other


def is_same_side_class(i: int, j: int) -> bool:
    """Whether the attached particle of class (i, j) sits on a side touching corner i."""
    return i == j or i == (j + 1) % 4


@dataclass(frozen=True)
class ClosedFormP:
    """Leading-order excursion probabilities out of a square."""

    p_return_same: float  # P[first family revisit is a same-side class]
    p_return_other: float
    p_return_self: float
    p_jump_same: float  # conditioned on leaving the square
    p_jump_other: float
    bbm1_mid: float  # absorption mass of the two detached corners on the bottom well
    bbm2_mid: float


def closed_form_p(n: int, L: int) -> ClosedFormP:
    wc = walk_constants(n, L)
    den = 4.0 + wc.q + wc.r - wc.A
    num_same = 1.0 + wc.A_03 + wc.r_minus + wc.q
    num_other = wc.A_12 + wc.r_plus
    den_jump = 1.0 + wc.A_03 + wc.A_12 + wc.r + wc.q
    den2 = 4.0 + wc.q + wc.r + wc.A_e1 - wc.A_e2
    sym = (1.0 + wc.r_minus + wc.A_03) / den
    asym = (1.0 + wc.r_minus + wc.A_j[0] - wc.A_j[3]) / den2
    return ClosedFormP(
        p_return_same=num_same / (8.0 * den),
        p_return_other=num_other / (8.0 * den),
        p_return_self=1.0 / den,
        p_jump_same=num_same / (8.0 * den_jump),
        p_jump_other=num_other / (8.0 * den_jump),
        bbm1_mid=0.5 * (sym + asym),
        bbm2_mid=0.5 * (sym - asym),
    )


# ---------------------------------------------------------------------------
# plateau absorption solver
# ---------------------------------------------------------------------------


@dataclass
class AbsorptionResult:
    """Absorption law of one plateau: raw per-configuration and per-well masses."""

    start_key: bytes
    raw: dict  # Configuration key -> mass
    grouped: dict  # (label, anchor) -> mass
    n_states: int


class PlateauSolver:
    """Absorption distributions of the rate-one plateau dynamics.

    States are explored by closing the start configuration under
    zero-energy exchanges; energy-lowering exchanges absorb.  Landing
    configurations are classified and grouped by family well (attachment
    wells collapse onto their representative, side-load rectangles stay
    individual).
    """

    def __init__(self, params: SimulationParams, max_states: int = 500_000):
        self.params = params
        self.geometry = params.geometry
        self.nbr = [tuple(int(v) for v in row) for row in self.geometry.neighbor_table]
        self.max_states = max_states
        self._classify_cache: dict[bytes, tuple[Label, Coord]] = {}
        # one flat component often hosts many uphill-neighbourhood members;
        # its absorption solve is shared through this cache
        self._component_cache: dict[frozenset, dict] = {}

    # -- configuration helpers ------------------------------------------------

    def config_from_idxset(self, idxset: frozenset[int]) -> Configuration:
        occ = np.zeros(self.geometry.nsites, dtype=np.uint8)
        occ[list(idxset)] = 1
        return Configuration(self.geometry, occ)

    def idxset_from_config(self, config: Configuration) -> frozenset[int]:
        return frozenset(int(i) for i in config.occupied_indices())

    def place_label(self, label: Label, anchor: Coord = (0, 0)) -> frozenset[int]:
        g = self.geometry
        return frozenset(
            g.index((anchor[0] + x, anchor[1] + y)) for (x, y) in label_sites(label, self.params.n)
        )

    def _moves(self, idxset: frozenset[int]):
        """(src, dst, dh) for every particle move with dh <= +1."""
        nbr = self.nbr
        out = []
        for p in idxset:
            row = nbr[p]
            n_p = 0
            vac = []
            for u in row:
                if u in idxset:
                    n_p += 1
                else:
                    vac.append(u)
            for u in vac:
                n_u = -1  # exclude p, which is occupied and adjacent
                for v in nbr[u]:
                    if v in idxset:
                        n_u += 1
                dh = n_p - n_u
                if dh <= 1:
                    out.append((p, u, dh))
        return out

    def _moves_all(self, idxset: frozenset[int]):
        nbr = self.nbr
        out = []
        for p in idxset:
            row = nbr[p]
            n_p = sum(1 for u in row if u in idxset)
            for u in row:
                if u not in idxset:
                    n_u = -1
                    for v in nbr[u]:
                        if v in idxset:
                            n_u += 1
                    out.append((p, u, n_p - n_u))
        return out

    def classify_target(self, idxset: frozenset[int]) -> tuple[Label, Coord]:
        config = self.config_from_idxset(idxset)
        key = config.key()
        hit = self._classify_cache.get(key)
        if hit is not None:
            return hit
        cls = droplet.classify(config, self.params)
        n = self.params.n
        if cls.kind is Kind.SQUARE:
            out = (("sq",), cls.anchor)
        elif cls.kind is Kind.QUASI_PLUS:
            out = (("o1", cls.corner, cls.side, w_star(n, cls.side)), cls.anchor)
        elif cls.kind is Kind.RECT_PLUS:
            out = (("o3", cls.orientation, cls.side, w_star_t(n, cls.orientation, cls.side)), cls.anchor)
        elif cls.kind is Kind.RECT_SIDES:
            out = (("o2", cls.orientation, cls.loads), cls.anchor)
        elif cls.kind is Kind.RECT2_SIDES:
            out = (("o4", cls.orientation, cls.loads), cls.anchor)
        else:
            raise RuntimeError(
                f"plateau absorbed outside the droplet families (kind {cls.kind}, shell {cls.shell})"
            )
        self._classify_cache[key] = out
        return out

    # -- main solve ------------------------------------------------------------

    def plateau_closure(self, start: frozenset[int]):
        """Flat component of ``start`` plus its absorption edges."""
        seen = {start}
        order = [start]
        stack = [start]
        flat_edges: list[tuple[frozenset, frozenset]] = []
        absorb_edges: list[tuple[frozenset, frozenset]] = []
        while stack:
            cur = stack.pop()
            for (p, u, dh) in self._moves(cur):
                if dh == 1:
                    continue
                nxt = frozenset((cur - {p}) | {u})
                if dh == 0:
                    if nxt not in seen:
                        if len(seen) >= self.max_states:
                            raise RuntimeError("plateau exceeded the state cap")
                        seen.add(nxt)
                        order.append(nxt)
                        stack.append(nxt)
                    flat_edges.append((cur, nxt))
                else:
                    absorb_edges.append((cur, nxt))
        return order, flat_edges, absorb_edges

    def _solve_component(self, start: frozenset, exact: bool, keep_raw: bool):
        """Grouped absorption rows for every state of one flat component."""
        states, flat_edges, absorb_edges = self.plateau_closure(start)
        chain = FiniteChain()
        one = Fraction(1) if exact else 1.0
        for s, t in flat_edges:
            chain.add(s, t, one)
        absorbing: dict[frozenset, frozenset] = {}
        for s, t in absorb_edges:
            chain.add(s, t, one)
            absorbing[t] = t
        if not absorbing:
            raise RuntimeError("plateau has no absorbing exits")
        dist = absorption_distribution(chain, absorbing, exact=exact)
        tgt_group = {t: self.classify_target(t) for t in absorbing}
        zero = Fraction(0) if exact else 0.0
        rows: dict[frozenset, dict] = {}
        for s in states:
            raw = {s: one} if s in absorbing else dist[s]
            if not exact:
                check_absorption_normalization({0: raw}, tol=1e-11)
            grouped: dict[tuple[Label, Coord], object] = {}
            for tgt, p in raw.items():
                key = tgt_group[tgt]
                grouped[key] = grouped.get(key, zero) + p
            rows[s] = {
                "grouped": grouped,
                "raw": raw if keep_raw else None,
                "n_states": len(states),
            }
        return rows

    def solve(self, start, exact: bool = False, want_raw: bool = False) -> AbsorptionResult:
        """Absorption law of the plateau containing ``start``.

        ``start`` may be a Configuration or an index frozenset; it must sit
        two energy units above the ground state.  With ``exact`` the solve
        runs in rational arithmetic (small plateaus only).  Per-landing
        (ungrouped) masses are kept only on request.
        """
        if isinstance(start, Configuration):
            start = self.idxset_from_config(start)
        start_key = self.config_from_idxset(start).key()
        if exact or want_raw:
            row = self._solve_component(start, exact=exact, keep_raw=True)[start]
        else:
            hit = self._component_cache.get(start)
            if hit is None:
                rows = self._solve_component(start, exact=False, keep_raw=False)
                for s, r in rows.items():
                    self._component_cache[s] = r
                hit = rows[start]
            row = hit
        raw = (
            {self.config_from_idxset(t).key(): p for t, p in row["raw"].items()}
            if row["raw"] is not None
            else {}
        )
        return AbsorptionResult(
            start_key=start_key, raw=raw, grouped=dict(row["grouped"]), n_states=row["n_states"]
        )


def solve_bbm(start: Configuration, params: SimulationParams, exact: bool = False) -> AbsorptionResult:
    """Absorption law from a single plateau configuration (convenience form)."""
    return PlateauSolver(params).solve(start, exact=exact)


# ---------------------------------------------------------------------------
# uphill neighbourhoods and the limit rate table
# ---------------------------------------------------------------------------


def well_member_sets(label: Label, n: int) -> list[frozenset[Coord]]:
    """All configurations of the well a class label represents (relative sites)."""
    tag = label[0]
    if tag == "o1":
        _, i, j, _ = label
        base = droplet.quasi_square_sites(n, i)
        return [base | {z} for z in sorted(side_positions(n, i, j))]
    if tag == "o3":
        _, a, j, _ = label
        base = droplet.t_rect_sites(n, a)
        return [base | {z} for z in sorted(t_side_positions(n, a, j))]
    return [label_sites(label, n)]


def uphill_neighborhood(solver: PlateauSolver, label: Label) -> list[frozenset[int]]:
    """Distinct one-level-uphill configurations reachable from a well."""
    n = solver.params.n
    out: dict[frozenset[int], None] = {}
    for rel in well_member_sets(label, n):
        idxset = frozenset(solver.geometry.index(z) for z in rel)
        for (p, u, dh) in solver._moves_all(idxset):
            if dh == 1:
                out.setdefault(frozenset((idxset - {p}) | {u}), None)
    return list(out.keys())


_ALLOWED_TARGETS = {
    "o1": {"sq", "o1", "o2"},
    "o2": {"o1", "o2", "o3"},
    "o3": {"o2", "o3", "o4"},
    "o4": {"o3", "o4"},
}


@dataclass
class RateTable:
    """Sparse limit rates on the translation quotient, with anchor offsets.

    ``entries[(src, dst, offset)]`` is the limit rate from class ``src`` at
    anchor 0 to class ``dst`` at anchor ``offset``.  The inverse-temperature
    prefactor is ``exp(-2 beta)`` for the square class (index 0) and
    ``exp(-beta)`` for every other class.
    """

    n: int
    L: int
    labels: list[Label]
    entries: dict[tuple[int, int, Coord], float]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.label_index = {lab: k for k, lab in enumerate(self.labels)}
        self._rows: list[list[tuple[int, Coord, float]]] | None = None

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def prefactor_exponent(self, cls_id: int) -> int:
        return 2 if self.labels[cls_id][0] == "sq" else 1

    def rows(self) -> list[list[tuple[int, Coord, float]]]:
        if self._rows is None:
            rows: list[list[tuple[int, Coord, float]]] = [[] for _ in self.labels]
            for (s, t, off), r in sorted(self.entries.items()):
                rows[s].append((t, off, r))
            self._rows = rows
        return self._rows

    def row(self, cls_id: int):
        return self.rows()[cls_id]

    def total_rate(self, cls_id: int) -> float:
        return sum(r for (_, _, r) in self.rows()[cls_id])

    def to_json_dict(self) -> dict:
        ordered = sorted(
            ((s, t, off, r) for (s, t, off), r in self.entries.items()),
            key=lambda e: (e[0], e[1], e[2]),
        )
        return {
            "format": "latgas-rate-table",
            "version": 1,
            "n": self.n,
            "L": self.L,
            "labels": [_label_to_json(lab) for lab in self.labels],
            "entries": [[s, t, list(off), r] for (s, t, off, r) in ordered],
            "meta": self.meta,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    @classmethod
    def from_json_dict(cls, d: dict) -> "RateTable":
        if d.get("format") != "latgas-rate-table":
            raise ValueError("not a rate-table file")
        labels = [_label_from_json(x) for x in d["labels"]]
        entries = {(s, t, tuple(off)): float(r) for s, t, off, r in d["entries"]}
        return cls(n=d["n"], L=d["L"], labels=labels, entries=entries, meta=d.get("meta", {}))


def _label_to_json(lab: Label):
    def enc(x):
        if isinstance(x, tuple):
            return ["t", [enc(v) for v in x]]
        return x

    return enc(lab)


def _label_from_json(x):
    if isinstance(x, list):
        if x and x[0] == "t":
            return tuple(_label_from_json(v) for v in x[1])
        return tuple(_label_from_json(v) for v in x)
    return x


def build_rate_table(
    n: int,
    L: int,
    params: SimulationParams | None = None,
    sources: str = "all",
    progress: bool = False,
) -> RateTable:
    """Assemble the limit rate table on the translation quotient.

    Every non-square class row is the sum of plateau absorption laws over
    the class's uphill neighbourhood; the square row uses the closed-form
    corner-detachment rates.  ``sources='omega1'`` restricts the build to
    the square and attachment classes (enough for the local exit analyses
    at large n).
    """
    if n < 3:
        raise ValueError("families are degenerate below n = 3")
    if params is None:
        params = SimulationParams(beta=1.0, n=n, L=L)
    solver = PlateauSolver(params)
    labels = class_labels(n)
    if sources == "omega1":
        build_labels = [lab for lab in labels if lab[0] == "o1"]
    elif sources == "all":
        build_labels = [lab for lab in labels if lab[0] != "sq"]
    else:
        raise ValueError("sources must be 'all' or 'omega1'")
    label_index = {lab: k for k, lab in enumerate(labels)}
    entries: dict[tuple[int, int, Coord], float] = {}

    r_same, r_other = rate_eta0(n, L)
    for i in range(4):
        for j in range(4):
            lab = ("o1", i, j, w_star(n, j))
            val = r_same if is_same_side_class(i, j) else r_other
            entries[(0, label_index[lab], (0, 0))] = val

    for count, lab in enumerate(build_labels):
        sid = label_index[lab]
        nb = uphill_neighborhood(solver, lab)
        if not nb:
            raise RuntimeError(f"class {lab} has an empty uphill neighbourhood")
        row: dict[tuple[int, Coord], float] = {}
        for zeta in nb:
            res = solver.solve(zeta)
            for (tlab, anchor), p in res.grouped.items():
                if tlab[0] != "sq" and tlab[0] not in _ALLOWED_TARGETS[lab[0]]:
                    raise RuntimeError(f"forbidden transition {lab} -> {tlab}")
                if tlab[0] == "sq" and lab[0] != "o1":
                    raise RuntimeError(f"forbidden transition {lab} -> square")
                key = (label_index[tlab], anchor)
                row[key] = row.get(key, 0.0) + p
        for (tid, off), v in row.items():
            if tid == sid and off == (0, 0):
                continue  # excursions back to the start are not jumps
            if v > 0.0:
                entries[(sid, tid, off)] = v
        if progress and (count + 1) % 200 == 0:
            print(f"  rate table: {count + 1}/{len(build_labels)} class rows", flush=True)

    meta = {
        "sources": sources,
        "classes": len(labels),
        "per_family": {
            "gamma": 1,
            "omega1_hat": 16,
            "omega2": sum(1 for lab in labels if lab[0] == "o2"),
            "omega3_hat": 8,
            "omega4": sum(1 for lab in labels if lab[0] == "o4"),
        },
    }
    return RateTable(n=n, L=L, labels=labels, entries=entries, meta=meta)


# ---------------------------------------------------------------------------
# table audits
# ---------------------------------------------------------------------------


def omega2_row_rates_exact(n: int, L: int, i: int, j: int) -> Fraction:
    """Rational total rate from attachment class (i, j) into the side-load family.

    Only small plateaus can carry side-load mass (the detached-particle
    plateaus land exclusively on squares and attachment wells), so the
    rational solve is restricted to plateaus below a size cap after checking
    that the large ones are structurally side-load free.
    """
    params = SimulationParams(beta=1.0, n=n, L=L)
    solver = PlateauSolver(params)
    lab = ("o1", i, j, w_star(n, j))
    total = Fraction(0)
    for zeta in uphill_neighborhood(solver, lab):
        states, _, absorb_edges = solver.plateau_closure(zeta)
        has_o2 = any(solver.classify_target(t)[0][0] == "o2" for (_, t) in absorb_edges)
        if not has_o2:
            continue
        res = solver.solve(zeta, exact=True)
        for (tlab, _), p in res.grouped.items():
            if tlab[0] == "o2":
                total += p
    return total


def symmetry_defect(table: RateTable) -> float:
    """Largest violation of rate symmetry off the square class."""
    worst = 0.0
    for (s, t, off), r in table.entries.items():
        if s == 0 or t == 0:
            continue
        back = table.entries.get((t, s, (-off[0], -off[1])), 0.0)
        worst = max(worst, abs(r - back))
    return worst


_ROT = {
    "id": lambda x: x,
    "r90": lambda x: (-x[1], x[0]),
    "r180": lambda x: (-x[0], -x[1]),
    "r270": lambda x: (x[1], -x[0]),
    "mx": lambda x: (x[0], -x[1]),
    "my": lambda x: (-x[0], x[1]),
    "d1": lambda x: (x[1], x[0]),
    "d2": lambda x: (-x[1], -x[0]),
}


def transform_config(config: Configuration, gname: str) -> Configuration:
    g = config.geometry
    f = _ROT[gname]
    return Configuration.from_sites(g, (f(z) for z in config.occupied_sites()))


def dihedral_defect(table: RateTable, params: SimulationParams, gname: str, sample: int | None = None) -> float:
    """Largest change of the table under one symmetry of the square lattice.

    Each entry (src at 0) -> (dst at offset) is mapped through the symmetry
    by transforming and re-classifying both canonical configurations.
    """
    solver = PlateauSolver(params)
    f = _ROT[gname]
    n = params.n

    @lru_cache(maxsize=None)
    def image(cls_id: int) -> tuple[int, Coord]:
        cfg = solver.config_from_idxset(solver.place_label(table.labels[cls_id]))
        lab, anchor = solver.classify_target(solver.idxset_from_config(transform_config(cfg, gname)))
        return table.label_index[lab], anchor

    worst = 0.0
    items = sorted(table.entries.items())
    if sample is not None:
        items = items[:: max(1, len(items) // sample)]
    for (s, t, off), r in items:
        s2, a_s = image(s)
        t2, a_t = image(t)
        goff = f(off)
        off2 = (goff[0] + a_t[0] - a_s[0], goff[1] + a_t[1] - a_s[1])
        r2 = table.entries.get((s2, t2, off2), 0.0)
        worst = max(worst, abs(r - r2))
    return worst


# ---------------------------------------------------------------------------
# local exit analysis around a square (exact, table-driven)
# ---------------------------------------------------------------------------


def attachment_exit_probabilities(table: RateTable) -> dict[tuple[int, int], float]:
    """P[leave the square's local cluster before touching the square itself].

    For each attachment class, the probability that the table-driven chain
    started there exits the 17-state local cluster (square plus its sixteen
    attachment classes, all at anchor 0) before hitting the square.
    """
    chain = FiniteChain()
    local = {}
    for k, lab in enumerate(table.labels):
        if lab[0] == "o1":
            local[k] = lab
    for sid in local:
        for (tid, off, r) in table.row(sid):
            if tid in local and off == (0, 0):
                chain.add(("c", sid), ("c", tid), r)
            elif tid == 0 and off == (0, 0):
                chain.add(("c", sid), "square", r)
            else:
                chain.add(("c", sid), "exit", r)
    dist = absorption_distribution(chain, {"square": "square", "exit": "exit"})
    out = {}
    for sid, lab in local.items():
        out[(lab[1], lab[2])] = dist[("c", sid)].get("exit", 0.0)
    return out


def local_exit_bound(table: RateTable) -> float:
    """Worst-case local exit probability over the sixteen attachment classes."""
    return max(attachment_exit_probabilities(table).values())


# ---------------------------------------------------------------------------
# sliding path (for path-rate audits and flow bounds)
# ---------------------------------------------------------------------------


def structured_sliding_path(table: RateTable) -> list[tuple[int, Coord, float]]:
    """Square-to-neighbour path with the canonical slide structure.

    Three attachment hops reshape the square and park a particle on the
    right side, a side-load stretch transfers the leftmost column one
    particle at a time, and three mirror hops finish the slide one anchor to
    the right.  The interior stretch is chosen to maximize its bottleneck
    rate among side-load states.  Returns [(class, offset, rate-used), ...].
    """
    import heapq

    n = table.n

    def o1(i, j):
        return table.label_index[("o1", i, j, w_star(n, j))]

    head = [(0, (0, 0)), (o1(2, 1), (0, 0)), (o1(3, 1), (0, 0)), (o1(0, 1), (0, 0))]
    tail = [(o1(1, 3), (1, 0)), (o1(2, 3), (1, 0)), (o1(3, 3), (1, 0)), (0, (1, 0))]

    def edge_rate(a, b):
        return table.entries.get((a[0], b[0], (b[1][0] - a[1][0], b[1][1] - a[1][1])), 0.0)

    # interior stretch: off-square states only, entered from the parked-particle
    # class through one of its side-load neighbours
    starts = {}
    for (tid, off, r) in table.row(head[-1][0]):
        if table.labels[tid][0] == "o2":
            starts[(tid, off)] = r
    if not starts:
        raise RuntimeError("no side-load neighbours for the slide entry")
    goal = tail[0]
    # shortest interior stretch using only edges at or above the target
    # bottleneck 1/n (breadth-first over the off-square quotient graph)
    threshold = 1.0 / n - 1e-12
    from collections import deque

    prev: dict[tuple, tuple | None] = {s: None for s in starts}
    dq = deque(starts)
    found = goal in prev
    while dq and not found:
        node = dq.popleft()
        cls, off = node
        for (tid, doff, r) in table.row(cls):
            if tid == 0 or r < threshold:
                continue
            tgt = (tid, (off[0] + doff[0], off[1] + doff[1]))
            if abs(tgt[1][0]) > 3 or abs(tgt[1][1]) > 3:
                continue
            if tgt not in prev:
                prev[tgt] = node
                if tgt == goal:
                    found = True
                    break
                dq.append(tgt)
    if not found:
        raise RuntimeError("side-load stretch does not reach the slide exit")
    middle = []
    node = prev[goal]
    while node is not None:
        middle.append(node)
        node = prev[node]
    middle.reverse()

    nodes = head + middle + tail
    path = [(nodes[0][0], nodes[0][1], 0.0)]
    for a, b in zip(nodes[:-1], nodes[1:]):
        r = edge_rate(a, b)
        if r <= 0.0:
            raise RuntimeError(f"broken path edge {a} -> {b}")
        path.append((b[0], b[1], r))
    return path


def sliding_path(table: RateTable) -> list[tuple[int, Coord, float]]:
    """Widest-bottleneck path from the square to its right neighbour square.

    The path stays off the square class in its interior (it slides mass
    around the droplet through attachment and side-load classes) and
    maximizes its minimum rate.  Returns [(class, offset, rate-used), ...]
    with the first entry the starting square at offset (0,0), rate 0.
    """
    import heapq

    start = (0, (0, 0))
    goal = (0, (1, 0))
    best: dict[tuple[int, Coord], float] = {start: float("inf")}
    prev: dict[tuple[int, Coord], tuple] = {}
    heap = [(-float("inf"), start)]
    while heap:
        negw, node = heapq.heappop(heap)
        w = -negw
        if node == goal:
            break
        if w < best.get(node, 0.0):
            continue
        cls, off = node
        for (tid, doff, r) in table.row(cls):
            tgt = (tid, (off[0] + doff[0], off[1] + doff[1]))
            if tgt[0] == 0 and tgt != goal:
                continue  # interior must avoid squares
            if abs(tgt[1][0]) > 4 or abs(tgt[1][1]) > 4:
                continue
            neww = min(w, r)
            if neww > best.get(tgt, 0.0):
                best[tgt] = neww
                prev[tgt] = (node, r)
                heapq.heappush(heap, (-neww, tgt))
    if goal not in prev:
        raise RuntimeError("no sliding path found")
    path = []
    node = goal
    while node != start:
        parent, r = prev[node]
        path.append((node[0], node[1], r))
        node = parent
    path.append((0, (0, 0), 0.0))
    return path[::-1]
