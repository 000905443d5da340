"""Recognition and construction of the low-energy droplet families.

At particle number ``K = n^2`` the relevant configurations near the ground
states are, in increasing energy:

* squares ``n x n`` (the ground states, one per anchor);
* a quasi-square (square with one corner vacant) plus a particle attached to
  one of its outer sides;
* ``(n+1) x (n-1)`` cores dressed with contiguous runs of particles on all
  four sides ("side-load rectangles", at least two particles per side);
* a full ``(n+1) x (n-1)`` rectangle plus one attached particle;
* ``(n+2) x (n-2)`` cores dressed with side loads.

The first family is the energy minimum; the other four sit exactly one bond
above it.  This module classifies arbitrary configurations into these
families (or energy shells beyond them), builds canonical representatives,
enumerates the families, reduces configurations modulo translations, and
computes droplet centers of mass.

Conventions: side ``j`` of a rectangle is its bottom (j=0), right (j=1),
top (j=2) or left (j=3) outer boundary; corner ``i`` of the square is
counterclockwise from the origin.  Side loads are parametrized
counterclockwise, each side starting at the corner it owns.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, Iterator

import numpy as np

from .lattice import (
    Configuration,
    Coord,
    SimulationParams,
    TorusGeometry,
    delta_h,
    enumerate_active_moves,
    exchange,
    hamiltonian,
)


class Kind(Enum):
    SQUARE = "square"
    QUASI_PLUS = "quasi_square_plus_particle"
    RECT_SIDES = "rect_with_side_particles"
    RECT_PLUS = "rect_plus_particle"
    RECT2_SIDES = "rect2_with_side_particles"
    SHELL = "energy_shell"
    PLATEAU = "plateau"
    OTHER = "other"


FAMILY_KINDS = (Kind.SQUARE, Kind.QUASI_PLUS, Kind.RECT_SIDES, Kind.RECT_PLUS, Kind.RECT2_SIDES)

SideLoads = tuple[tuple[int, int], tuple[int, int], tuple[int, int], tuple[int, int]]


@dataclass(frozen=True)
class DropletClass:
    """Classification label with anchor and shape parameters.

    Which fields are set depends on ``kind``: a quasi-square-plus-particle
    carries the vacant corner ``corner``, the side ``side`` and the relative
    particle position ``extra``; side-load rectangles carry the orientation
    ``orientation`` ('l' lying / 's' standing) and the four ``loads``
    ``(k_i, l_i)``; plain shells carry ``shell``; plateaus carry ``segment``.
    """

    kind: Kind
    anchor: Coord | None = None
    corner: int | None = None
    side: int | None = None
    orientation: str | None = None
    loads: SideLoads | None = None
    extra: Coord | None = None
    shell: int | None = None
    segment: tuple[int, int] | None = None

    def label(self):
        """Anchor-free shape label, hashable; used as quotient-class id."""
        if self.kind is Kind.SQUARE:
            return ("sq",)
        if self.kind is Kind.QUASI_PLUS:
            return ("o1", self.corner, self.side, self.extra)
        if self.kind is Kind.RECT_SIDES:
            return ("o2", self.orientation, self.loads)
        if self.kind is Kind.RECT_PLUS:
            return ("o3", self.orientation, self.side, self.extra)
        if self.kind is Kind.RECT2_SIDES:
            return ("o4", self.orientation, self.loads)
        raise ValueError(f"{self.kind} has no family label")


@dataclass(frozen=True)
class QuotientClass:
    """A configuration modulo translations: canonical translate plus offset."""

    canonical: Configuration
    offset: Coord


# ---------------------------------------------------------------------------
# relative geometry of the families (anchor at the origin)
# ---------------------------------------------------------------------------


def corners(n: int) -> tuple[Coord, Coord, Coord, Coord]:
    return ((0, 0), (n - 1, 0), (n - 1, n - 1), (0, n - 1))


def square_sites(n: int) -> frozenset[Coord]:
    return frozenset((a, b) for a in range(n) for b in range(n))


def quasi_square_sites(n: int, i: int) -> frozenset[Coord]:
    return square_sites(n) - {corners(n)[i]}


def outer_side(sites: frozenset[Coord], j: int) -> frozenset[Coord]:
    """Sites outside the set whose side-j neighbour is in the set."""
    step = {0: (0, 1), 1: (-1, 0), 2: (0, -1), 3: (1, 0)}[j]
    out = set()
    for (x, y) in sites:
        z = (x - step[0], y - step[1])
        if z not in sites:
            out.add(z)
    return frozenset(out)


def side_positions(n: int, i: int, j: int) -> frozenset[Coord]:
    """Attachment positions on side j of the quasi-square missing corner i."""
    return outer_side(quasi_square_sites(n, i), j) - square_sites(n)


def midpoint_distance(n: int) -> int:
    """Distance from a side midpoint to the counterclockwise corner of the side."""
    return (n - 1) // 2


def w_star(n: int, j: int) -> Coord:
    """Representative attachment site on side j of the square's outer boundary."""
    d = midpoint_distance(n)
    return {0: (d, -1), 1: (n, d), 2: (n - 1 - d, n), 3: (-1, n - 1 - d)}[j]


def w_hat(n: int, j: int) -> Coord:
    d = midpoint_distance(n)
    return {0: (d, 0), 1: (n - 1, d), 2: (n - 1 - d, n - 1), 3: (0, n - 1 - d)}[j]


def t_rect_sites(n: int, a: str) -> frozenset[Coord]:
    """The bare (n+1) x (n-1) rectangle, lying ('l') or standing ('s')."""
    if a == "l":
        return frozenset((x, y) for x in range(n + 1) for y in range(n - 1))
    return frozenset((x, y) for x in range(n - 1) for y in range(n + 1))


def t_side_positions(n: int, a: str, j: int) -> frozenset[Coord]:
    return outer_side(t_rect_sites(n, a), j)


def _transpose(x: Coord) -> Coord:
    return (x[1], x[0])


def w_star_t(n: int, a: str, j: int) -> Coord:
    """Representative attachment on side j of the (n+1) x (n-1) rectangle."""
    if n % 2 == 0:
        lying = [(n // 2, -1), (n + 1, (n - 2) // 2), (n // 2, n - 1), (-1, (n - 2) // 2)]
    else:
        lying = [((n - 1) // 2, -1), (n + 1, (n - 3) // 2), ((n + 1) // 2, n - 1), (-1, (n - 1) // 2)]
    if a == "l":
        return lying[j]
    # the standing rectangle is the transpose; sides map 0<->3, 1<->2
    return _transpose(lying[{0: 3, 1: 2, 2: 1, 3: 0}[j]])


# --- side-load rectangle machinery (levels 1 and 2) ------------------------


@dataclass(frozen=True)
class _LoadGeometry:
    core: frozenset[Coord]
    nmax: tuple[int, int, int, int]  # max load index per side
    # position of load index t on side i
    # stored as (origin, direction) per side: pos = origin + t * direction
    origins: tuple[Coord, Coord, Coord, Coord]
    dirs: tuple[Coord, Coord, Coord, Coord]

    def pos(self, i: int, t: int) -> Coord:
        o, d = self.origins[i], self.dirs[i]
        return (o[0] + t * d[0], o[1] + t * d[1])


@lru_cache(maxsize=None)
def load_geometry(n: int, level: int, a: str) -> _LoadGeometry:
    """Core rectangle and side parametrization for side-load families.

    Level 1 dresses an (n-1) x (n-2) core (full shape (n+1) x n), level 2 an
    n x (n-3) core (full shape (n+2) x (n-1)); 'l' and 's' are transposes.
    Each side is a contiguous run; index 0 of side i sits at the corner the
    side owns, running counterclockwise.
    """
    if level == 1:
        if a == "l":
            core = frozenset((x, y) for x in range(1, n) for y in range(1, n - 1))
            nmax = (n - 1, n - 2, n - 1, n - 2)
            origins = ((0, 0), (n, 0), (n, n - 1), (0, n - 1))
            dirs = ((1, 0), (0, 1), (-1, 0), (0, -1))
        else:
            core = frozenset((x, y) for x in range(1, n - 1) for y in range(1, n))
            nmax = (n - 2, n - 1, n - 2, n - 1)
            origins = ((0, 0), (n - 1, 0), (n - 1, n), (0, n))
            dirs = ((1, 0), (0, 1), (-1, 0), (0, -1))
    elif level == 2:
        if a == "l":
            core = frozenset((x, y) for x in range(1, n + 1) for y in range(1, n - 2))
            nmax = (n, n - 3, n, n - 3)
            origins = ((0, 0), (n + 1, 0), (n + 1, n - 2), (0, n - 2))
            dirs = ((1, 0), (0, 1), (-1, 0), (0, -1))
        else:
            core = frozenset((x, y) for x in range(1, n - 2) for y in range(1, n + 1))
            nmax = (n - 3, n, n - 3, n)
            origins = ((0, 0), (n - 2, 0), (n - 2, n + 1), (0, n + 1))
            dirs = ((1, 0), (0, 1), (-1, 0), (0, -1))
    else:
        raise ValueError("level must be 1 or 2")
    return _LoadGeometry(core, nmax, origins, dirs)


def load_sites(n: int, level: int, a: str, loads: SideLoads) -> frozenset[Coord]:
    geo = load_geometry(n, level, a)
    sites = set(geo.core)
    for i, (k, l) in enumerate(loads):
        for t in range(k, l + 1):
            sites.add(geo.pos(i, t))
    return frozenset(sites)


def loads_valid(n: int, level: int, a: str, loads: SideLoads) -> bool:
    """Range, corner-support and occupancy constraints for a load tuple."""
    geo = load_geometry(n, level, a)
    total = len(geo.core)
    for i, (k, l) in enumerate(loads):
        if not (0 <= k <= l <= geo.nmax[i]):
            return False
        total += l - k + 1
    for j in range(4):
        if loads[j][0] == 0 and loads[j - 1][1] != geo.nmax[j - 1]:
            return False
    return total == n * n


def side_counts(n: int, level: int, a: str, loads: SideLoads) -> tuple[int, int, int, int]:
    """Particles attached to each side; a corner counts for both sides it touches."""
    out = []
    for i in range(4):
        k, l = loads[i]
        m = l - k + 1
        if loads[(i + 1) % 4][0] == 0:
            m += 1
        out.append(m)
    return tuple(out)


def loads_in_star(n: int, level: int, a: str, loads: SideLoads) -> bool:
    return loads_valid(n, level, a, loads) and all(m >= 2 for m in side_counts(n, level, a, loads))


@lru_cache(maxsize=None)
def enumerate_load_tuples(n: int, level: int, a: str, star_only: bool = True) -> tuple:
    """All load tuples with total occupancy n^2 (optionally two-per-side only)."""
    if level == 2 and n < 4:
        return ()
    geo = load_geometry(n, level, a)
    need = n * n - len(geo.core)
    if need <= 0:
        return ()
    out = []
    n0, n1, n2, n3 = geo.nmax

    def side_ranges(nmax: int):
        return [(k, l) for k in range(nmax + 1) for l in range(k, nmax + 1)]

    r0, r1, r2, r3 = (side_ranges(m) for m in geo.nmax)
    for k0, l0 in r0:
        m0 = l0 - k0 + 1
        if m0 >= need:
            continue
        for k1, l1 in r1:
            m1 = m0 + l1 - k1 + 1
            if m1 >= need:
                continue
            if k1 == 0 and l0 != n0:
                continue
            for k2, l2 in r2:
                m2 = m1 + l2 - k2 + 1
                if m2 >= need:
                    continue
                if k2 == 0 and l1 != n1:
                    continue
                m3 = need - m2
                if m3 > n3 + 1:
                    continue
                for k3 in range(n3 - m3 + 2):
                    l3 = k3 + m3 - 1
                    if k3 == 0 and l2 != n2:
                        continue
                    if k0 == 0 and l3 != n3:
                        continue
                    loads = ((k0, l0), (k1, l1), (k2, l2), (k3, l3))
                    if star_only and not all(m >= 2 for m in side_counts(n, level, a, loads)):
                        continue
                    out.append(loads)
    return tuple(out)


# ---------------------------------------------------------------------------
# placement, unwrapping and representatives
# ---------------------------------------------------------------------------


def place(geometry: TorusGeometry, rel_sites: Iterable[Coord], anchor: Coord = (0, 0)) -> Configuration:
    return Configuration.from_sites(
        geometry, ((anchor[0] + x, anchor[1] + y) for (x, y) in rel_sites)
    )


def square_config(geometry: TorusGeometry, n: int, anchor: Coord = (0, 0)) -> Configuration:
    return place(geometry, square_sites(n), anchor)


def unwrap_sites(config: Configuration) -> tuple[list[Coord], Coord] | None:
    """Cluster coordinates in a wrap-free frame, plus the frame's torus origin.

    Requires an empty row and an empty column (always present for the
    droplet families when L > 2n); returns None otherwise.
    """
    g = config.geometry
    s = g.side
    occ2d = config.occ.reshape(s, s)
    empty_rows = np.nonzero(~occ2d.any(axis=1))[0]
    empty_cols = np.nonzero(~occ2d.any(axis=0))[0]
    if len(empty_rows) == 0 or len(empty_cols) == 0:
        return None
    r0 = int(empty_rows[0])
    c0 = int(empty_cols[0])
    base = ((r0 + 1) - g.L, (c0 + 1) - g.L)
    rel = []
    for idx in config.occupied_indices():
        i1, i2 = divmod(int(idx), s)
        rel.append(((i1 - r0 - 1) % s, (i2 - c0 - 1) % s))
    return rel, base


def build_representative(cls: DropletClass, params: SimulationParams) -> Configuration:
    """Exact configuration for a family label (validating its parameters)."""
    g = params.geometry
    n = params.n
    anchor = cls.anchor or (0, 0)
    if cls.kind is Kind.SQUARE:
        return place(g, square_sites(n), anchor)
    if cls.kind is Kind.QUASI_PLUS:
        if cls.extra not in side_positions(n, cls.corner, cls.side):
            raise ValueError(f"{cls.extra} is not an attachment site of side {cls.side}")
        return place(g, quasi_square_sites(n, cls.corner) | {cls.extra}, anchor)
    if cls.kind is Kind.RECT_PLUS:
        if cls.extra not in t_side_positions(n, cls.orientation, cls.side):
            raise ValueError(f"{cls.extra} is not an attachment site of side {cls.side}")
        return place(g, t_rect_sites(n, cls.orientation) | {cls.extra}, anchor)
    if cls.kind in (Kind.RECT_SIDES, Kind.RECT2_SIDES):
        level = 1 if cls.kind is Kind.RECT_SIDES else 2
        if not loads_in_star(n, level, cls.orientation, cls.loads):
            raise ValueError(f"invalid side loads {cls.loads}")
        return place(g, load_sites(n, level, cls.orientation, cls.loads), anchor)
    raise ValueError(f"cannot build a representative for kind {cls.kind}")


def representative_quasi(n: int, i: int, j: int) -> frozenset[Coord]:
    """Quasi-square i with its extra particle at the midpoint of side j."""
    return quasi_square_sites(n, i) | {w_star(n, j)}


def representative_rect(n: int, a: str, j: int) -> frozenset[Coord]:
    return t_rect_sites(n, a) | {w_star_t(n, a, j)}


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def _bbox(sites) -> tuple[int, int, int, int]:
    xs = [p[0] for p in sites]
    ys = [p[1] for p in sites]
    return min(xs), min(ys), max(xs), max(ys)


def _shift(sites, dx: int, dy: int) -> frozenset[Coord]:
    return frozenset((x + dx, y + dy) for (x, y) in sites)


def _match_quasi_plus(rel: frozenset[Coord], n: int):
    """(i, j, z, rel_anchor) if the cluster is a quasi-square plus one particle."""
    x0, y0, x1, y1 = _bbox(rel)
    w, h = x1 - x0 + 1, y1 - y0 + 1
    if {w, h} != {n, n + 1}:
        return None
    # the extra particle is alone on a protruding boundary row/column
    if w == n + 1:
        edges = [[p for p in rel if p[0] == x0], [p for p in rel if p[0] == x1]]
    else:
        edges = [[p for p in rel if p[1] == y0], [p for p in rel if p[1] == y1]]
    for edge in edges:
        if len(edge) != 1:
            continue
        z = edge[0]
        rest = rel - {z}
        bx0, by0, bx1, by1 = _bbox(rest)
        if (bx1 - bx0 + 1, by1 - by0 + 1) != (n, n):
            continue
        body = _shift(rest, -bx0, -by0)
        missing = square_sites(n) - body
        if len(missing) != 1:
            continue
        (miss,) = missing
        try:
            i = corners(n).index(miss)
        except ValueError:
            continue
        zrel = (z[0] - bx0, z[1] - by0)
        for j in range(4):
            if zrel in side_positions(n, i, j):
                return i, j, zrel, (bx0, by0)
    return None


def _match_rect_plus(rel: frozenset[Coord], n: int):
    x0, y0, x1, y1 = _bbox(rel)
    w, h = x1 - x0 + 1, y1 - y0 + 1
    candidates = []
    if (w, h) in ((n + 1, n), (n + 2, n - 1)):
        candidates.append("l")
    if (w, h) in ((n, n + 1), (n - 1, n + 2)):
        candidates.append("s")
    for a in candidates:
        for edge in (
            [p for p in rel if p[0] == x0],
            [p for p in rel if p[0] == x1],
            [p for p in rel if p[1] == y0],
            [p for p in rel if p[1] == y1],
        ):
            if len(edge) != 1:
                continue
            z = edge[0]
            rest = rel - {z}
            bx0, by0, _, _ = _bbox(rest)
            body = _shift(rest, -bx0, -by0)
            if body != t_rect_sites(n, a):
                continue
            zrel = (z[0] - bx0, z[1] - by0)
            for j in range(4):
                if zrel in t_side_positions(n, a, j):
                    return a, j, zrel, (bx0, by0)
    return None


def _match_side_loads(rel: frozenset[Coord], n: int, level: int):
    x0, y0, x1, y1 = _bbox(rel)
    w, h = x1 - x0 + 1, y1 - y0 + 1
    if level == 1:
        shapes = {"l": (n + 1, n), "s": (n, n + 1)}
    else:
        if n < 4:
            return None
        shapes = {"l": (n + 2, n - 1), "s": (n - 1, n + 2)}
    for a, dims in shapes.items():
        if (w, h) != dims:
            continue
        geo = load_geometry(n, level, a)
        body = _shift(rel, -x0, -y0)
        if not geo.core <= body:
            continue
        leftover = set(body - geo.core)
        loads = []
        ok = True
        for i in range(4):
            ts = sorted(t for t in range(geo.nmax[i] + 1) if geo.pos(i, t) in leftover)
            if not ts or ts != list(range(ts[0], ts[-1] + 1)):
                ok = False
                break
            loads.append((ts[0], ts[-1]))
            for t in ts:
                leftover.discard(geo.pos(i, t))
        if not ok or leftover:
            continue
        loads = tuple(loads)
        if not loads_in_star(n, level, a, loads):
            continue
        return a, loads, (x0, y0)
    return None


def classify(config: Configuration, params: SimulationParams, resolve_plateau: bool = False) -> DropletClass:
    """Family membership of a configuration (exact, by shape matching).

    Configurations outside the five families are labelled by their energy
    shell, with shells beyond 2 collapsed to OTHER.  With
    ``resolve_plateau`` set, shell-2 configurations connected to the
    families are labelled PLATEAU with the pair of family levels they join.
    """
    n = params.n
    if config.K != params.K:
        raise ValueError(f"expected K = n^2 = {params.K} particles, got {config.K}")
    shell = hamiltonian(config) - params.h_min
    if shell >= 3 or shell < 0:
        return DropletClass(Kind.OTHER, shell=shell)
    unwrapped = unwrap_sites(config)
    if unwrapped is None:
        return DropletClass(Kind.SHELL if shell in (1, 2) else Kind.OTHER, shell=shell)
    rel_list, base = unwrapped
    rel = frozenset(rel_list)
    g = config.geometry

    def abs_anchor(rel_anchor: Coord) -> Coord:
        return g.wrap((base[0] + rel_anchor[0], base[1] + rel_anchor[1]))

    if shell == 0:
        x0, y0, x1, y1 = _bbox(rel)
        if (x1 - x0 + 1, y1 - y0 + 1) == (n, n):
            return DropletClass(Kind.SQUARE, anchor=abs_anchor((x0, y0)))
        return DropletClass(Kind.SHELL, shell=0)
    if shell == 1:
        m = _match_quasi_plus(rel, n)
        if m is not None:
            i, j, z, ra = m
            return DropletClass(Kind.QUASI_PLUS, anchor=abs_anchor(ra), corner=i, side=j, extra=z)
        m = _match_rect_plus(rel, n)
        if m is not None:
            a, j, z, ra = m
            return DropletClass(Kind.RECT_PLUS, anchor=abs_anchor(ra), orientation=a, side=j, extra=z)
        m = _match_side_loads(rel, n, 1)
        if m is not None:
            a, loads, ra = m
            return DropletClass(Kind.RECT_SIDES, anchor=abs_anchor(ra), orientation=a, loads=loads)
        m = _match_side_loads(rel, n, 2)
        if m is not None:
            a, loads, ra = m
            return DropletClass(Kind.RECT2_SIDES, anchor=abs_anchor(ra), orientation=a, loads=loads)
        return DropletClass(Kind.SHELL, shell=1)
    # shell == 2
    if resolve_plateau:
        seg = _plateau_segment(config, params)
        if seg is not None:
            return DropletClass(Kind.PLATEAU, shell=2, segment=seg)
    return DropletClass(Kind.SHELL, shell=2)


def in_family(config: Configuration, params: SimulationParams) -> bool:
    return classify(config, params).kind in FAMILY_KINDS


# ---------------------------------------------------------------------------
# plateau membership (operational)
# ---------------------------------------------------------------------------

_FAMILY_LEVEL = {
    Kind.SQUARE: 0,
    Kind.QUASI_PLUS: 1,
    Kind.RECT_SIDES: 2,
    Kind.RECT_PLUS: 3,
    Kind.RECT2_SIDES: 4,
}


def _flat_closure(config: Configuration, params: SimulationParams, max_states: int):
    """All configurations reachable through zero-energy exchanges."""
    seen = {config.key(): config}
    frontier = [config]
    while frontier:
        cur = frontier.pop()
        for mv in enumerate_active_moves(cur):
            if mv.delta_h != 0:
                continue
            nxt = exchange(cur, mv.bond)
            k = nxt.key()
            if k not in seen:
                if len(seen) >= max_states:
                    raise RuntimeError("flat closure exceeded the state cap")
                seen[k] = nxt
                frontier.append(nxt)
    return list(seen.values())


def _plateau_segment(config: Configuration, params: SimulationParams, max_states: int = 250_000):
    """Pair of family levels a shell-2 plateau connects, or None.

    A shell-2 configuration belongs to a crossing plateau when some
    configuration in its flat (zero-energy) component has a single
    energy-lowering exchange into one of the families; the plateau label is
    inferred from the deepest family level it touches.
    """
    levels = set()
    for state in _flat_closure(config, params, max_states):
        for mv in enumerate_active_moves(state):
            if mv.delta_h != -1:
                continue
            target = exchange(state, mv.bond)
            k = classify(target, params).kind
            if k in _FAMILY_LEVEL:
                levels.add(_FAMILY_LEVEL[k])
    if not levels:
        return None
    hi = max(levels)
    return (hi - 1, hi)


def is_in_xi_star(config: Configuration, params: SimulationParams, max_states: int = 250_000) -> bool:
    """Membership in the confinement set: the families plus their crossing plateaus.

    Shell-2 membership is operational: the configuration must be reachable
    from a family configuration by one uphill exchange followed by
    zero-energy exchanges, which is detected by searching the flat component
    for an energy-lowering exchange back into a family.
    """
    shell = hamiltonian(config) - params.h_min
    if shell == 0:
        return classify(config, params).kind is Kind.SQUARE
    if shell == 1:
        return in_family(config, params)
    if shell == 2:
        return _plateau_segment(config, params, max_states) is not None
    return False


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------


def class_labels(n: int) -> list[tuple]:
    """All quotient-class labels at particle number n^2, ground state first."""
    labels: list[tuple] = [("sq",)]
    for i in range(4):
        for j in range(4):
            labels.append(("o1", i, j, w_star(n, j)))
    for a in ("l", "s"):
        for loads in enumerate_load_tuples(n, 1, a):
            labels.append(("o2", a, loads))
    for a in ("l", "s"):
        for j in range(4):
            labels.append(("o3", a, j, w_star_t(n, a, j)))
    for a in ("l", "s"):
        for loads in enumerate_load_tuples(n, 2, a):
            labels.append(("o4", a, loads))
    return labels


def label_sites(label: tuple, n: int) -> frozenset[Coord]:
    """Relative occupied sites of a class label at anchor 0."""
    tag = label[0]
    if tag == "sq":
        return square_sites(n)
    if tag == "o1":
        _, i, j, z = label
        return quasi_square_sites(n, i) | {z}
    if tag == "o2":
        _, a, loads = label
        return load_sites(n, 1, a, loads)
    if tag == "o3":
        _, a, j, z = label
        return t_rect_sites(n, a) | {z}
    if tag == "o4":
        _, a, loads = label
        return load_sites(n, 2, a, loads)
    raise ValueError(f"unknown label {label}")


def label_of_class(cls: DropletClass) -> tuple:
    if cls.kind is Kind.SQUARE:
        return ("sq",)
    if cls.kind is Kind.QUASI_PLUS:
        return ("o1", cls.corner, cls.side, cls.extra)
    if cls.kind is Kind.RECT_SIDES:
        return ("o2", cls.orientation, cls.loads)
    if cls.kind is Kind.RECT_PLUS:
        return ("o3", cls.orientation, cls.side, cls.extra)
    if cls.kind is Kind.RECT2_SIDES:
        return ("o4", cls.orientation, cls.loads)
    raise ValueError(f"{cls.kind} is not a family member")


def enumerate_family(family: str, n: int, L: int) -> Iterator[Configuration]:
    """Exhaustive, duplicate-free enumeration of a family on the torus.

    ``family`` is one of 'gamma', 'omega1_hat', 'omega2', 'omega3_hat',
    'omega4', 'xi' (the union of the previous five).
    """
    g = TorusGeometry(L)
    if family == "xi":
        for fam in ("gamma", "omega1_hat", "omega2", "omega3_hat", "omega4"):
            yield from enumerate_family(fam, n, L)
        return
    rel_shapes: list[frozenset[Coord]] = []
    if family == "gamma":
        rel_shapes.append(square_sites(n))
    elif family == "omega1_hat":
        for i in range(4):
            for j in range(4):
                rel_shapes.append(representative_quasi(n, i, j))
    elif family == "omega2":
        for a in ("l", "s"):
            for loads in enumerate_load_tuples(n, 1, a):
                rel_shapes.append(load_sites(n, 1, a, loads))
    elif family == "omega3_hat":
        for a in ("l", "s"):
            for j in range(4):
                rel_shapes.append(representative_rect(n, a, j))
    elif family == "omega4":
        for a in ("l", "s"):
            for loads in enumerate_load_tuples(n, 2, a):
                rel_shapes.append(load_sites(n, 2, a, loads))
    else:
        raise ValueError(f"unknown family {family!r}")
    for x1 in range(-L, L + 1):
        for x2 in range(-L, L + 1):
            for shape in rel_shapes:
                yield place(g, shape, (x1, x2))


def family_size(family: str, n: int, L: int) -> int:
    per_anchor = {
        "gamma": 1,
        "omega1_hat": 16,
        "omega2": len(enumerate_load_tuples(n, 1, "l")) + len(enumerate_load_tuples(n, 1, "s")),
        "omega3_hat": 8,
        "omega4": len(enumerate_load_tuples(n, 2, "l")) + len(enumerate_load_tuples(n, 2, "s")),
    }
    if family == "xi":
        return (2 * L + 1) ** 2 * sum(per_anchor.values())
    return (2 * L + 1) ** 2 * per_anchor[family]


# ---------------------------------------------------------------------------
# translation quotient and center of mass
# ---------------------------------------------------------------------------


def canonicalize(config: Configuration) -> QuotientClass:
    """Lexicographically minimal translate plus the offset of the original.

    Two configurations get the same canonical form exactly when one is a
    torus translate of the other.
    """
    g = config.geometry
    s = g.side
    occupied = [divmod(int(i), s) for i in config.occupied_indices()]
    if not occupied:
        return QuotientClass(config.copy(), (0, 0))
    best = None
    best_t = None
    for (t1, t2) in occupied:
        cand = tuple(sorted((((a - t1) % s) * s + (b - t2) % s) for (a, b) in occupied))
        if best is None or cand < best:
            best = cand
            best_t = (t1, t2)
    occ = np.zeros(g.nsites, dtype=np.uint8)
    occ[list(best)] = 1
    offset = g.wrap((best_t[0] - g.L, best_t[1] - g.L))
    # canonical translated by offset reproduces the original
    return QuotientClass(Configuration(g, occ), offset)


def _components(config: Configuration) -> list[list[int]]:
    g = config.geometry
    occ = config.occ
    nbr = g.neighbor_table
    seen: set[int] = set()
    comps = []
    for start in config.occupied_indices():
        start = int(start)
        if start in seen:
            continue
        comp = [start]
        seen.add(start)
        stack = [start]
        while stack:
            u = stack.pop()
            for v in nbr[u]:
                v = int(v)
                if occ[v] and v not in seen:
                    seen.add(v)
                    comp.append(v)
                    stack.append(v)
        comps.append(comp)
    return comps


def center_of_mass(
    config: Configuration, params: SimulationParams, in_xi_star_hint: bool | None = None
) -> np.ndarray:
    """Center of mass of the largest connected droplet, torus-unwrapped.

    Detached stray particles (smaller components) are ignored; the unwrap
    frame is anchored at the component's lexicographically minimal site so
    the result is translation-equivariant up to full torus wraps.
    Configurations outside the confinement set map to the zero sentinel.
    """
    member = is_in_xi_star(config, params) if in_xi_star_hint is None else in_xi_star_hint
    if not member:
        return np.zeros(2)
    g = config.geometry
    comps = _components(config)
    comps.sort(key=lambda c: (-len(c), min(c)))
    comp = comps[0]
    anchor = min(comp)
    coords = {anchor: g.coord(anchor)}
    stack = [anchor]
    occ_set = set(comp)
    nbr = g.neighbor_table
    steps = ((1, 0), (-1, 0), (0, 1), (0, -1))
    while stack:
        u = stack.pop()
        cu = coords[u]
        for axis in range(4):
            v = int(nbr[u, axis])
            if v in occ_set and v not in coords:
                coords[v] = (cu[0] + steps[axis][0], cu[1] + steps[axis][1])
                stack.append(v)
    arr = np.array([coords[u] for u in comp], dtype=float)
    return arr.mean(axis=0)
