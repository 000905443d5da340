"""Event-driven samplers: the microscopic exchange chain and its limit chain.

The microscopic sampler is rejection free.  Active bonds are kept in four
buckets by the positive part of their energy jump (the only rate classes
that exist are 1, e^-b, e^-2b, e^-3b); an event draws a bucket
proportionally to ``count * weight``, a member uniformly inside it, and
updates only the O(1) bonds whose energy jump the exchange can change.
This is what keeps the sampler usable at large inverse temperature, where
naive proposals would reject almost surely.

The limit sampler drives the shape chain of the rate table directly on the
translation quotient while tracking the anchor displacement, so droplet
trajectories at arbitrary inverse temperature cost one table lookup per
event.

Clocks use compensated summation: horizons grow like e^{2b} and plain
accumulation would lose the small holding times.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import droplet
from .droplet import Kind, w_star, w_star_t
from .lattice import Configuration, Coord, SimulationParams, TorusGeometry
from .plateau import RateTable
from .rng import SeedStream

CHECKPOINT_EVERY = 1 << 16
_INACTIVE = -99


@dataclass
class StopCondition:
    """When to stop a run: fixed horizon, event cap, or a state predicate.

    The predicate is evaluated after each event, so with ``require_change``
    (the default) it implements return times: the chain must move at least
    once before the predicate can stop it.
    """

    horizon: float | None = None
    max_events: int | None = None
    predicate: Callable | None = None
    require_change: bool = True


@dataclass
class Trajectory:
    """Time-stamped event log of one run."""

    kind: str  # 'eta' | 'zeta-hat' | 'trace'
    beta: float
    initial: object
    times: list = field(default_factory=list)
    events: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)  # (event_index, state_hash)
    total_time: float = 0.0
    final: object = None
    master_seed: int | None = None
    stream: int | None = None
    stopped_by: str = "horizon"

    @property
    def n_events(self) -> int:
        return len(self.times)


def config_hash(occ: bytes | bytearray) -> int:
    return zlib.crc32(bytes(occ))


class _Clock:
    """Kahan-compensated accumulating clock."""

    __slots__ = ("t", "_c")

    def __init__(self):
        self.t = 0.0
        self._c = 0.0

    def advance(self, dt: float) -> float:
        y = dt - self._c
        s = self.t + y
        self._c = (s - self.t) - y
        self.t = s
        return self.t


class EtaEngine:
    """Rejection-free sampler of the microscopic exchange dynamics."""

    def __init__(
        self,
        params: SimulationParams,
        start: Configuration,
        stream: SeedStream,
        beta: float | None = None,
    ):
        self.params = params
        self.beta = params.beta if beta is None else beta
        g = params.geometry
        self.geometry = g
        nbr = g.neighbor_table
        self.nbr = [tuple(int(v) for v in row) for row in nbr]
        # bond 2s is {s, s+e1}; bond 2s+1 is {s, s+e2}
        self.bond_other = [0] * (2 * g.nsites)
        self.incident = []
        for s in range(g.nsites):
            self.bond_other[2 * s] = self.nbr[s][0]
            self.bond_other[2 * s + 1] = self.nbr[s][2]
            self.incident.append(
                (2 * s, 2 * s + 1, 2 * self.nbr[s][1], 2 * self.nbr[s][3] + 1)
            )
        self.weights = [math.exp(-self.beta * c) for c in range(4)]
        # bonds whose energy jump an exchange across b can change, fixed order
        self.affected: list[tuple[int, ...]] = []
        for b in range(2 * g.nsites):
            s, t = b >> 1, self.bond_other[b]
            touched = set()
            for site in (s, t, *self.nbr[s], *self.nbr[t]):
                touched.update(self.incident[site])
            self.affected.append(tuple(sorted(touched)))
        self.stream = stream
        self.reset(start)

    # -- state bookkeeping -------------------------------------------------

    def reset(self, start: Configuration) -> None:
        g = self.geometry
        self.occ = bytearray(bytes(start.occ))
        self.occupied = {int(i) for i in start.occupied_indices()}
        from .lattice import hamiltonian

        self.H = hamiltonian(start)
        self.clock = _Clock()
        self.n_events = 0
        self.bucket: list[list[int]] = [[], [], [], []]
        self.bond_dh = [_INACTIVE] * (2 * g.nsites)
        self.bond_pos = [0] * (2 * g.nsites)
        scanned = set()
        for p in self.occupied:
            for b in self.incident[p]:
                if b not in scanned:
                    scanned.add(b)
                    dh = self._compute_dh(b)
                    if dh != _INACTIVE:
                        self._bucket_add(b, dh)

    def _compute_dh(self, b: int) -> int:
        """Signed energy jump of a bond, or the inactive sentinel."""
        s = b >> 1
        t = self.bond_other[b]
        occ = self.occ
        os_, ot = occ[s], occ[t]
        if os_ == ot:
            return _INACTIVE
        p, q = (s, t) if os_ else (t, s)
        a, c, d, e = self.nbr[p]
        np_ = occ[a] + occ[c] + occ[d] + occ[e]
        a, c, d, e = self.nbr[q]
        nq = occ[a] + occ[c] + occ[d] + occ[e] - 1
        return np_ - nq

    def _bucket_add(self, b: int, dh: int) -> None:
        lst = self.bucket[dh if dh > 0 else 0]
        self.bond_pos[b] = len(lst)
        lst.append(b)
        self.bond_dh[b] = dh

    def _bucket_remove(self, b: int) -> None:
        dh = self.bond_dh[b]
        lst = self.bucket[dh if dh > 0 else 0]
        i = self.bond_pos[b]
        last = lst[-1]
        lst[i] = last
        self.bond_pos[last] = i
        lst.pop()
        self.bond_dh[b] = _INACTIVE

    def total_rate(self) -> float:
        w = self.weights
        bk = self.bucket
        return len(bk[0]) * w[0] + len(bk[1]) * w[1] + len(bk[2]) * w[2] + len(bk[3]) * w[3]

    def config(self) -> Configuration:
        return Configuration(self.geometry, np.frombuffer(bytes(self.occ), dtype=np.uint8).copy())

    def state_hash(self) -> int:
        return config_hash(self.occ)

    # -- stepping ------------------------------------------------------------

    def execute_bond(self, b: int) -> None:
        """Apply one exchange and refresh the affected bond classes."""
        s = b >> 1
        other = self.bond_other
        t = other[b]
        occ = self.occ
        self.H += self.bond_dh[b]
        occ[s], occ[t] = occ[t], occ[s]
        if occ[s]:
            self.occupied.add(s)
            self.occupied.discard(t)
        else:
            self.occupied.add(t)
            self.occupied.discard(s)
        nbr = self.nbr
        bond_dh = self.bond_dh
        bond_pos = self.bond_pos
        bucket = self.bucket
        for bb in self.affected[b]:
            s2 = bb >> 1
            t2 = other[bb]
            o1 = occ[s2]
            if o1 == occ[t2]:
                dh2 = _INACTIVE
            else:
                p, q = (s2, t2) if o1 else (t2, s2)
                a, c, d, e = nbr[p]
                np_ = occ[a] + occ[c] + occ[d] + occ[e]
                a, c, d, e = nbr[q]
                dh2 = np_ - (occ[a] + occ[c] + occ[d] + occ[e] - 1)
            old = bond_dh[bb]
            if dh2 == old:
                continue
            if old != _INACTIVE:
                c_old = old if old > 0 else 0
                if dh2 != _INACTIVE and (dh2 if dh2 > 0 else 0) == c_old:
                    bond_dh[bb] = dh2  # same bucket, only the sign bookkeeping
                    continue
                lst = bucket[c_old]
                i = bond_pos[bb]
                last = lst[-1]
                lst[i] = last
                bond_pos[last] = i
                lst.pop()
                bond_dh[bb] = _INACTIVE
            if dh2 != _INACTIVE:
                lst = bucket[dh2 if dh2 > 0 else 0]
                bond_pos[bb] = len(lst)
                lst.append(bb)
                bond_dh[bb] = dh2

    def step(self):
        """One event: returns (time, bond) or None when no move is possible."""
        R = self.total_rate()
        if R <= 0.0:
            return None
        dt = self.stream.exponential() / R
        u = self.stream.uniform() * R
        w = self.weights
        c = 0
        acc = len(self.bucket[0]) * w[0]
        while u >= acc and c < 3:
            c += 1
            acc += len(self.bucket[c]) * w[c]
        lst = self.bucket[c]
        b = lst[self.stream.randint(len(lst))]
        t = self.clock.advance(dt)
        self.execute_bond(b)
        self.n_events += 1
        return t, b

    def run(
        self,
        stop: StopCondition,
        record: bool = True,
        observer: Callable | None = None,
    ) -> Trajectory:
        traj = Trajectory(
            kind="eta",
            beta=self.beta,
            initial=sorted(self.occupied),
            master_seed=self.stream.master_seed,
            stream=self.stream.stream,
        )
        if record:
            traj.checkpoints.append((0, self.state_hash()))
        while True:
            if stop.max_events is not None and self.n_events >= stop.max_events:
                traj.stopped_by = "events"
                break
            R = self.total_rate()
            if R <= 0.0:
                if stop.horizon is not None:
                    self.clock.advance(stop.horizon - self.clock.t)
                traj.stopped_by = "absorbed"
                break
            dt = self.stream.exponential() / R
            if stop.horizon is not None and self.clock.t + dt > stop.horizon:
                self.clock.advance(stop.horizon - self.clock.t)
                traj.stopped_by = "horizon"
                break
            u = self.stream.uniform() * R
            w = self.weights
            c = 0
            acc = len(self.bucket[0]) * w[0]
            while u >= acc and c < 3:
                c += 1
                acc += len(self.bucket[c]) * w[c]
            lst = self.bucket[c]
            b = lst[self.stream.randint(len(lst))]
            t = self.clock.advance(dt)
            self.execute_bond(b)
            self.n_events += 1
            if record:
                traj.times.append(t)
                traj.events.append(b)
                if self.n_events % CHECKPOINT_EVERY == 0:
                    traj.checkpoints.append((self.n_events, self.state_hash()))
            if observer is not None:
                observer(self, t, b)
            if stop.predicate is not None and stop.predicate(self):
                traj.stopped_by = "predicate"
                break
        traj.total_time = self.clock.t
        traj.final = sorted(self.occupied)
        if record:
            traj.checkpoints.append((self.n_events, self.state_hash()))
        return traj


def replay_eta(traj: Trajectory, params: SimulationParams) -> bool:
    """Re-apply an event log and verify every checkpoint hash."""
    g = params.geometry
    occ = np.zeros(g.nsites, dtype=np.uint8)
    occ[list(traj.initial)] = 1
    occ = bytearray(bytes(occ))
    bond_other = {}
    nbr = g.neighbor_table
    cks = dict(traj.checkpoints)
    if 0 in cks and config_hash(occ) != cks[0]:
        return False
    for i, b in enumerate(traj.events, start=1):
        s = b >> 1
        t = int(nbr[s, 0]) if b % 2 == 0 else int(nbr[s, 2])
        occ[s], occ[t] = occ[t], occ[s]
        if i in cks and config_hash(occ) != cks[i]:
            return False
    last = traj.checkpoints[-1][0] if traj.checkpoints else 0
    if last == len(traj.events) and traj.checkpoints:
        return config_hash(occ) == traj.checkpoints[-1][1]
    return True


# ---------------------------------------------------------------------------
# stop predicates
# ---------------------------------------------------------------------------


def in_gamma(engine: EtaEngine) -> bool:
    return engine.H == engine.params.h_min


def make_xi_predicate(params: SimulationParams) -> Callable:
    """Membership test for the shape-chain state space.

    Squares and whole side-load families belong; attachment families only
    through their midpoint representatives.
    """
    n = params.n

    def pred(engine: EtaEngine) -> bool:
        shell = engine.H - params.h_min
        if shell == 0:
            return True
        if shell != 1:
            return False
        cls = droplet.classify(engine.config(), params)
        if cls.kind in (Kind.RECT_SIDES, Kind.RECT2_SIDES):
            return True
        if cls.kind is Kind.QUASI_PLUS:
            return cls.extra == w_star(n, cls.side)
        if cls.kind is Kind.RECT_PLUS:
            return cls.extra == w_star_t(n, cls.orientation, cls.side)
        return False

    return pred


def xi_state_label(config: Configuration, params: SimulationParams):
    """(class label, anchor) of a shape-chain state, or None outside it."""
    n = params.n
    cls = droplet.classify(config, params)
    if cls.kind is Kind.SQUARE:
        return ("sq",), cls.anchor
    if cls.kind is Kind.QUASI_PLUS and cls.extra == w_star(n, cls.side):
        return ("o1", cls.corner, cls.side, cls.extra), cls.anchor
    if cls.kind is Kind.RECT_PLUS and cls.extra == w_star_t(n, cls.orientation, cls.side):
        return ("o3", cls.orientation, cls.side, cls.extra), cls.anchor
    if cls.kind is Kind.RECT_SIDES:
        return ("o2", cls.orientation, cls.loads), cls.anchor
    if cls.kind is Kind.RECT2_SIDES:
        return ("o4", cls.orientation, cls.loads), cls.anchor
    return None


# ---------------------------------------------------------------------------
# trace extraction
# ---------------------------------------------------------------------------


def trace(
    traj: Trajectory,
    params: SimulationParams,
    subset: Callable[[Configuration, SimulationParams], object],
) -> Trajectory:
    """Trace of a microscopic trajectory on a subset.

    ``subset(config, params)`` returns a hashable state representation when
    the configuration belongs to the subset and None outside it.  The trace
    clock accumulates only inside the subset; excursions collapse to
    instantaneous jumps (an excursion returning to the same state is
    invisible, as it should be).
    """
    if traj.kind != "eta":
        raise ValueError("can only trace microscopic trajectories")
    g = params.geometry
    occ = np.zeros(g.nsites, dtype=np.uint8)
    occ[list(traj.initial)] = 1
    config = Configuration(g, occ)
    nbr = g.neighbor_table

    out = Trajectory(kind="trace", beta=traj.beta, initial=None, master_seed=traj.master_seed, stream=traj.stream)
    clock = _Clock()
    cur_repr = subset(config, params)
    out.initial = cur_repr
    inside = cur_repr is not None
    if not inside:
        raise ValueError("trace must start inside the subset")
    prev_t = 0.0
    visited = True
    for t, b in zip(traj.times, traj.events):
        if inside:
            clock.advance(t - prev_t)
        prev_t = t
        s = b >> 1
        u = int(nbr[s, 0]) if b % 2 == 0 else int(nbr[s, 2])
        o = config.occ
        o[s], o[u] = o[u], o[s]
        rep = subset(config, params)
        if rep is not None:
            if not inside or rep != cur_repr:
                out.times.append(clock.t)
                out.events.append(rep)
                cur_repr = rep
            inside = True
        else:
            inside = False
    if inside:
        clock.advance(traj.total_time - prev_t)
    out.total_time = clock.t
    out.final = cur_repr
    out.stopped_by = traj.stopped_by
    return out


def gamma_subset(config: Configuration, params: SimulationParams):
    """Anchor of a square configuration, None otherwise."""
    from .lattice import hamiltonian

    if hamiltonian(config) != params.h_min:
        return None
    cls = droplet.classify(config, params)
    return cls.anchor if cls.kind is Kind.SQUARE else None


def xi_subset(config: Configuration, params: SimulationParams):
    return xi_state_label(config, params)


# ---------------------------------------------------------------------------
# the table-driven shape chain
# ---------------------------------------------------------------------------


class ZetaHatEngine:
    """Exact sampler of the limit shape chain from a rate table.

    States are (class, anchor); the anchor displacement is tracked
    unwrapped on Z^2 so diffusive rescalings do not alias through the
    torus.  Inverse temperature enters only through the two prefactors.
    """

    def __init__(self, table: RateTable, beta: float, stream: SeedStream, start: tuple | None = None):
        self.table = table
        self.beta = beta
        self.stream = stream
        self.rows = []
        self.totals = []
        pf = [math.exp(-beta * table.prefactor_exponent(c)) for c in range(table.n_classes)]
        for c in range(table.n_classes):
            row = table.row(c)
            if not row:
                raise RuntimeError(f"class {table.labels[c]} has no exits")
            cum = []
            acc = 0.0
            for (tid, off, r) in row:
                acc += r * pf[c]
                cum.append(acc)
            self.rows.append(row)
            self.totals.append((cum, acc))
        self.reset(start or (0, (0, 0)))

    def reset(self, start: tuple) -> None:
        self.cls, self.offset = start[0], tuple(start[1])
        self.clock = _Clock()
        self.n_events = 0

    def holding_rate(self) -> float:
        return self.totals[self.cls][1]

    def step(self):
        cum, total = self.totals[self.cls]
        dt = self.stream.exponential() / total
        k = self.stream.choice_cumulative(cum, total)
        tid, doff, _ = self.rows[self.cls][k]
        self.cls = tid
        self.offset = (self.offset[0] + doff[0], self.offset[1] + doff[1])
        t = self.clock.advance(dt)
        self.n_events += 1
        return t, (tid, self.offset)

    def run(self, stop: StopCondition, record: bool = True, observer: Callable | None = None) -> Trajectory:
        traj = Trajectory(
            kind="zeta-hat",
            beta=self.beta,
            initial=(self.cls, self.offset),
            master_seed=self.stream.master_seed,
            stream=self.stream.stream,
        )
        while True:
            if stop.max_events is not None and self.n_events >= stop.max_events:
                traj.stopped_by = "events"
                break
            cum, total = self.totals[self.cls]
            dt = self.stream.exponential() / total
            if stop.horizon is not None and self.clock.t + dt > stop.horizon:
                self.clock.advance(stop.horizon - self.clock.t)
                traj.stopped_by = "horizon"
                break
            k = self.stream.choice_cumulative(cum, total)
            tid, doff, _ = self.rows[self.cls][k]
            self.cls = tid
            self.offset = (self.offset[0] + doff[0], self.offset[1] + doff[1])
            t = self.clock.advance(dt)
            self.n_events += 1
            if record:
                traj.times.append(t)
                traj.events.append((tid, self.offset))
            if observer is not None:
                observer(self, t, (tid, self.offset))
            if stop.predicate is not None and stop.predicate(self):
                traj.stopped_by = "predicate"
                break
        traj.total_time = self.clock.t
        traj.final = (self.cls, self.offset)
        return traj


def zeta_hat_displacement_path(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """(times, displacements) of the square-anchor walk of a shape-chain run.

    The walk moves only while the chain sits on the square class; the
    recorded positions are the anchors of the successive square visits.
    """
    if traj.kind != "zeta-hat":
        raise ValueError("expected a shape-chain trajectory")
    times = [0.0]
    pos = [traj.initial[1] if traj.initial[0] == 0 else (0, 0)]
    for t, (cls, off) in zip(traj.times, traj.events):
        if cls == 0 and off != pos[-1]:
            times.append(t)
            pos.append(off)
    return np.array(times), np.array(pos, dtype=float)


# ---------------------------------------------------------------------------
# replica drivers
# ---------------------------------------------------------------------------


@dataclass
class ReturnSample:
    """One first-return observation: elapsed time and landing state."""

    time: float
    landing: object


def eta_first_return_stats(
    params: SimulationParams,
    n_replicas: int,
    master_seed: int,
    start: Configuration | None = None,
    stream_base: int = 0,
    max_events: int = 2_000_000,
) -> list[ReturnSample]:
    """First returns of the microscopic chain to the shape-chain state space."""
    g = params.geometry
    start = start if start is not None else droplet.square_config(g, params.n)
    pred = make_xi_predicate(params)
    out = []
    for rep in range(n_replicas):
        eng = EtaEngine(params, start, SeedStream(master_seed, stream_base + rep))
        traj = eng.run(StopCondition(predicate=pred, max_events=max_events), record=False)
        if traj.stopped_by != "predicate":
            raise RuntimeError("first-return run hit the event cap")
        out.append(ReturnSample(time=traj.total_time, landing=xi_state_label(eng.config(), params)))
    return out


def zeta_hat_first_return_stats(
    table: RateTable,
    beta: float,
    n_replicas: int,
    master_seed: int,
    stream_base: int = 0,
    max_events: int = 10_000_000,
) -> list[ReturnSample]:
    """First returns of the shape chain to the square family, with displacement."""
    out = []
    for rep in range(n_replicas):
        eng = ZetaHatEngine(table, beta, SeedStream(master_seed, stream_base + rep))
        traj = eng.run(
            StopCondition(predicate=lambda e: e.cls == 0, max_events=max_events), record=False
        )
        if traj.stopped_by != "predicate":
            raise RuntimeError("first-return run hit the event cap")
        out.append(ReturnSample(time=traj.total_time, landing=eng.offset))
    return out


# ---------------------------------------------------------------------------
# finite-temperature trace rates and the coupling
# ---------------------------------------------------------------------------


class TraceRateSolver:
    """Finite-temperature jump rates of the trace on the shape-chain space.

    The trace of the microscopic chain on the shape-chain state space is
    itself Markov; its jump rates out of a state are solved exactly by an
    absorption computation over the excursion space, truncated at a shell
    cap above the ground energy (moves beyond the cap are collected in a
    leak bound).  Rows are computed per class at anchor 0 and translated.
    """

    def __init__(self, params: SimulationParams, shell_cap: int = 2, max_states: int = 300_000):
        self.params = params
        self.beta = params.beta
        self.geometry = params.geometry
        self.nbr = [tuple(int(v) for v in row) for row in self.geometry.neighbor_table]
        self.shell_cap = shell_cap
        self.max_states = max_states
        self._rows: dict[tuple, tuple[dict, float]] = {}

    def _idxset(self, rel_sites) -> frozenset[int]:
        g = self.geometry
        return frozenset(g.index(z) for z in rel_sites)

    def _moves(self, idxset):
        nbr = self.nbr
        out = []
        for p in idxset:
            n_p = 0
            vac = []
            for u in nbr[p]:
                if u in idxset:
                    n_p += 1
                else:
                    vac.append(u)
            for u in vac:
                n_u = -1
                for v in nbr[u]:
                    if v in idxset:
                        n_u += 1
                out.append((p, u, n_p - n_u))
        return out

    def row(self, label: tuple) -> tuple[dict, float]:
        """(rates, leak): trace rates out of ``label`` at anchor 0.

        ``rates`` maps (target label, anchor offset) to the finite-beta
        trace rate; ``leak`` bounds the total rate unaccounted for by the
        shell truncation.
        """
        if label in self._rows:
            return self._rows[label]
        from .chains import FiniteChain, absorption_distribution
        from .lattice import hamiltonian

        params = self.params
        beta = self.beta
        hmin = params.h_min
        cap = hmin + self.shell_cap
        start = self._idxset(droplet.label_sites(label, params.n))
        h_start = hamiltonian(Configuration(self.geometry, self._occ_array(start)))
        chain = FiniteChain()
        groups: dict = {start: "self"}
        seen = {start}
        stack = [(start, h_start)]
        while stack:
            cur, H = stack.pop()
            for (p, u, dh) in self._moves(cur):
                nxt = frozenset((cur - {p}) | {u})
                rate = math.exp(-beta * dh) if dh > 0 else 1.0
                chain.add(cur, nxt, rate)
                if nxt in groups or nxt in seen:
                    continue
                H2 = H + dh
                lab = self._xi_label(nxt) if H2 <= hmin + 1 else None
                if lab is not None:
                    groups[nxt] = lab
                elif H2 > cap:
                    groups[nxt] = "leak"
                else:
                    if len(seen) >= self.max_states:
                        raise RuntimeError("trace-rate excursion space exceeded the cap")
                    seen.add(nxt)
                    stack.append((nxt, H2))
        dist = absorption_distribution(chain, groups)
        rates: dict = {}
        leak = 0.0
        for t, r in chain.rates[start].items():
            target_rows = {groups[t]: 1.0} if t in groups else dist[t]
            for lab, p in target_rows.items():
                if lab == "leak":
                    leak += r * p
                elif lab != "self":  # excursions back to the start are not jumps
                    rates[lab] = rates.get(lab, 0.0) + r * p
        self._rows[label] = (rates, leak)
        return self._rows[label]

    def _occ_array(self, idxset):
        occ = np.zeros(self.geometry.nsites, dtype=np.uint8)
        occ[list(idxset)] = 1
        return occ

    def _xi_label(self, idxset):
        cfg = Configuration(self.geometry, self._occ_array(idxset))
        return xi_state_label(cfg, self.params)


@dataclass
class CoupledRun:
    """Outcome of one coupled run of the trace chain and the limit chain."""

    t_separation: float | None
    horizon: float
    alpha_observed: float
    leak_bound: float
    n_joint_jumps: int


def couple_trace_and_limit(
    params: SimulationParams,
    table: RateTable,
    stream: SeedStream,
    horizon: float,
    trace_solver: TraceRateSolver | None = None,
    start: tuple | None = None,
) -> CoupledRun:
    """Maximal-overlap coupling of the finite-temperature trace chain and
    the limit chain.

    While the two chains agree, moves shared by both rate tables fire
    together at the minimum of the two rates; the residual rates fire
    independently and the first residual event is the separation time.
    """
    beta = params.beta
    solver = trace_solver or TraceRateSolver(params)
    state = start or (("sq",), (0, 0))
    label, offset = state
    t = _Clock()
    alpha_obs = 0.0
    leak_bound = 0.0
    njumps = 0
    pf = {1: math.exp(-beta), 2: math.exp(-2 * beta)}
    while True:
        r_trace, leak = solver.row(label)
        leak_bound = max(leak_bound, leak)
        cls_id = table.label_index[label]
        scale = pf[table.prefactor_exponent(cls_id)]
        r_limit = {}
        for (tid, off, r) in table.row(cls_id):
            r_limit[(table.labels[tid], off)] = r * scale
        keys = sorted(set(r_trace) | set(r_limit), key=repr)
        shared, res1, res2 = [], [], []
        s_tot = r1_tot = r2_tot = 0.0
        for k in keys:
            a = r_trace.get(k, 0.0)
            b = r_limit.get(k, 0.0)
            m = min(a, b)
            if m > 0:
                shared.append((k, m))
                s_tot += m
            if a - m > 0:
                res1.append((k, a - m))
                r1_tot += a - m
            if b - m > 0:
                res2.append((k, b - m))
                r2_tot += b - m
        alpha_obs = max(alpha_obs, r1_tot + r2_tot + leak)
        total = s_tot + r1_tot + r2_tot + leak
        dt = stream.exponential() / total
        if t.t + dt > horizon:
            return CoupledRun(None, horizon, alpha_obs, leak_bound, njumps)
        t.advance(dt)
        u = stream.uniform() * total
        if u >= s_tot:
            # residual or leak event: the chains separate
            return CoupledRun(t.t, horizon, alpha_obs, leak_bound, njumps)
        acc = 0.0
        chosen = None
        for k, m in shared:
            acc += m
            if u < acc:
                chosen = k
                break
        lab2, off = chosen
        label = lab2
        offset = (offset[0] + off[0], offset[1] + off[1])
        njumps += 1
