"""Derived statistics and exact potential theory for the droplet chains.

Two kinds of computations live here.  Exact ones solve linear systems on the
translation quotient of the shape chain: the first-return displacement law
of the square anchor (one sparse solve per torus Fourier mode), capacities
with their variational bracket, mean hitting times, and the geometric
decay constants of long jumps.  Statistical ones fold simulated
trajectories into estimators: the diffusion scale, quadratic variation,
largest rescaled jump, confinement fractions, and the center-of-mass
comparison.

Every estimator that has an exactly solvable counterpart is cross-checked
against it in the test suite; the exact solvers are the oracles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import droplet
from .chains import (
    FiniteChain,
    absorption_distribution,
    capacity_thomson_lower,
    displacement_absorption,
    mean_hitting_time,
    stationary_distribution,
)
from .droplet import Kind
from .engine import EtaEngine, StopCondition, Trajectory, _Clock
from .lattice import Configuration, Coord, SimulationParams, hamiltonian
from .plateau import RateTable, structured_sliding_path


# ---------------------------------------------------------------------------
# exact quotient-chain computations
# ---------------------------------------------------------------------------


def _class_transitions(table: RateTable):
    """Transitions of the embedded displacement chain, per transient class."""
    out = {}
    for c in range(table.n_classes):
        if c == 0:
            continue
        out[c] = [(tid, off, r) for (tid, off, r) in table.row(c)]
    return out


@dataclass
class ReturnLaw:
    """Exact law of the anchor displacement at the first return to a square."""

    table: RateTable
    psi: np.ndarray  # psi[dx % side, dy % side]
    side: int

    def prob(self, d: Coord) -> float:
        return float(self.psi[d[0] % self.side, d[1] % self.side])

    def prob_not_home(self) -> float:
        return 1.0 - self.prob((0, 0))

    def displacement_grid(self):
        """(dx, dy, p) with displacements as torus representatives."""
        L = (self.side - 1) // 2
        for a in range(self.side):
            for b in range(self.side):
                dx = (a + L) % self.side - L
                dy = (b + L) % self.side - L
                yield dx, dy, float(self.psi[a, b])

    def sum_norm_tail(self, k: int) -> float:
        """P[first return lands at sum-norm distance >= k]."""
        return sum(p for dx, dy, p in self.displacement_grid() if abs(dx) + abs(dy) >= k)

    def ring_mass(self, k: int) -> float:
        return sum(p for dx, dy, p in self.displacement_grid() if abs(dx) + abs(dy) == k)

    def mean_square(self) -> float:
        return sum((dx * dx + dy * dy) * p for dx, dy, p in self.displacement_grid())


def first_return_law(table: RateTable) -> ReturnLaw:
    """Solve the first-return displacement law of the shape chain exactly.

    The law of the embedded jump chain does not depend on the inverse
    temperature (off-square states all carry the same prefactor), so it is
    computed once per table.
    """
    side = 2 * table.L + 1
    transitions = _class_transitions(table)
    transient, tidx, psi = displacement_absorption(table.n_classes, transitions, 0, side)
    # fold in the first jump out of the square
    row0 = table.row(0)
    lam0 = sum(r for (_, _, r) in row0)
    out = np.zeros((side, side))
    for (tid, off, r) in row0:
        shifted = np.roll(psi[tidx[tid]], shift=off, axis=(0, 1))
        out += (r / lam0) * shifted
    total = out.sum()
    if abs(total - 1.0) > 1e-9:
        raise RuntimeError(f"return law mass {total} deviates from 1")
    return ReturnLaw(table=table, psi=out / total, side=side)


def theta_exact(table: RateTable, beta: float, law: ReturnLaw | None = None) -> float:
    """Exact diffusion time scale of the shape chain at one temperature."""
    law = law or first_return_law(table)
    lam = table.total_rate(0) * math.exp(-2.0 * beta)
    inv = lam * law.mean_square()
    return 1.0 / inv


@dataclass
class CapacityResult:
    """Capacity with its variational bracket, in per-weight normalized form.

    Values are the capacity divided by the weight of a single square state,
    with the common exp(-2 beta) prefactor split off: multiply by it to get
    the capacity at a concrete inverse temperature.
    """

    exact: float
    dirichlet_upper: float | None = None
    thomson_lower: float | None = None
    method: str = "exact solve"

    def bracket_ok(self, tol: float = 1e-10) -> bool:
        ok = True
        if self.dirichlet_upper is not None:
            ok &= self.exact <= self.dirichlet_upper * (1 + tol) + tol
        if self.thomson_lower is not None:
            ok &= self.thomson_lower <= self.exact * (1 + tol) + tol
        return ok


def square_capacity(table: RateTable, law: ReturnLaw | None = None) -> CapacityResult:
    """Normalized capacity between one square and all the others.

    exact  = lambda(square) P[first return lands on a different anchor]
    upper  = Dirichlet form of the indicator of the square's local cluster
    lower  = Thomson bound of the unit flow along the sliding path
    (all divided by exp(-2 beta) mu(square)).
    """
    law = law or first_return_law(table)
    lam0 = table.total_rate(0)
    exact = lam0 * law.prob_not_home()
    # Dirichlet: f = 1 on the square and its sixteen attachment states at
    # anchor 0, 0 elsewhere.  The square exits only into the cluster, so
    # only the attachment rows contribute.
    upper = 0.0
    local = {0}
    for k, lab in enumerate(table.labels):
        if lab[0] == "o1":
            local.add(k)
    for k in local - {0}:
        for (tid, off, r) in table.row(k):
            if tid not in local or off != (0, 0):
                upper += r
    path = structured_sliding_path(table)
    denom = sum(1.0 / r for (_, _, r) in path[1:])
    lower = 1.0 / denom
    return CapacityResult(exact=exact, dirichlet_upper=upper, thomson_lower=lower)


def two_set_capacity(chain: FiniteChain, mu, A: set, B: set) -> float:
    """Plain capacity of an explicit finite chain (used for small oracles)."""
    from .chains import capacity_exact

    return capacity_exact(chain, mu, A, B)


def mean_hitting_bound(table: RateTable, beta: float) -> dict:
    """Exact mean times to reach a square, per class, with the scale ratio.

    Offsets are irrelevant for hitting the square family, so the solve runs
    on bare classes.  The reported ratio divides the worst attachment-class
    mean by (number of classes) * exp(beta).
    """
    chain = FiniteChain()
    for c in range(1, table.n_classes):
        scale = math.exp(-beta * table.prefactor_exponent(c))
        for (tid, off, r) in table.row(c):
            chain.add(("c", c), "gamma" if tid == 0 else ("c", tid), r * scale)
    times = mean_hitting_time(chain, {"gamma"})
    per_class = {table.labels[c]: times.get(("c", c), 0.0) for c in range(1, table.n_classes)}
    worst_v = max(v for lab, v in per_class.items() if lab[0] == "o1")
    ratio = worst_v / (table.n_classes * math.exp(beta))
    return {"per_class": per_class, "worst_attachment": worst_v, "ratio": ratio}


@dataclass
class GammaRho:
    """Exact long-jump decay constants of the shape chain."""

    rho: float
    lying_escape: float  # worst P[reach a far lying-rectangle before the cluster family]
    gamma: float
    bracket: float  # width of the offset-truncation bracket
    radius: int


def gamma_rho_exact(table: RateTable, radius: int = 4, tol: float = 1e-9) -> GammaRho:
    """Decay constants by exact solves on the offset-truncated quotient.

    rho is the worst local-cluster escape probability; the second term is
    the worst probability, from a lying-rectangle state, of reaching a
    lying-rectangle at a different anchor before any square-cluster state.
    States beyond the offset radius absorb into a bracket that must close
    below ``tol`` (otherwise increase the radius).
    """
    from .plateau import local_exit_bound

    rho = local_exit_bound(table)
    lying = [k for k, lab in enumerate(table.labels) if lab[0] == "o3" and lab[1] == "l"]
    cluster = {0} | {k for k, lab in enumerate(table.labels) if lab[0] == "o1"}

    def solve(leak_wins: bool) -> float:
        chain = FiniteChain()
        seen = set()
        stack = [(c, (0, 0)) for c in range(1, table.n_classes)]
        # transient states: non-cluster classes, lying only at offset 0
        def is_absorbing(cls, off):
            if cls in cluster:
                return "G"
            if cls in lying and off != (0, 0):
                return "L"
            return None

        worst = 0.0
        for c, off in stack:
            seen.add((c, off))
        frontier = list(stack)
        while frontier:
            node = frontier.pop()
            cls, off = node
            if is_absorbing(cls, off):
                continue
            for (tid, doff, r) in table.row(cls):
                noff = (off[0] + doff[0], off[1] + doff[1])
                if max(abs(noff[0]), abs(noff[1])) > radius:
                    chain.add(node, "leak", r)
                    continue
                tgt = (tid, noff)
                lab = is_absorbing(tid, noff)
                chain.add(node, tgt, r)
                if lab is None and tgt not in seen:
                    seen.add(tgt)
                    frontier.append(tgt)
        groups = {}
        for s in list(chain.rates):
            if s == "leak":
                groups[s] = "L" if leak_wins else "G"
            elif isinstance(s, tuple) and isinstance(s[0], int):
                lab = is_absorbing(*s)
                if lab:
                    groups[s] = lab
        dist = absorption_distribution(chain, groups)
        return max(dist[(c, (0, 0))].get("L", 0.0) for c in lying)

    hi = solve(True)
    lo = solve(False)
    if hi - lo > tol:
        raise RuntimeError(f"offset truncation bracket {hi - lo:.3e} too wide; raise radius")
    esc = 0.5 * (hi + lo)
    return GammaRho(
        rho=rho,
        lying_escape=esc,
        gamma=rho + (1.0 - rho) * esc,
        bracket=hi - lo,
        radius=radius,
    )


def stationary_square_fraction(table: RateTable, beta: float) -> float:
    """Exact stationary time fraction the shape chain spends on squares."""
    chain = FiniteChain()
    for c in range(table.n_classes):
        scale = math.exp(-beta * table.prefactor_exponent(c))
        for (tid, off, r) in table.row(c):
            chain.add(c, tid, r * scale)
    pi = stationary_distribution(chain)
    return pi.get(0, 0.0)


# ---------------------------------------------------------------------------
# trajectory-based estimators
# ---------------------------------------------------------------------------


@dataclass
class AnchorPath:
    """Piecewise-constant anchor walk extracted from one trajectory.

    ``times[k]`` is the trace-clock instant of the k-th anchor jump;
    ``positions[k]`` the anchor after it (``positions[0]`` at time 0).
    ``total_time`` is the full trace clock; ``gamma_time`` the time charged
    to square states (equal to ``total_time`` for square-trace paths).
    """

    times: np.ndarray
    positions: np.ndarray
    total_time: float
    gamma_time: float
    n_excursions: int

    def displacements(self) -> np.ndarray:
        return np.diff(self.positions, axis=0)

    def position_at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.positions[max(k, 0)]


def anchor_path_from_zeta_hat(traj: Trajectory) -> AnchorPath:
    """Anchor walk of a shape-chain run, clocked by square sojourn time.

    Off-square excursion time is excised (the walk is the trace on the
    square family); each square visit contributes its holding time and each
    return at a new anchor one jump.
    """
    if traj.kind != "zeta-hat":
        raise ValueError("expected a shape-chain trajectory")
    cls, off = traj.initial
    if cls != 0:
        raise ValueError("anchor walk must start on a square")
    times = [0.0]
    pos = [off]
    clock = 0.0
    prev_t = 0.0
    inside = True
    n_exc = 0
    cur = off
    for t, (c2, off2) in zip(traj.times, traj.events):
        if inside:
            clock += t - prev_t
        prev_t = t
        if c2 == 0:
            if not inside:
                n_exc += 1
                if off2 != cur:
                    times.append(clock)
                    pos.append(off2)
                    cur = off2
            inside = True
        else:
            inside = False
    if inside:
        clock += traj.total_time - prev_t
    return AnchorPath(
        times=np.array(times),
        positions=np.array(pos, dtype=float),
        total_time=clock,
        gamma_time=clock,
        n_excursions=n_exc,
    )


def anchor_path_from_gamma_trace(gtrace: Trajectory, params: SimulationParams) -> AnchorPath:
    """Anchor walk from a square-family trace of the microscopic chain.

    Consecutive anchor jumps are short, so torus crossings are unwrapped by
    taking the minimal representative of each jump.
    """
    if gtrace.kind != "trace":
        raise ValueError("expected a trace trajectory")
    side = params.geometry.side
    L = params.L
    cur = np.array(gtrace.initial, dtype=float)
    prev_anchor = gtrace.initial
    times = [0.0]
    pos = [cur.copy()]
    for t, anchor in zip(gtrace.times, gtrace.events):
        dx = (anchor[0] - prev_anchor[0] + L) % side - L
        dy = (anchor[1] - prev_anchor[1] + L) % side - L
        cur = cur + (dx, dy)
        prev_anchor = anchor
        times.append(t)
        pos.append(cur.copy())
    return AnchorPath(
        times=np.array(times),
        positions=np.array(pos),
        total_time=gtrace.total_time,
        gamma_time=gtrace.total_time,
        n_excursions=len(times) - 1,
    )


@dataclass
class ThetaEstimate:
    """Diffusion time scale with its two estimators and their errors."""

    theta: float
    inv_msd: float
    inv_msd_se: float
    inv_return: float
    inv_return_se: float
    n_paths: int

    def consistent(self, nsigma: float = 3.0) -> bool:
        se = math.hypot(self.inv_msd_se, self.inv_return_se)
        return abs(self.inv_msd - self.inv_return) <= nsigma * se


def estimate_theta(paths: Sequence[AnchorPath]) -> ThetaEstimate:
    """Two estimators of the inverse diffusion scale, cross-checkable.

    (a) mean-square displacement over the path clock; (b) holding rate
    times the mean-square jump, accumulated over excursions.  Both target
    the same sum-rule; their agreement is a consistency check of the run.
    """
    msd = []
    ret = []
    for p in paths:
        if p.total_time <= 0 or len(p.positions) < 2:
            raise ValueError("path has no jumps; not enough data for the estimators")
        if p.n_excursions < 10:
            raise ValueError("fewer than 10 returns in a path; not enough data")
        d = p.positions[-1] - p.positions[0]
        msd.append(float(d @ d) / p.total_time)
        ret.append(float((p.displacements() ** 2).sum()) / p.total_time)
    msd = np.array(msd)
    ret = np.array(ret)
    inv_msd = float(msd.mean())
    inv_ret = float(ret.mean())
    return ThetaEstimate(
        theta=1.0 / inv_ret,
        inv_msd=inv_msd,
        inv_msd_se=float(msd.std(ddof=1) / math.sqrt(len(msd))) if len(msd) > 1 else 0.0,
        inv_return=inv_ret,
        inv_return_se=float(ret.std(ddof=1) / math.sqrt(len(ret))) if len(ret) > 1 else 0.0,
        n_paths=len(paths),
    )


def quadratic_variation(
    paths: Sequence[AnchorPath], ell: float, theta: float, grid: Sequence[float]
):
    """Empirical quadratic (co)variation of the rescaled anchor walk.

    Z(t) = X(t ell^2 theta) / ell; entries are the running sums of
    dZ_i dZ_j at the grid times.  Returns (grid, mean matrix path, se
    matrix path) with shape (len(grid), 2, 2).
    """
    grid = np.asarray(grid, dtype=float)
    out = np.zeros((len(paths), len(grid), 2, 2))
    scale = ell * ell * theta
    for k, p in enumerate(paths):
        d = p.displacements() / ell
        tj = p.times[1:] / scale
        for g, t in enumerate(grid):
            sel = tj <= t
            dd = d[sel]
            out[k, g, 0, 0] = (dd[:, 0] ** 2).sum()
            out[k, g, 1, 1] = (dd[:, 1] ** 2).sum()
            out[k, g, 0, 1] = out[k, g, 1, 0] = (dd[:, 0] * dd[:, 1]).sum()
    mean = out.mean(axis=0)
    se = out.std(axis=0, ddof=1) / math.sqrt(len(paths)) if len(paths) > 1 else np.zeros_like(mean)
    return grid, mean, se


def max_rescaled_jump(path: AnchorPath, ell: float, theta: float, t_max: float) -> float:
    """Largest rescaled single jump of the anchor walk up to time t_max."""
    horizon = t_max * ell * ell * theta
    d = path.displacements()
    sel = path.times[1:] <= horizon
    if not sel.any():
        return 0.0
    return float(np.sqrt((d[sel] ** 2).sum(axis=1)).max()) / ell


def increments(paths: Sequence[AnchorPath], ell: float, theta: float, t0: float, t1: float):
    """Rescaled anchor increments Z(t1) - Z(t0) across replicas."""
    scale = ell * ell * theta
    out = np.empty((len(paths), 2))
    for k, p in enumerate(paths):
        out[k] = (p.position_at(t1 * scale) - p.position_at(t0 * scale)) / ell
    return out


# ---------------------------------------------------------------------------
# confinement tracking for the microscopic chain
# ---------------------------------------------------------------------------


class ConfinementTracker:
    """Online membership tracking for the confinement set along a run.

    Level-1 states are classified by shape; level-2 states inherit
    membership through the move structure (an uphill entry from a member is
    a member, flat moves preserve membership) with a reachability fallback
    for the rare ambiguous entries (descents from higher shells or entries
    from non-member level-1 states).
    """

    def __init__(self, params: SimulationParams, engine: EtaEngine):
        self.params = params
        self.h_min = params.h_min
        self.prev_t = 0.0
        self.time_outside_xistar = 0.0
        self.time_outside_gamma = 0.0
        self.first_exit: float | None = None
        self._family_cache: dict[bytes, bool] = {}
        self._plateau_cache: dict[bytes, bool] = {}
        self.in_xistar = True
        self.shell = engine.H - self.h_min
        if self.shell != 0:
            self._recompute(engine)

    def _family_member(self, engine: EtaEngine) -> bool:
        key = bytes(engine.occ)
        hit = self._family_cache.get(key)
        if hit is None:
            hit = droplet.classify(engine.config(), self.params).kind in droplet.FAMILY_KINDS
            if len(self._family_cache) < 200_000:
                self._family_cache[key] = hit
        return hit

    def _plateau_member(self, engine: EtaEngine) -> bool:
        key = bytes(engine.occ)
        hit = self._plateau_cache.get(key)
        if hit is None:
            hit = droplet._plateau_segment(engine.config(), self.params) is not None
            if len(self._plateau_cache) < 10_000:
                self._plateau_cache[key] = hit
        return hit

    def _recompute(self, engine: EtaEngine) -> None:
        shell = engine.H - self.h_min
        if shell == 0:
            self.in_xistar = True
        elif shell == 1:
            self.in_xistar = self._family_member(engine)
        elif shell == 2:
            self.in_xistar = self._plateau_member(engine)
        else:
            self.in_xistar = False
        self.shell = shell

    def __call__(self, engine: EtaEngine, t: float, bond: int) -> None:
        dt = t - self.prev_t
        if self.shell != 0:
            self.time_outside_gamma += dt
        if not self.in_xistar:
            self.time_outside_xistar += dt
        self.prev_t = t
        new_shell = engine.H - self.h_min
        if new_shell == 0:
            self.in_xistar = True
        elif new_shell == 1:
            self.in_xistar = self._family_member(engine)
        elif new_shell == 2:
            if self.shell <= 1 and self.in_xistar:
                pass  # uphill entry from a member: still a member
            elif self.shell == 2:
                pass  # flat move inside the plateau
            else:
                self.in_xistar = self._plateau_member(engine)
        else:
            self.in_xistar = False
        self.shell = new_shell
        if not self.in_xistar and self.first_exit is None:
            self.first_exit = t

    def finish(self, horizon: float) -> None:
        dt = horizon - self.prev_t
        if dt > 0:
            if self.shell != 0:
                self.time_outside_gamma += dt
            if not self.in_xistar:
                self.time_outside_xistar += dt
            self.prev_t = horizon


@dataclass
class ConfinementResult:
    frac_outside_xistar: float
    frac_outside_gamma: float
    exited: bool
    first_exit: float | None
    horizon: float


def confinement_fractions(
    params: SimulationParams,
    start: Configuration,
    horizon: float,
    stream,
    max_events: int | None = None,
) -> ConfinementResult:
    """Run the microscopic chain and track confinement over one horizon."""
    engine = EtaEngine(params, start, stream)
    tracker = ConfinementTracker(params, engine)
    engine.run(StopCondition(horizon=horizon, max_events=max_events), record=False, observer=tracker)
    tracker.finish(engine.clock.t)
    return ConfinementResult(
        frac_outside_xistar=tracker.time_outside_xistar / engine.clock.t,
        frac_outside_gamma=tracker.time_outside_gamma / engine.clock.t,
        exited=tracker.first_exit is not None,
        first_exit=tracker.first_exit,
        horizon=engine.clock.t,
    )


# ---------------------------------------------------------------------------
# center-of-mass comparison
# ---------------------------------------------------------------------------


@dataclass
class CenterOfMassComparison:
    sup_discrepancy: float  # rescaled by ell
    time_change_overshoot: float  # out-of-square time per unit horizon
    worst_excursion_wander: float  # unrescaled, largest in-excursion drift
    horizon: float


def center_of_mass_compare(
    traj: Trajectory, params: SimulationParams, ell: float
) -> CenterOfMassComparison:
    """Compare the raw droplet center of mass with the square-anchor path.

    Replays a microscopic trajectory; at every event the center of the
    largest particle cluster is compared with the center implied by the
    last visited square.  The supremum is reported rescaled by ell,
    together with the total out-of-square time (the overshoot of the trace
    time change) and the worst unrescaled in-excursion drift.
    """
    g = params.geometry
    occ = np.zeros(g.nsites, dtype=np.uint8)
    occ[list(traj.initial)] = 1
    config = Configuration(g, occ)
    nbr = g.neighbor_table
    if hamiltonian(config) != params.h_min:
        raise ValueError("comparison must start from a square")
    center_off = (params.n - 1) / 2.0

    def raw_center(cfg) -> np.ndarray:
        return droplet.center_of_mass(cfg, params, in_xi_star_hint=True)

    anchor = droplet.classify(config, params).anchor
    anchor_center = np.array(anchor, dtype=float) + center_off
    # track torus unwrap of the anchor path
    unwrap = np.zeros(2)
    sup = 0.0
    worst_wander = 0.0
    exc_start_center = None
    out_time = 0.0
    prev_t = 0.0
    side = g.side
    h = hamiltonian(config)
    hmin = params.h_min
    for t, b in zip(traj.times, traj.events):
        if h != hmin:
            out_time += t - prev_t
        prev_t = t
        s = b >> 1
        u = int(nbr[s, 0]) if b % 2 == 0 else int(nbr[s, 2])
        from .lattice import delta_h

        h += delta_h(config, (g.coord(s), g.coord(u)))
        o = config.occ
        o[s], o[u] = o[u], o[s]
        if h == hmin:
            cls = droplet.classify(config, params)
            new_anchor = cls.anchor
            d = np.array(
                [
                    (new_anchor[0] - anchor[0] + g.L) % side - g.L,
                    (new_anchor[1] - anchor[1] + g.L) % side - g.L,
                ],
                dtype=float,
            )
            unwrap += d
            anchor = new_anchor
            anchor_center = np.array(anchor, dtype=float) + center_off
            exc_start_center = None
        else:
            if h - hmin <= 2:
                c = raw_center(config)
                if exc_start_center is None:
                    exc_start_center = c
                disc = np.linalg.norm(_torus_vec(c - anchor_center, side))
                sup = max(sup, disc)
                wander = np.linalg.norm(_torus_vec(c - exc_start_center, side))
                worst_wander = max(worst_wander, wander)
    return CenterOfMassComparison(
        sup_discrepancy=sup / ell,
        time_change_overshoot=out_time / traj.total_time if traj.total_time > 0 else 0.0,
        worst_excursion_wander=worst_wander,
        horizon=traj.total_time,
    )


def _torus_vec(v: np.ndarray, side: int) -> np.ndarray:
    return (v + side / 2.0) % side - side / 2.0


# ---------------------------------------------------------------------------
# error budget and report
# ---------------------------------------------------------------------------


@dataclass
class ErrorBudget:
    """Nominal remainder scales and regime indicators of a parameter point.

    The constants in front of the remainders are not pinned by the theory;
    the budget reports the bare scales (unit constants) and flags whether
    each regime combination is small at the given threshold.
    """

    beta: float
    n: int
    L: int
    ell: int
    theta: float
    threshold: float = 0.5

    @property
    def kappa1(self) -> float:
        return self.L * math.exp(-self.beta / 2.0)

    @property
    def kappa2(self) -> float:
        return self.n**4 * math.exp(-self.beta) + self.n * self.L * math.exp(-self.beta / 2.0)

    @property
    def e_beta(self) -> float:
        n, L, b = self.n, self.L, self.beta
        return L * math.exp(-b / 2.0) + math.sqrt(
            n**7 * (n**4 * math.exp(-b) + n * L * math.exp(-b / 2.0))
        )

    def regime_values(self) -> dict:
        th2 = self.theta * math.exp(-2.0 * self.beta)
        return {
            "excursion_error": self.ell * self.L * th2 * self.e_beta,
            "long_jump": self.ell * (self.ell + self.n) * th2 * math.exp(-self.ell / self.n),
            "rate_error": self.n**4 * self.L**2 * math.exp(-self.beta),
            "refined_scale": (self.L / self.n) ** 2 * self.e_beta,
            "confinement": self.ell**2 * th2 * (self.n**8 + self.L**2) * math.exp(-self.beta),
        }

    def flags(self) -> dict:
        return {k: v < self.threshold for k, v in self.regime_values().items()}

    def as_dict(self) -> dict:
        return {
            "beta": self.beta,
            "n": self.n,
            "L": self.L,
            "ell": self.ell,
            "theta": self.theta,
            "kappa1": self.kappa1,
            "kappa2": self.kappa2,
            "e_beta": self.e_beta,
            "regime_values": self.regime_values(),
            "flags": self.flags(),
        }


@dataclass
class ScalingReport:
    """Bundle of estimators produced by one parameter point."""

    params: dict
    theta: ThetaEstimate | None = None
    theta_exact: float | None = None
    qv_grid: list = field(default_factory=list)
    qv_mean: list = field(default_factory=list)
    qv_se: list = field(default_factory=list)
    max_jump_median: dict = field(default_factory=dict)
    tail: list = field(default_factory=list)  # rows (k, empirical, exact, bound)
    confinement: list = field(default_factory=list)
    budget: dict | None = None
    meta: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        d = {
            "format": "latgas-scaling-report",
            "version": 1,
            "params": self.params,
            "theta_exact": self.theta_exact,
            "qv_grid": self.qv_grid,
            "qv_mean": self.qv_mean,
            "qv_se": self.qv_se,
            "max_jump_median": self.max_jump_median,
            "tail": self.tail,
            "confinement": self.confinement,
            "budget": self.budget,
            "meta": self.meta,
        }
        if self.theta is not None:
            d["theta"] = {
                "theta": self.theta.theta,
                "inv_msd": self.theta.inv_msd,
                "inv_msd_se": self.theta.inv_msd_se,
                "inv_return": self.theta.inv_return,
                "inv_return_se": self.theta.inv_return_se,
                "n_paths": self.theta.n_paths,
            }
        return d

    def dumps(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_json_dict(), indent=indent, sort_keys=True)
