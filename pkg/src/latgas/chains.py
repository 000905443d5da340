"""Exact computations on finite continuous-time Markov chains.

Absorption distributions, hitting probabilities, mean hitting times,
equilibrium potentials and capacities, all by direct sparse linear solves
(scipy), with an optional exact-rational path (python Fractions, dense
Gaussian elimination) for small chains whose rates are rational.

Every absorption solve re-checks its residual; these solvers are the
product, not an approximation layer.
"""

from __future__ import annotations

from collections import defaultdict
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

State = Hashable

RESIDUAL_TOL = 1e-10


class FiniteChain:
    """A CTMC given by off-diagonal jump rates on hashable states."""

    def __init__(self):
        self.rates: dict[State, dict[State, float]] = defaultdict(dict)

    def add(self, s: State, t: State, r) -> None:
        if s == t or r == 0:
            return
        row = self.rates[s]
        row[t] = row.get(t, 0) + r
        self.rates.setdefault(t, {})

    def states(self) -> list[State]:
        return list(self.rates.keys())

    def holding_rate(self, s: State):
        return sum(self.rates[s].values())

    def jump_distribution(self, s: State) -> list[tuple[State, float]]:
        lam = self.holding_rate(s)
        return [(t, r / lam) for t, r in self.rates[s].items()]


def _lu_solve_checked(A: sp.spmatrix, B: np.ndarray) -> np.ndarray:
    lu = spla.splu(A.tocsc())
    X = lu.solve(B)
    resid = abs(A @ X - B).max() if B.size else 0.0
    if resid > RESIDUAL_TOL * max(1.0, abs(B).max()):
        raise RuntimeError(f"linear solve residual {resid:.3e} exceeds tolerance")
    return X


def _fraction_solve(A: list[list[Fraction]], B: list[list[Fraction]]) -> list[list[Fraction]]:
    """Dense Gaussian elimination over the rationals (A is modified)."""
    m = len(A)
    ncols = len(B[0]) if m else 0
    for col in range(m):
        piv = next((r for r in range(col, m) if A[r][col] != 0), None)
        if piv is None:
            raise RuntimeError("singular rational system")
        if piv != col:
            A[col], A[piv] = A[piv], A[col]
            B[col], B[piv] = B[piv], B[col]
        inv = Fraction(1, 1) / A[col][col]
        A[col] = [a * inv for a in A[col]]
        B[col] = [b * inv for b in B[col]]
        for r in range(m):
            if r != col and A[r][col] != 0:
                f = A[r][col]
                A[r] = [a - f * c for a, c in zip(A[r], A[col])]
                B[r] = [b - f * c for b, c in zip(B[r], B[col])]
    return B


def absorption_distribution(
    chain: FiniteChain,
    absorbing: Mapping[State, Hashable] | Iterable[State],
    exact: bool = False,
):
    """Distribution of the absorption state, per transient start.

    ``absorbing`` maps absorbing states to group keys (or is a plain
    iterable, in which case each state is its own group).  Every transient
    state must reach the absorbing set.  Returns
    ``{start: {group: probability}}``.
    """
    if not isinstance(absorbing, Mapping):
        absorbing = {s: s for s in absorbing}
    transient = [s for s in chain.states() if s not in absorbing]
    groups = sorted(set(absorbing.values()), key=repr)
    gidx = {g: k for k, g in enumerate(groups)}
    tidx = {s: k for k, s in enumerate(transient)}
    m = len(transient)
    if m == 0:
        return {}
    if exact:
        A = [[Fraction(0) for _ in range(m)] for _ in range(m)]
        B = [[Fraction(0) for _ in range(len(groups))] for _ in range(m)]
        for s in transient:
            i = tidx[s]
            lam = Fraction(0)
            for t, r in chain.rates[s].items():
                r = Fraction(r)
                lam += r
                if t in tidx:
                    A[i][tidx[t]] -= r
                else:
                    B[i][gidx[absorbing[t]]] += r
            if lam == 0:
                raise RuntimeError(f"transient state {s!r} has no outgoing rate")
            A[i][i] += lam
        X = _fraction_solve(A, B)
        return {
            s: {g: X[tidx[s]][gidx[g]] for g in groups if X[tidx[s]][gidx[g]] != 0}
            for s in transient
        }
    rows, cols, vals = [], [], []
    B = np.zeros((m, len(groups)))
    for s in transient:
        i = tidx[s]
        lam = 0.0
        for t, r in chain.rates[s].items():
            r = float(r)
            lam += r
            if t in tidx:
                rows.append(i)
                cols.append(tidx[t])
                vals.append(-r)
            else:
                B[i, gidx[absorbing[t]]] += r
        if lam == 0.0:
            raise RuntimeError(f"transient state {s!r} has no outgoing rate")
        rows.append(i)
        cols.append(i)
        vals.append(lam)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(m, m))
    X = _lu_solve_checked(A, B)
    out = {}
    for s in transient:
        row = X[tidx[s]]
        out[s] = {g: float(row[gidx[g]]) for g in groups if row[gidx[g]] != 0.0}
    return out


def check_absorption_normalization(dist: Mapping, tol: float = 1e-12) -> float:
    """Largest deviation of the per-start masses from 1."""
    worst = 0.0
    for row in dist.values():
        worst = max(worst, abs(float(sum(row.values())) - 1.0))
    if worst > tol:
        raise RuntimeError(f"absorption masses deviate from 1 by {worst:.3e}")
    return worst


def hitting_probability(chain: FiniteChain, A: set, B: set, exact: bool = False):
    """P[H_A < H_B] for every state (1 on A, 0 on B)."""
    absorbing = {s: "A" for s in A} | {s: "B" for s in B}
    dist = absorption_distribution(chain, absorbing, exact=exact)
    zero = Fraction(0) if exact else 0.0
    out = {s: (Fraction(1) if exact else 1.0) for s in A}
    out |= {s: zero for s in B}
    for s, row in dist.items():
        out[s] = row.get("A", zero)
    return out


def mean_hitting_time(chain: FiniteChain, target: set):
    """E[H_target] per start, by the one-vector linear solve."""
    transient = [s for s in chain.states() if s not in target]
    tidx = {s: k for k, s in enumerate(transient)}
    m = len(transient)
    rows, cols, vals = [], [], []
    b = np.ones(m)
    for s in transient:
        i = tidx[s]
        lam = 0.0
        for t, r in chain.rates[s].items():
            lam += float(r)
            if t in tidx:
                rows.append(i)
                cols.append(tidx[t])
                vals.append(-float(r))
        if lam == 0.0:
            raise RuntimeError(f"state {s!r} cannot reach the target")
        rows.append(i)
        cols.append(i)
        vals.append(lam)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(m, m))
    x = _lu_solve_checked(A, b)
    out = {s: 0.0 for s in target}
    out |= {s: float(x[tidx[s]]) for s in transient}
    return out


def stationary_distribution(chain: FiniteChain) -> dict[State, float]:
    """Stationary law of an irreducible chain (dense null-space solve)."""
    states = chain.states()
    idx = {s: k for k, s in enumerate(states)}
    m = len(states)
    Q = np.zeros((m, m))
    for s in states:
        for t, r in chain.rates[s].items():
            Q[idx[s], idx[t]] += float(r)
            Q[idx[s], idx[s]] -= float(r)
    A = np.vstack([Q.T, np.ones(m)])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    if pi.min() < -1e-10:
        raise RuntimeError("negative stationary mass; chain not irreducible?")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    return {s: float(pi[idx[s]]) for s in states}


# ---------------------------------------------------------------------------
# capacities
# ---------------------------------------------------------------------------


def detailed_balance_violation(chain: FiniteChain, mu: Mapping[State, float]) -> float:
    worst = 0.0
    for s, row in chain.rates.items():
        for t, r in row.items():
            back = chain.rates[t].get(s, 0.0)
            num = abs(mu[s] * r - mu[t] * back)
            den = max(abs(mu[s] * r), abs(mu[t] * back), 1e-300)
            worst = max(worst, num / den)
    return worst


def capacity_exact(chain: FiniteChain, mu: Mapping[State, float], A: set, B: set) -> float:
    """cap(A, B) = sum_{s in A} mu(s) lambda(s) P_s[H_B < H_A^+].

    Valid for any chain (the equilibrium-potential solve does not assume
    reversibility).  Disconnected pairs yield 0.
    """
    h = hitting_probability(chain, A, B)
    cap = 0.0
    for s in A:
        for t, r in chain.rates[s].items():
            cap += float(mu[s]) * float(r) * (1.0 - float(h[t]))
    return cap


def dirichlet_form(chain: FiniteChain, mu: Mapping[State, float], f: Mapping[State, float]) -> float:
    d = 0.0
    for s, row in chain.rates.items():
        for t, r in row.items():
            d += 0.5 * float(mu[s]) * float(r) * (float(f[s]) - float(f[t])) ** 2
    return d


def capacity_dirichlet_upper(
    chain: FiniteChain, mu: Mapping[State, float], f: Mapping[State, float]
) -> float:
    """Dirichlet-principle upper bound from a test function (reversible chains)."""
    return dirichlet_form(chain, mu, f)


def capacity_thomson_lower(
    chain: FiniteChain, mu: Mapping[State, float], path: Sequence[State]
) -> float:
    """Thomson-principle lower bound from the unit flow along a path."""
    denom = 0.0
    for s, t in zip(path[:-1], path[1:]):
        r = chain.rates[s].get(t, 0.0)
        if r == 0.0:
            raise ValueError(f"path edge {s!r} -> {t!r} has zero rate")
        denom += 1.0 / (float(mu[s]) * float(r))
    return 1.0 / denom


# ---------------------------------------------------------------------------
# translation-covariant absorption (Fourier modes over the torus)
# ---------------------------------------------------------------------------


def displacement_absorption(
    n_classes: int,
    transitions: Mapping[int, Iterable[tuple[int, tuple[int, int], float]]],
    absorbing_class: int,
    side: int,
):
    """Displacement law at absorption for a translation-covariant chain.

    The chain lives on (class, anchor) with anchor on the ``side x side``
    torus and rates ``transitions[c] = [(c', (dx, dy), rate), ...]``
    independent of the anchor.  Absorption happens on ``absorbing_class`` at
    any anchor.  Diagonalizing over anchor Fourier modes reduces the hitting
    problem to one sparse solve per mode.

    Returns ``psi[c, dx, dy]``: starting from class ``c`` at anchor 0, the
    probability of being absorbed at anchor ``(dx, dy)`` (arrays indexed mod
    ``side``).
    """
    transient = [c for c in range(n_classes) if c != absorbing_class]
    tidx = {c: k for k, c in enumerate(transient)}
    m = len(transient)
    lam = np.zeros(m)
    entries = []  # (i, j_or_None, dx, dy, rate)
    for c in transient:
        i = tidx[c]
        for c2, (dx, dy), r in transitions[c]:
            lam[i] += r
            entries.append((i, tidx.get(c2), dx, dy, r))
    phi = np.zeros((m, side, side), dtype=complex)
    freqs = 2.0 * np.pi * np.fft.fftfreq(side)
    for a, tha in enumerate(freqs):
        for b, thb in enumerate(freqs):
            rows, cols, vals = [], [], []
            rhs = np.zeros(m, dtype=complex)
            for i in range(m):
                rows.append(i)
                cols.append(i)
                vals.append(lam[i] + 0j)
            for i, j, dx, dy, r in entries:
                w = r * np.exp(1j * (tha * dx + thb * dy))
                if j is None:
                    rhs[i] += w
                else:
                    rows.append(i)
                    cols.append(j)
                    vals.append(-w)
            A = sp.csc_matrix((vals, (rows, cols)), shape=(m, m), dtype=complex)
            phi[:, a, b] = _lu_solve_checked(A, rhs)
    # invert the transform: psi[c, d] = (1/side^2) sum_theta e^{-i theta.d} phi
    psi = np.fft.fft2(phi, axes=(1, 2)) / (side * side)
    psi = psi.real
    np.clip(psi, 0.0, None, out=psi)
    return transient, tidx, psi
