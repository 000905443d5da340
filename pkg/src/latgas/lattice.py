"""Torus geometry, particle configurations, energy and exchange moves.

The model lives on the square torus ``{-L, ..., L}^2`` (side ``2L+1``).  A
configuration is an occupancy field with a conserved number ``K`` of
particles; its energy is minus the number of nearest-neighbour occupied
pairs.  Particles move by exchanging occupancies across a bond, with
Metropolis rates ``exp(-beta * max(dH, 0))``.

Only four distinct positive energy jumps can occur for a single exchange
(``dH`` is always in {-3, ..., 3}), which is what makes bucketed
rejection-free sampling possible downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np

Coord = tuple[int, int]

E1: Coord = (1, 0)
E2: Coord = (0, 1)


@lru_cache(maxsize=None)
def _geometry_tables(L: int):
    side = 2 * L + 1
    n = side * side
    idx = np.arange(n)
    x1 = idx // side
    x2 = idx % side
    nbr = np.empty((n, 4), dtype=np.int64)
    # order: +e1, -e1, +e2, -e2
    nbr[:, 0] = ((x1 + 1) % side) * side + x2
    nbr[:, 1] = ((x1 - 1) % side) * side + x2
    nbr[:, 2] = x1 * side + (x2 + 1) % side
    nbr[:, 3] = x1 * side + (x2 - 1) % side
    return nbr


@dataclass(frozen=True)
class TorusGeometry:
    """Square torus of side ``2L+1`` with periodic wrap.

    Sites are indexed row-major over coordinates shifted to ``{0, ..., 2L}``;
    neighbour lookups go through a precomputed table so the hot paths are
    branch free.
    """

    L: int

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")

    @property
    def side(self) -> int:
        return 2 * self.L + 1

    @property
    def nsites(self) -> int:
        return self.side * self.side

    @property
    def nbonds(self) -> int:
        return 2 * self.nsites

    @property
    def neighbor_table(self) -> np.ndarray:
        """(nsites, 4) site indices in order +e1, -e1, +e2, -e2."""
        return _geometry_tables(self.L)

    def index(self, x: Coord) -> int:
        s = self.side
        return ((x[0] + self.L) % s) * s + (x[1] + self.L) % s

    def coord(self, idx: int) -> Coord:
        s = self.side
        return (idx // s - self.L, idx % s - self.L)

    def wrap(self, x: Coord) -> Coord:
        s = self.side
        return ((x[0] + self.L) % s - self.L, (x[1] + self.L) % s - self.L)

    def neighbors(self, idx: int) -> Sequence[int]:
        return self.neighbor_table[idx]

    def bond_sites(self, bond: int) -> tuple[int, int]:
        """Endpoints of a bond id.  Bond ``2*s + a`` joins ``s`` and ``s + e_{a+1}``."""
        site, axis = divmod(bond, 2)
        return site, int(self.neighbor_table[site, axis])

    def bond_id(self, x: Coord, y: Coord) -> int:
        """Bond id of the unordered adjacent pair {x, y}."""
        ix, iy = self.index(x), self.index(y)
        nbr = self.neighbor_table
        if nbr[ix, 0] == iy:
            return 2 * ix
        if nbr[ix, 2] == iy:
            return 2 * ix + 1
        if nbr[iy, 0] == ix:
            return 2 * iy
        if nbr[iy, 2] == ix:
            return 2 * iy + 1
        raise ValueError(f"sites {x} and {y} are not adjacent on the torus")


class Configuration:
    """Value-like occupancy of the torus with a conserved particle count."""

    __slots__ = ("geometry", "occ", "K")

    def __init__(self, geometry: TorusGeometry, occ: np.ndarray):
        self.geometry = geometry
        self.occ = occ
        self.K = int(occ.sum())

    @classmethod
    def empty(cls, geometry: TorusGeometry) -> "Configuration":
        return cls(geometry, np.zeros(geometry.nsites, dtype=np.uint8))

    @classmethod
    def from_sites(cls, geometry: TorusGeometry, sites: Iterable[Coord]) -> "Configuration":
        occ = np.zeros(geometry.nsites, dtype=np.uint8)
        for x in sites:
            occ[geometry.index(x)] = 1
        return cls(geometry, occ)

    @classmethod
    def full(cls, geometry: TorusGeometry) -> "Configuration":
        return cls(geometry, np.ones(geometry.nsites, dtype=np.uint8))

    def copy(self) -> "Configuration":
        return Configuration(self.geometry, self.occ.copy())

    def key(self) -> bytes:
        """Hashable fingerprint of the occupancy."""
        return self.occ.tobytes()

    def occupied_indices(self) -> np.ndarray:
        return np.nonzero(self.occ)[0]

    def occupied_sites(self) -> list[Coord]:
        g = self.geometry
        return [g.coord(int(i)) for i in self.occupied_indices()]

    def is_occupied(self, x: Coord) -> bool:
        return bool(self.occ[self.geometry.index(x)])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Configuration)
            and self.geometry.L == other.geometry.L
            and np.array_equal(self.occ, other.occ)
        )

    def __hash__(self) -> int:
        return hash((self.geometry.L, self.key()))

    def __repr__(self) -> str:
        return f"Configuration(L={self.geometry.L}, K={self.K})"


@dataclass(frozen=True)
class SimulationParams:
    """Run parameters: inverse temperature, droplet side, torus half-side.

    ``L > 2n`` is required so that the ``n x n`` droplets are the unique
    energy minimizers; ``ell`` is the diffusive rescaling length used by the
    estimators (``1 <= ell <= L``).
    """

    beta: float
    n: int
    L: int
    ell: int | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("droplet side n must be >= 2")
        if self.L <= 2 * self.n:
            raise ValueError("need L > 2n for square droplets to be ground states")
        if self.ell is not None and not (1 <= self.ell <= self.L):
            raise ValueError("need 1 <= ell <= L")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @property
    def K(self) -> int:
        return self.n * self.n

    @property
    def geometry(self) -> TorusGeometry:
        return TorusGeometry(self.L)

    @property
    def h_min(self) -> int:
        return -2 * self.n * (self.n - 1)


@dataclass(frozen=True)
class Move:
    """An exchange across a bond together with its energy change."""

    bond: tuple[Coord, Coord]
    delta_h: int

    @property
    def rate_class(self) -> int:
        """Bucket index: the positive part of the energy jump (0..3)."""
        return max(self.delta_h, 0)


def hamiltonian(config: Configuration) -> int:
    """Energy: minus the number of occupied nearest-neighbour pairs."""
    g = config.geometry
    occ = config.occ
    nbr = g.neighbor_table
    # count each bond once through its +e1 / +e2 representative
    pairs = int((occ & occ[nbr[:, 0]]).sum() + (occ & occ[nbr[:, 2]]).sum())
    return -pairs


def _occupied_neighbor_count(config: Configuration, idx: int, exclude: int) -> int:
    occ = config.occ
    cnt = 0
    for u in config.geometry.neighbor_table[idx]:
        if u != exclude and occ[u]:
            cnt += 1
    return cnt


def delta_h(config: Configuration, bond: tuple[Coord, Coord]) -> int:
    """Energy change of exchanging the occupancies across ``bond``.

    Computed locally from the six sites surrounding the bond; the pair must
    be adjacent on the torus.
    """
    g = config.geometry
    x, y = bond
    ix, iy = g.index(x), g.index(y)
    if iy not in set(int(u) for u in g.neighbor_table[ix]):
        raise ValueError(f"bond {bond} is not a nearest-neighbour pair")
    ox, oy = int(config.occ[ix]), int(config.occ[iy])
    if ox == oy:
        return 0
    if ox == 0:
        ix, iy = iy, ix
    # particle at ix moves to vacant iy
    return _occupied_neighbor_count(config, ix, iy) - _occupied_neighbor_count(config, iy, ix)


def rate(config: Configuration, bond: tuple[Coord, Coord], beta: float) -> float:
    """Metropolis exchange rate ``exp(-beta * [dH]_+)``."""
    dh = delta_h(config, bond)
    if dh <= 0:
        return 1.0
    return float(np.exp(-beta * dh))


def exchange(config: Configuration, bond: tuple[Coord, Coord]) -> Configuration:
    """Configuration with the occupancies of the bond endpoints swapped."""
    g = config.geometry
    ix, iy = g.index(bond[0]), g.index(bond[1])
    if iy not in set(int(u) for u in g.neighbor_table[ix]):
        raise ValueError(f"bond {bond} is not a nearest-neighbour pair")
    out = config.copy()
    out.occ[ix], out.occ[iy] = out.occ[iy], out.occ[ix]
    return out


def enumerate_active_moves(config: Configuration) -> list[Move]:
    """All exchanges that change the configuration, with their energy jumps.

    A bond is active when exactly one endpoint is occupied.  The result is
    ordered by bond id so the enumeration is deterministic.
    """
    g = config.geometry
    occ = config.occ
    nbr = g.neighbor_table
    moves: list[Move] = []
    for site in range(g.nsites):
        for axis in (0, 2):
            other = int(nbr[site, axis])
            if occ[site] != occ[other]:
                p, q = (site, other) if occ[site] else (other, site)
                dh = _occupied_neighbor_count(config, p, q) - _occupied_neighbor_count(config, q, p)
                moves.append(Move((g.coord(site), g.coord(other)), dh))
    return moves


def moves_by_class(config: Configuration) -> dict[int, list[Move]]:
    """Active moves grouped by their rate bucket ``[dH]_+``."""
    groups: dict[int, list[Move]] = {}
    for mv in enumerate_active_moves(config):
        groups.setdefault(mv.rate_class, []).append(mv)
    return groups


def random_configuration(geometry: TorusGeometry, K: int, rng: np.random.Generator) -> Configuration:
    """Uniformly random configuration with exactly K particles."""
    occ = np.zeros(geometry.nsites, dtype=np.uint8)
    occ[rng.choice(geometry.nsites, size=K, replace=False)] = 1
    return Configuration(geometry, occ)


def translate(config: Configuration, shift: Coord) -> Configuration:
    """Configuration translated by ``shift`` on the torus."""
    g = config.geometry
    s = g.side
    occ2d = config.occ.reshape(s, s)
    occ2d = np.roll(occ2d, shift=(shift[0], shift[1]), axis=(0, 1))
    return Configuration(g, np.ascontiguousarray(occ2d.reshape(-1)))
