"""Discretization geometry, field containers and deterministic random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "GridSpec",
    "Field",
    "RngStream",
    "make_grid",
    "dyadic_times",
    "is_power_of_two",
]


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Periodic spatial grid on ``[-L, L)`` with ``nz`` points and a uniform
    time mesh of ``nt`` steps on ``[0, T]``.

    Grid point ``j`` sits at ``z_j = -L + j * dz``; grid time ``k`` is
    ``t_k = k * T / nt``.
    """

    L: float
    nz: int
    T: float
    nt: int

    @property
    def dz(self) -> float:
        return 2.0 * self.L / self.nz

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @cached_property
    def z(self) -> np.ndarray:
        z = -self.L + np.arange(self.nz) * self.dz
        z.setflags(write=False)
        return z

    @cached_property
    def times(self) -> np.ndarray:
        t = np.array([self.time(k) for k in range(self.nt + 1)])
        t.setflags(write=False)
        return t

    @cached_property
    def xi(self) -> np.ndarray:
        """Angular frequencies of the ``rfft`` bins, ``pi * m / L``."""
        xi = np.pi * np.arange(self.nz // 2 + 1) / self.L
        xi.setflags(write=False)
        return xi

    def time(self, k: int) -> float:
        # multiply, never accumulate: nested dyadic meshes must line up exactly
        if k == self.nt:
            return float(self.T)
        return k * self.T / self.nt

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index ``k`` with ``t_k == t``; raises if ``t`` is off the mesh."""
        x = t * self.nt / self.T
        k = int(round(x))
        if abs(x - k) > tol * max(1.0, abs(x)) or not 0 <= k <= self.nt:
            raise ValueError(f"time {t!r} is not on the grid (dt={self.dt})")
        return k

    def point_index(self, z: float, tol: float = 1e-9) -> int:
        x = (z + self.L) / self.dz
        j = int(round(x))
        if abs(x - j) > tol * max(1.0, abs(x)) or not 0 <= j < self.nz:
            raise ValueError(f"point {z!r} is not on the grid (dz={self.dz})")
        return j

    def check_support(self, radius: float) -> None:
        """Enforce the tail-truncation rule ``L >= 4 sqrt(T) + radius``."""
        need = 4.0 * math.sqrt(self.T) + radius
        if self.L < need - 1e-12:
            raise ValueError(
                f"half width L={self.L} too small: need L >= 4*sqrt(T) + {radius} = {need:.4g}"
            )

    def coarsen(self, time_factor: int = 2, space_factor: int = 1) -> GridSpec:
        if self.nt % time_factor or self.nz % space_factor:
            raise ValueError("coarsening factors must divide nt and nz")
        return GridSpec(self.L, self.nz // space_factor, self.T, self.nt // time_factor)

    def restrict(self, T: float) -> GridSpec:
        """Same mesh truncated to the horizon ``T`` (which must be a grid time)."""
        k = self.index_of(T)
        return GridSpec(self.L, self.nz, self.time(k), k)


def make_grid(L: float, nz: int, T: float, nt: int) -> GridSpec:
    """Validated :class:`GridSpec`.

    >>> g = make_grid(8, 256, 1, 1000)
    >>> g.dz, g.dt
    (0.0625, 0.001)
    """
    if not is_power_of_two(nz):
        raise ValueError(f"nz must be a power of two, got {nz}")
    if not (isinstance(nt, (int, np.integer)) and nt > 0):
        raise ValueError(f"nt must be a positive integer, got {nt}")
    if not (L > 0 and T > 0):
        raise ValueError("L and T must be positive")
    g = GridSpec(float(L), int(nz), float(T), int(nt))
    g.check_support(0.0)
    return g


def dyadic_times(n: int, T: float = 1.0) -> list[float]:
    """The dyadic partition ``T * k * 2**-n`` for ``k = 0..2**n``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    m = 2**n
    return [T * k / m if k < m else float(T) for k in range(m + 1)]


@dataclass(frozen=True)
class Field:
    """Time-indexed stack of spatial slices on one grid.

    ``values[i]`` is the slice at grid step ``steps[i]``.
    """

    grid: GridSpec
    values: np.ndarray
    steps: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.nz:
            raise ValueError("slices must have length nz")
        if len(self.steps) != len(self.values):
            raise ValueError("one step index per slice")

    @property
    def times(self) -> np.ndarray:
        return np.array([self.grid.time(int(k)) for k in self.steps])

    def at_step(self, k: int) -> np.ndarray:
        idx = np.searchsorted(self.steps, k)
        if idx >= len(self.steps) or self.steps[idx] != k:
            raise KeyError(f"step {k} was not recorded")
        return self.values[idx]

    def at(self, t: float) -> np.ndarray:
        return self.at_step(self.grid.index_of(t))

    def __sub__(self, other: Field) -> Field:
        if self.grid != other.grid or not np.array_equal(self.steps, other.steps):
            raise ValueError("fields live on different grids")
        return Field(self.grid, self.values - other.values, self.steps.copy())


@dataclass(frozen=True)
class RngStream:
    """Counter-based Philox stream keyed by ``(seed, replica_id)``.

    The key alone fixes every draw, so replicas can be generated in any
    order or on any thread. ``counter`` offsets the Philox block counter.
    """

    seed: int
    replica_id: int
    counter: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.replica_id < 0:
            raise ValueError("replica_id must be non-negative")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.replica_id], dtype=np.uint64)
        bitgen = np.random.Philox(key=key, counter=np.array([self.counter, 0, 0, 0], dtype=np.uint64))
        return np.random.Generator(bitgen)
