"""Discrete space-time white noise, the heat-convolved noise ``V`` and its
exact covariance oracles."""

from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import integrate

from .core import Field, GridSpec, RngStream
from .kernel import heat_multiplier, kernel_convolve

__all__ = [
    "WhiteNoise",
    "NoisePath",
    "sample_white_noise",
    "zero_noise",
    "coarsen_noise",
    "noise_step",
    "noise_path",
    "script_v",
    "noise_path_batch",
    "script_v_batch",
    "map_replicas",
    "thread_count",
    "variance_oracle_v",
    "covariance_diff_oracle",
    "discrete_covariance",
    "write_binary",
    "read_binary",
    "export_noise",
    "import_noise",
    "NOISE_MAGIC",
    "FIELD_MAGIC",
]

NOISE_MAGIC = b"HFNOISE1"
FIELD_MAGIC = b"HFFIELD1"
_HEADER = struct.Struct("<8sIIQQ")  # magic, nz, rows, seed, replica_id: 32 bytes


@dataclass(frozen=True)
class WhiteNoise:
    """Cell increments of the driving noise.

    ``increments[k, j]`` is the noise mass of the cell
    ``[t_k, t_{k+1}) x [z_j, z_{j+1})``, distributed ``N(0, dt*dz)``.
    """

    grid: GridSpec
    increments: np.ndarray
    seed: int
    replica_id: int

    def __post_init__(self):
        if self.increments.shape != (self.grid.nt, self.grid.nz):
            raise ValueError(
                f"increments shape {self.increments.shape} != (nt, nz) = {(self.grid.nt, self.grid.nz)}"
            )

    def density_row(self, k: int) -> np.ndarray:
        """Row ``k`` as a spatial density (mass per unit length)."""
        return self.increments[k] / self.grid.dz


@dataclass(frozen=True)
class NoisePath:
    """``V(s, t_k, .)`` for every grid time ``t_k >= s``."""

    field: Field
    anchor: float

    def at(self, t: float) -> np.ndarray:
        return self.field.at(t)


def _draw_rows(gen: np.random.Generator, nrows: int, g: GridSpec) -> np.ndarray:
    return gen.standard_normal((nrows, g.nz)) * math.sqrt(g.dt * g.dz)


def sample_white_noise(g: GridSpec, seed: int, replica_id: int = 0) -> WhiteNoise:
    """Independent ``N(0, dt*dz)`` cell increments from the ``(seed, replica_id)`` stream."""
    gen = RngStream(seed, replica_id).generator()
    return WhiteNoise(g, _draw_rows(gen, g.nt, g), seed, replica_id)


def zero_noise(g: GridSpec) -> WhiteNoise:
    return WhiteNoise(g, np.zeros((g.nt, g.nz)), 0, 0)


def coarsen_noise(W: WhiteNoise, time_factor: int = 2, space_factor: int = 1) -> WhiteNoise:
    """Sum blocks of ``time_factor x space_factor`` cells.

    The result is exactly the noise of the coarse grid driven by the same
    realization, which couples refinement levels on a single path.
    """
    g = W.grid.coarsen(time_factor, space_factor)
    inc = W.increments.reshape(g.nt, time_factor, g.nz, space_factor).sum(axis=(1, 3))
    return WhiteNoise(g, inc, W.seed, W.replica_id)


def noise_step(g: GridSpec) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """One exact-semigroup step ``x -> P_dt x + P_{dt/2} (row / dz)``.

    The newest increment is given kernel age ``dt/2`` (midpoint rule).
    Works on the last axis, so batches of replicas step together.
    """
    full = heat_multiplier(g, g.dt)
    half = heat_multiplier(g, 0.5 * g.dt)
    inv_dz = 1.0 / g.dz

    def step(x: np.ndarray, row: np.ndarray) -> np.ndarray:
        spec = np.fft.rfft(x, axis=-1) * full
        spec += np.fft.rfft(row * inv_dz, axis=-1) * half
        return np.fft.irfft(spec, n=g.nz, axis=-1)

    return step


def noise_path(W: WhiteNoise, s: float = 0.0, g: GridSpec | None = None) -> NoisePath:
    """Convolved noise ``V(s, t, .)`` on every grid time ``t >= s``."""
    g = g or W.grid
    if g != W.grid:
        raise ValueError("noise and grid disagree")
    k0 = g.index_of(s)
    step = noise_step(g)
    vals = np.empty((g.nt - k0 + 1, g.nz))
    vals[0] = 0.0
    for i, k in enumerate(range(k0, g.nt)):
        vals[i + 1] = step(vals[i], W.increments[k])
    return NoisePath(Field(g, vals, np.arange(k0, g.nt + 1)), g.time(k0))


def script_v(W: WhiteNoise, r: float, s: float, t: float, g: GridSpec | None = None) -> np.ndarray:
    """Noise from the window ``[r, s]`` seen at time ``t``: ``P_{t-s} V(r, s, .)``.

    Equals ``V(r, t, .) - V(s, t, .)`` up to rounding.
    """
    g = g or W.grid
    if not r <= s <= t:
        raise ValueError("need r <= s <= t")
    kr, ks, kt = g.index_of(r), g.index_of(s), g.index_of(t)
    if kr == ks:
        return np.zeros(g.nz)
    step = noise_step(g)
    v = np.zeros(g.nz)
    for k in range(kr, ks):
        v = step(v, W.increments[k])
    return kernel_convolve(v, g.time(kt) - g.time(ks), g)


def thread_count() -> int:
    """Worker count for replica parallelism, capped by ``HEATFLOW_THREADS``."""
    raw = os.environ.get("HEATFLOW_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"HEATFLOW_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def map_replicas(fn, replica_ids: Sequence[int], block: int = 250, threads: int | None = None) -> list:
    """Apply ``fn`` to fixed-size blocks of replica ids, results in block order.

    Blocks do not depend on the thread count, so outputs are bit-identical
    for any pool size.
    """
    ids = list(replica_ids)
    blocks = [ids[i : i + block] for i in range(0, len(ids), block)]
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(blocks) <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


def noise_path_batch(
    g: GridSpec, seed: int, replica_ids: Sequence[int], chunk: int = 32
) -> Iterator[tuple[int, np.ndarray]]:
    """Stream ``(k, V(0, t_k, .))`` for a batch of replicas, shape ``(R, nz)``.

    Row ``k`` of replica ``i`` is the same draw that
    :func:`sample_white_noise` produces for ``(seed, replica_ids[i])``.
    """
    gens = [RngStream(seed, int(r)).generator() for r in replica_ids]
    step = noise_step(g)
    v = np.zeros((len(gens), g.nz))
    yield 0, v
    k = 0
    while k < g.nt:
        n = min(chunk, g.nt - k)
        rows = np.stack([_draw_rows(gen, n, g) for gen in gens], axis=1)
        for i in range(n):
            v = step(v, rows[i])
            k += 1
            yield k, v


def script_v_batch(g: GridSpec, seed: int, replica_ids: Sequence[int], r: float, s: float, t: float) -> np.ndarray:
    """Batched :func:`script_v`, shape ``(R, nz)``, on the same streams as
    :func:`sample_white_noise`. Rows before ``r`` are drawn and discarded."""
    kr, ks, kt = g.index_of(r), g.index_of(s), g.index_of(t)
    if not kr <= ks <= kt:
        raise ValueError("need r <= s <= t")
    step = noise_step(g)
    gens = [RngStream(seed, int(i)).generator() for i in replica_ids]
    v = np.zeros((len(gens), g.nz))
    for gen in gens:
        _draw_rows(gen, kr, g)  # keep the stream aligned with the full path
    k = kr
    while k < ks:
        n = min(32, ks - k)
        rows = np.stack([_draw_rows(gen, n, g) for gen in gens], axis=1)
        for row in rows:
            v = step(v, row)
        k += n
    return kernel_convolve(v, g.time(kt) - g.time(ks), g)


def variance_oracle_v(t: float) -> float:
    """Exact variance ``sqrt(t / pi)`` of ``V(0, t, z)``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return math.sqrt(t / math.pi)


def covariance_diff_oracle(r: float, s: float, t: float, dz: float, tol: float = 1e-10) -> float:
    """``Var(W(r,s,t,z1) - W(r,s,t,z2))`` for ``|z1 - z2| = dz``, where ``W`` is
    the noise of the window ``[r, s]`` seen at time ``t``.

    Computed as ``2 int_r^s (p_{2(t-u)}(0) - p_{2(t-u)}(dz)) du`` after the
    substitution ``t - u = w^2``, which removes the endpoint singularity.
    """
    if not (r < s <= t):
        raise ValueError("need r < s <= t")
    if dz == 0:
        return 0.0
    c = dz * dz / 4.0
    f = lambda w: 1.0 - math.exp(-c / (w * w)) if w > 0 else 1.0
    lo, hi = math.sqrt(t - s), math.sqrt(t - r)
    val, err = integrate.quad(f, lo, hi, epsabs=tol, epsrel=tol, limit=200)
    if err > 100 * tol * max(1.0, abs(val)):
        from .kernel import QuadratureError

        raise QuadratureError(err, tol)
    return 2.0 / math.sqrt(math.pi) * val


def discrete_covariance(g: GridSpec, k: int, lags, k0: int = 0, k_obs: int | None = None) -> np.ndarray:
    """Exact covariance of the discrete recursion at integer cell ``lags``.

    Covariance of the noise injected over steps ``[k0, k)`` and observed at
    step ``k_obs`` (default ``k``), i.e. of ``P_{t_obs - t_k} V(t_k0, t_k, .)``.
    Each increment carries kernel age ``(k_obs - i - 1/2) dt``; summing the
    per-mode contributions gives what :func:`noise_path` converges to in
    distribution, free of Monte Carlo error.
    """
    k_obs = k if k_obs is None else k_obs
    if not k0 <= k <= k_obs:
        raise ValueError("need k0 <= k <= k_obs")
    lags = np.atleast_1d(np.asarray(lags))
    m = np.arange(-(g.nz // 2), g.nz // 2)
    xi = np.pi * m / g.L
    ages = (k_obs - np.arange(k0, k) - 0.5) * g.dt
    mode_var = np.exp(-np.outer(xi * xi, ages)).sum(axis=1)
    phase = np.cos(np.outer(lags * g.dz, xi))
    return g.dt / (2.0 * g.L) * phase @ mode_var


def write_binary(path, data: np.ndarray, magic: bytes = NOISE_MAGIC, seed: int = 0, replica_id: int = 0) -> None:
    """Little-endian float64 row-major payload after a 32-byte header."""
    data = np.ascontiguousarray(data, dtype="<f8")
    if data.ndim != 2:
        raise ValueError("expected a 2-d array")
    rows, nz = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, nz, rows, seed, replica_id))
        fh.write(data.tobytes(order="C"))


def read_binary(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError("truncated header")
        magic, nz, rows, seed, replica_id = _HEADER.unpack(head)
        if magic not in (NOISE_MAGIC, FIELD_MAGIC):
            raise ValueError(f"bad magic {magic!r}")
        payload = fh.read()
    if len(payload) != 8 * nz * rows:
        raise ValueError("payload size does not match header")
    data = np.frombuffer(payload, dtype="<f8").reshape(rows, nz).astype(float)
    return data, {"magic": magic, "nz": nz, "rows": rows, "seed": seed, "replica_id": replica_id}


def export_noise(W: WhiteNoise, path) -> None:
    write_binary(path, W.increments, NOISE_MAGIC, W.seed, W.replica_id)


def import_noise(path, g: GridSpec) -> WhiteNoise:
    data, head = read_binary(path)
    if head["magic"] != NOISE_MAGIC:
        raise ValueError("file holds a field, not noise")
    if (head["rows"], head["nz"]) != (g.nt, g.nz):
        raise ValueError("noise file does not match the grid")
    return WhiteNoise(g, data, head["seed"], head["replica_id"])
