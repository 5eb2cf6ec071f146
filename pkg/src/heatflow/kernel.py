"""Heat kernel, spectral semigroup on the torus and quadrature checks of
Gaussian-kernel estimates."""

from __future__ import annotations

import math
import warnings
from functools import lru_cache

import numpy as np
from scipy import integrate

from .core import GridSpec

__all__ = [
    "QuadratureError",
    "heat_kernel",
    "heat_kernel_dt",
    "heat_multiplier",
    "kernel_convolve",
    "kernel_diff_l1",
    "gaussian_shift_l1",
    "gaussian_shift_grad_l1",
    "gaussian_shift_grad_mixed_l1",
    "weighted_kernel_mass",
    "weighted_kernel_shift",
    "weighted_kernel_dt",
    "weighted_kernel_dt_shift",
    "fit_constant",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature finished above the requested tolerance."""

    def __init__(self, achieved: float, requested: float):
        super().__init__(f"quadrature error estimate {achieved:.3g} exceeds {requested:.3g}")
        self.achieved = achieved
        self.requested = requested


def heat_kernel(t, z):
    """Gaussian density ``(2 pi t)^(-1/2) exp(-z^2 / 2t)``; ``t`` must be positive."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("heat kernel needs t > 0")
    z = np.asarray(z, dtype=float)
    out = np.exp(-(z * z) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return out if out.ndim else float(out)


def heat_kernel_dt(t, z):
    """Time derivative of the heat kernel."""
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    return heat_kernel(t, z) * (z * z / (2.0 * t * t) - 0.5 / t)


def _heat_kernel_dz(t, z):
    return -np.asarray(z) / t * heat_kernel(t, z)


@lru_cache(maxsize=256)
def _multiplier(L: float, nz: int, t: float) -> np.ndarray:
    xi = np.pi * np.arange(nz // 2 + 1) / L
    m = np.exp(-0.5 * xi * xi * t)
    m.setflags(write=False)
    return m


def heat_multiplier(g: GridSpec, t: float) -> np.ndarray:
    """Per-frequency decay factors ``exp(-xi^2 t / 2)`` on the ``rfft`` bins.

    Cached per ``(grid, t)``; the returned array is read-only.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    return _multiplier(g.L, g.nz, float(t))


def kernel_convolve(f: np.ndarray, t: float, g: GridSpec) -> np.ndarray:
    """Apply the heat semigroup ``P_t`` to slices along the last axis.

    ``t == 0`` returns ``f`` untouched (the ``p_0 * f = f`` convention).
    """
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != g.nz:
        raise ValueError(f"slice length {f.shape[-1]} does not match nz={g.nz}")
    if t == 0:
        return f
    spec = np.fft.rfft(f, axis=-1)
    spec *= heat_multiplier(g, t)
    return np.fft.irfft(spec, n=g.nz, axis=-1)


def _quad(fun, a, b, points=None, tol=1e-10, limit=400):
    if points is not None:
        points = sorted(p for p in set(points) if a < p < b)
    with warnings.catch_warnings():
        # convergence is judged from the returned error estimate below
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(fun, a, b, points=points or None, epsabs=tol, epsrel=tol, limit=limit)
    if err > max(tol, tol * abs(val)) * 10:
        raise QuadratureError(err, tol)
    return val


def _crossing(t: float, s: float) -> float:
    # |z| where p_t(z) == p_s(z) for s < t
    return math.sqrt(t * s / (t - s) * math.log(t / s))


def kernel_diff_l1(t: float, s: float, delta: float = 0.0, tol: float = 1e-10) -> float:
    """``int |p_t(z) - p_s(z)| (|z|^delta v 1) dz`` by adaptive quadrature."""
    if not (s > 0 and t > 0):
        raise ValueError("need s, t > 0")
    if s > t:
        s, t = t, s
    if s == t:
        return 0.0

    def f(z):
        return abs(heat_kernel(t, z) - heat_kernel(s, z)) * max(abs(z) ** delta, 1.0)

    zc = _crossing(t, s)
    upper = 40.0 * math.sqrt(t) + 10.0
    return 2.0 * _quad(f, 0.0, upper, points=[zc, 1.0], tol=tol)


def gaussian_shift_l1(t: float, a: float, tol: float = 1e-11) -> float:
    """``int |p_t(x + a) - p_t(x)| dx``."""
    if t <= 0:
        raise ValueError("need t > 0")
    if a == 0:
        return 0.0
    a = abs(a)
    w = 12.0 * math.sqrt(t)
    # the two bumps cross at x = -a/2
    f = lambda x: abs(heat_kernel(t, x + a) - heat_kernel(t, x))
    return _quad(f, -a - w, w, points=[-a / 2, -a, 0.0], tol=tol)


def gaussian_shift_grad_l1(t: float, a: float, tol: float = 1e-11) -> float:
    """``int |p_t'(x + a) - p_t'(x)| dx`` (spatial derivative)."""
    if a == 0:
        return 0.0
    a = abs(a)
    w = 12.0 * math.sqrt(t)
    f = lambda x: abs(_heat_kernel_dz(t, x + a) - _heat_kernel_dz(t, x))
    pts = [-a / 2, -a, 0.0, -a - math.sqrt(t), math.sqrt(t), -a + math.sqrt(t), -math.sqrt(t)]
    return _quad(f, -a - w, w, points=pts, tol=tol)


def gaussian_shift_grad_mixed_l1(t: float, a1: float, a2: float, tol: float = 1e-11) -> float:
    """Second mixed difference of ``p_t'`` in L1, shifts ``a1`` and ``a2``."""
    lo = min(0.0, a1, a2, a1 + a2)
    hi = max(0.0, a1, a2, a1 + a2)
    w = 12.0 * math.sqrt(t)
    d = _heat_kernel_dz

    def f(x):
        return abs(d(t, x + a1 + a2) - d(t, x + a1) - d(t, x + a2) + d(t, x))

    pts = np.linspace(-hi - 2 * math.sqrt(t), -lo + 2 * math.sqrt(t), 17).tolist()
    return _quad(f, -hi - w, -lo + w, points=pts, tol=tol, limit=1000)


def _lam(x, delta):
    x = np.maximum(np.abs(x), 1.0)
    return np.exp(x) * x**delta


def weighted_kernel_mass(t: float, z: float, delta: float) -> float:
    """``int p_t(z - z') Lambda_delta(|z'| v 1) dz'``."""
    f = lambda y: heat_kernel(t, z - y) * _lam(y, delta)
    w = 40.0 * math.sqrt(t) + 2.0
    return _quad(f, z - w, z + w, points=[-1.0, 1.0, z], tol=1e-9)


def weighted_kernel_shift(t: float, z1: float, z2: float, delta: float) -> float:
    """``int |p_t(z1 - z') - p_t(z2 - z')| Lambda_delta(|z'| v 1) dz'``."""
    f = lambda y: abs(heat_kernel(t, z1 - y) - heat_kernel(t, z2 - y)) * _lam(y, delta)
    w = 40.0 * math.sqrt(t) + 2.0
    lo, hi = min(z1, z2) - w, max(z1, z2) + w
    return _quad(f, lo, hi, points=[-1.0, 1.0, z1, z2, 0.5 * (z1 + z2)], tol=1e-9)


def _time_weighted(inner, t1: float, t2: float, power: float, tol: float) -> float:
    # outer integral over t' in (t1, t2) with the weight (t2 - t')^power
    # handled by QUADPACK's algebraic-endpoint rule
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(inner, t1, t2, weight="alg", wvar=(0.0, power), epsabs=tol, epsrel=tol, limit=200)
    if err > 10 * max(tol, tol * abs(val)):
        raise QuadratureError(err, tol)
    return val


def weighted_kernel_dt(t: float, t1: float, t2: float, z: float, delta: float, tol: float = 1e-7) -> float:
    """``int int_{t1}^{t2} |d/dt' p_{t-t'}(z - z')| (t2 - t')^(2/3 - delta)
    Lambda_delta(|z'| v 1) dt' dz'``, requires ``t1 < t2 < t``."""
    if not t1 < t2 < t:
        raise ValueError("need t1 < t2 < t")

    def inner(tp):
        a = t - tp
        r = math.sqrt(a)
        f = lambda y: abs(heat_kernel_dt(a, z - y)) * float(_lam(y, delta))
        w = 40.0 * r + 2.0
        return _quad(f, z - w, z + w, points=[-1.0, 1.0, z, z - r, z + r], tol=tol * 0.1)

    return _time_weighted(inner, t1, t2, 2.0 / 3.0 - delta, tol)


def weighted_kernel_dt_shift(t: float, t1: float, t2: float, z1: float, z2: float, delta: float,
                             tol: float = 1e-7) -> float:
    """Spatial difference version of :func:`weighted_kernel_dt`."""
    if not t1 < t2 < t:
        raise ValueError("need t1 < t2 < t")

    def inner(tp):
        a = t - tp
        r = math.sqrt(a)

        def f(y):
            return abs(heat_kernel_dt(a, z1 - y) - heat_kernel_dt(a, z2 - y)) * float(_lam(y, delta))

        w = 40.0 * r + 2.0
        lo, hi = min(z1, z2) - w, max(z1, z2) + w
        pts = [-1.0, 1.0, z1, z2, 0.5 * (z1 + z2), z1 - r, z1 + r, z2 - r, z2 + r]
        return _quad(f, lo, hi, points=pts, tol=tol * 0.1)

    return _time_weighted(inner, t1, t2, 2.0 / 3.0 - delta, tol)


def fit_constant(values, bounds, margin: float = 1.25) -> float:
    """Smallest ``C`` with ``values <= C * bounds`` on a calibration sweep,
    inflated by ``margin`` before it is asserted on fresh parameters."""
    values = np.asarray(values, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    if np.any(bounds <= 0):
        raise ValueError("bounds must be positive")
    return margin * float(np.max(values / bounds))
