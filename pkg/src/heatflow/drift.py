"""Bounded measurable drifts, initial conditions, weighted Hölder function
classes and the dyadic right-endpoint approximation ``lambda_n``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import special

from .core import GridSpec

__all__ = [
    "DriftSpec",
    "InitialCondition",
    "HolderFnSpec",
    "ClassReport",
    "eval_drift",
    "lambda_n",
    "classify_b0plus",
    "parse_drift",
    "parse_initial_condition",
]

DRIFT_KINDS = ("zero", "constant", "smooth", "sign", "step", "negsign")


@dataclass(frozen=True)
class DriftSpec:
    """A bounded measurable drift ``b``.

    kinds: ``zero``; ``constant`` (c); ``smooth`` (a*sin(w*x)); ``sign``
    (a*sign(x)); ``step`` (indicator of a finite union of half-open
    intervals); ``negsign`` (-a*sign(x)).
    """

    kind: str
    amplitude: float = 1.0
    frequency: float = 1.0
    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.kind == "step":
            for a, b in self.intervals:
                if not a < b:
                    raise ValueError(f"empty interval [{a}, {b})")

    # constructors -------------------------------------------------------
    @classmethod
    def zero(cls) -> DriftSpec:
        return cls("zero", 0.0)

    @classmethod
    def constant(cls, c: float) -> DriftSpec:
        return cls("constant", float(c))

    @classmethod
    def smooth(cls, amplitude: float = 1.0, frequency: float = 1.0) -> DriftSpec:
        return cls("smooth", float(amplitude), float(frequency))

    @classmethod
    def sign(cls, a: float = 1.0) -> DriftSpec:
        return cls("sign", float(a))

    @classmethod
    def negsign(cls, a: float = 1.0) -> DriftSpec:
        return cls("negsign", float(a))

    @classmethod
    def step(cls, intervals, height: float = 1.0) -> DriftSpec:
        ivs = tuple((float(a), float(b)) for a, b in intervals)
        return cls("step", float(height), intervals=ivs)

    # properties ---------------------------------------------------------
    @property
    def sup_norm(self) -> float:
        if self.kind == "zero" or (self.kind == "step" and not self.intervals):
            return 0.0
        return abs(self.amplitude)

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant; ``inf`` for the discontinuous kinds."""
        if self.kind in ("zero", "constant"):
            return 0.0
        if self.kind == "smooth":
            return abs(self.amplitude * self.frequency)
        return math.inf

    def normalized(self) -> DriftSpec:
        """Rescaled so that ``sup|b| <= 1``."""
        s = self.sup_norm
        if s <= 1.0:
            return self
        return DriftSpec(self.kind, self.amplitude / s, self.frequency, self.intervals)

    def __call__(self, x):
        return eval_drift(self, x)

    def derivative(self, x):
        if self.kind in ("zero", "constant"):
            return np.zeros_like(np.asarray(x, dtype=float))
        if self.kind == "smooth":
            return self.amplitude * self.frequency * np.cos(self.frequency * np.asarray(x, dtype=float))
        raise ValueError(f"drift kind {self.kind!r} is not differentiable")

    @property
    def name(self) -> str:
        k = self.kind
        if k == "zero":
            return "zero"
        if k == "constant":
            return f"const:{self.amplitude:g}"
        if k == "smooth":
            return f"sin:{self.amplitude:g}:{self.frequency:g}"
        if k in ("sign", "negsign"):
            return f"{k}:{self.amplitude:g}"
        return "step:" + ":".join(f"{a:g}:{b:g}" for a, b in self.intervals)


def eval_drift(b: DriftSpec, x):
    """Pointwise value of ``b``; discontinuities are kept as they are.

    ``sign(0) = 0`` and intervals are half open, ``[a, b)``.
    """
    x = np.asarray(x, dtype=float)
    k = b.kind
    if k == "zero":
        out = np.zeros_like(x)
    elif k == "constant":
        out = np.full_like(x, b.amplitude)
    elif k == "smooth":
        out = b.amplitude * np.sin(b.frequency * x)
    elif k == "sign":
        out = b.amplitude * np.sign(x)
    elif k == "negsign":
        out = -b.amplitude * np.sign(x)
    else:
        hit = np.zeros(x.shape, dtype=bool)
        for lo, hi in b.intervals:
            hit |= (x >= lo) & (x < hi)
        out = b.amplitude * hit.astype(float)
    return out if out.ndim else float(out)


IC_KINDS = ("zero", "bump", "indicator", "smooth_indicator", "poly", "sampled")


@dataclass(frozen=True)
class InitialCondition:
    """Initial datum ``q``.

    kinds: ``zero``; ``bump`` (exp(-(z-c)^2 / 2w^2)); ``indicator`` of
    ``[a, b)``; ``poly`` (scale * min(|z|^mu, cap), cap defaults to the
    torus edge); ``sampled`` (explicit grid values).
    """

    kind: str
    params: tuple[float, ...] = ()
    values: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in IC_KINDS:
            raise ValueError(f"unknown initial condition kind {self.kind!r}")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def bump(cls, center: float = 0.0, width: float = 1.0):
        if width <= 0:
            raise ValueError("width must be positive")
        return cls("bump", (float(center), float(width)))

    @classmethod
    def indicator(cls, a: float, b: float):
        if not a < b:
            raise ValueError("need a < b")
        return cls("indicator", (float(a), float(b)))

    @classmethod
    def smooth_indicator(cls, a: float, b: float, eps: float):
        """Gaussian-mollified indicator of ``[a, b)`` with width ``eps``; tends
        to the indicator pointwise off ``{a, b}`` as ``eps -> 0``."""
        if not (a < b and eps > 0):
            raise ValueError("need a < b and eps > 0")
        return cls("smooth_indicator", (float(a), float(b), float(eps)))

    @classmethod
    def poly(cls, mu: float, scale: float = 1.0, cap: float | None = None):
        p = (float(mu), float(scale)) if cap is None else (float(mu), float(scale), float(cap))
        return cls("poly", p)

    @classmethod
    def sampled(cls, values):
        v = np.array(values, dtype=float)
        v.setflags(write=False)
        return cls("sampled", (), v)

    def sample(self, g: GridSpec) -> np.ndarray:
        z = g.z
        if self.kind == "zero":
            return np.zeros(g.nz)
        if self.kind == "bump":
            c, w = self.params
            return np.exp(-((z - c) ** 2) / (2 * w * w))
        if self.kind == "indicator":
            a, b = self.params
            return ((z >= a) & (z < b)).astype(float)
        if self.kind == "smooth_indicator":
            a, b, eps = self.params
            return special.ndtr((z - a) / eps) - special.ndtr((z - b) / eps)
        if self.kind == "poly":
            mu, scale = self.params[:2]
            cap = self.params[2] if len(self.params) > 2 else g.L**mu
            return scale * np.minimum(np.abs(z) ** mu, cap)
        if self.values.shape != (g.nz,):
            raise ValueError("sampled initial condition does not match the grid")
        return np.array(self.values)

    @property
    def support_radius(self) -> float:
        """Radius outside which ``q`` is negligible; feeds ``GridSpec.check_support``."""
        if self.kind == "bump":
            c, w = self.params
            return abs(c) + 8 * w
        if self.kind in ("indicator", "smooth_indicator"):
            a, b = self.params[:2]
            extra = 8 * self.params[2] if self.kind == "smooth_indicator" else 0.0
            return max(abs(a), abs(b)) + extra
        return 0.0

    @property
    def name(self) -> str:
        if self.kind in ("zero", "sampled"):
            return self.kind
        return self.kind + ":" + ":".join(f"{p:g}" for p in self.params)


def _envelope(z, mu):
    return np.maximum(np.abs(z) ** mu, 1.0)


class ClassReport(NamedTuple):
    C: float
    passes: bool
    truncation_dependent: bool


def classify_b0plus(q, eps: float, g: GridSpec) -> ClassReport:
    """Smallest ``C`` with ``|q(z)| <= C (|z|^eps v 1)`` on the grid.

    ``truncation_dependent`` flags a ratio that is still growing at the
    torus edge, i.e. membership that only holds because of the cap.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    vals = q.sample(g) if isinstance(q, InitialCondition) else np.asarray(q, dtype=float)
    ratio = np.abs(vals) / _envelope(g.z, eps)
    C = float(ratio.max())
    if not np.isfinite(C):
        return ClassReport(math.inf, False, False)
    # compare the outer tenth of the torus with the rest
    edge = np.abs(g.z) >= 0.9 * g.L
    inner_max = float(ratio[~edge].max()) if (~edge).any() else 0.0
    growing = C > 0 and float(ratio[edge].max()) >= C and float(ratio[edge].max()) > 1.01 * inner_max
    return ClassReport(C, True, bool(growing))


@dataclass(frozen=True)
class HolderFnSpec:
    """A function ``f(t, z)`` with declared class parameters ``(h, gamma, mu, M)``
    of the weighted Hölder class: ``|f(t,z) - f(s,z)| <= M |t-s|^h s^-gamma (|z|^mu v 1)``
    and ``|f(t,z)| <= M (|z|^mu v 1)``.
    """

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: float = 1.0
    gamma: float = 0.0
    mu: float = 0.0
    M: float = 0.0
    label: str = "f"

    def __call__(self, t, z):
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(t, z), dtype=float), np.broadcast_shapes(t.shape, z.shape))

    @classmethod
    def zero(cls):
        return cls(lambda t, z: np.zeros(np.broadcast_shapes(np.shape(t), np.shape(z))), 1.0, 0.0, 0.0, 0.0, "zero")

    @classmethod
    def time_power(cls, a: float, h: float):
        """``a * t^h`` on ``[0, 1]``; in the class with ``M = |a|``, ``gamma = 0``."""
        return cls(lambda t, z: a * np.asarray(t) ** h + 0 * np.asarray(z), h, 0.0, 0.0, abs(a), f"{a:g}*t^{h:g}")

    @classmethod
    def singular(cls, a: float, gamma: float, h: float = 1.0):
        """``a * (1 - t^(1-gamma))``-type profile, steep near ``t = 0``."""
        if not 0 < gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        e = 1.0 - gamma
        # |t^e - s^e| <= |t-s| s^(e-1) = |t-s| s^-gamma
        return cls(lambda t, z: a * np.asarray(t) ** e + 0 * np.asarray(z), 1.0, gamma, 0.0, abs(a), f"{a:g}*t^{e:g}")

    def violations(self, ts, zs) -> tuple[float, float]:
        """Largest ratios of the two defining inequalities over a sample.

        Values above 1 mean the declared constants are wrong.
        """
        ts = np.sort(np.asarray(ts, dtype=float))
        zs = np.asarray(zs, dtype=float)
        env = _envelope(zs, self.mu)
        vals = np.array([self(t, zs) for t in ts])
        M = self.M if self.M > 0 else np.finfo(float).tiny
        size = float(np.max(np.abs(vals) / (M * env)))
        worst = 0.0
        for i in range(len(ts)):
            for j in range(i + 1, len(ts)):
                s, t = ts[i], ts[j]
                if s <= 0:
                    continue
                bound = M * (t - s) ** self.h * s ** (-self.gamma) * env
                worst = max(worst, float(np.max(np.abs(vals[j] - vals[i]) / bound)))
        return size, worst


def lambda_n(f: Callable, n: int, T: float = 1.0) -> Callable:
    """Dyadic right-endpoint approximation of ``f`` on ``(0, T]``.

    On the cell ``(T i 2^-n, T (i+1) 2^-n]`` the result equals
    ``f(T (i+1) 2^-n)``; at ``t = 0`` it vanishes. ``f`` may take extra
    arguments (e.g. ``z``) which are passed through.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    m = 2**n

    def approx(t, *args):
        t = np.asarray(t, dtype=float)
        i = np.clip(np.ceil(t * m / T) - 1, 0, m - 1)
        right = T * (i + 1) / m
        vals = np.asarray(f(right, *args), dtype=float)
        return np.where(t > 0, vals, 0.0)

    return approx


def _floats(parts, name):
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ValueError(f"bad numeric parameter in {name!r}") from None


def parse_drift(name: str) -> DriftSpec:
    """``zero``, ``const:c``, ``sin:a[:w]``, ``sign:a``, ``negsign:a``,
    ``step:a:b[:a2:b2...]`` (alias ``indicator``)."""
    head, *rest = name.strip().split(":")
    p = _floats(rest, name)
    if head == "zero" and not p:
        return DriftSpec.zero()
    if head in ("const", "constant") and len(p) == 1:
        return DriftSpec.constant(p[0])
    if head in ("sin", "smooth") and len(p) in (0, 1, 2):
        return DriftSpec.smooth(*(p or [1.0]))
    if head == "sign" and len(p) <= 1:
        return DriftSpec.sign(*(p or [1.0]))
    if head == "negsign" and len(p) <= 1:
        return DriftSpec.negsign(*(p or [1.0]))
    if head in ("step", "indicator") and p and len(p) % 2 == 0:
        return DriftSpec.step(list(zip(p[::2], p[1::2])))
    raise ValueError(f"unknown drift {name!r}")


def parse_initial_condition(name: str) -> InitialCondition:
    """``zero``, ``bump:c:w``, ``indicator:a:b``, ``poly:mu:scale[:cap]``."""
    head, *rest = name.strip().split(":")
    p = _floats(rest, name)
    if head == "zero" and not p:
        return InitialCondition.zero()
    if head == "bump" and len(p) in (0, 2):
        return InitialCondition.bump(*p)
    if head == "indicator" and len(p) == 2:
        return InitialCondition.indicator(*p)
    if head == "poly" and len(p) in (2, 3):
        return InitialCondition.poly(*p)
    raise ValueError(f"unknown initial condition {name!r}")
