"""Weighted norms, the dyadic Hölder-exponent estimator and Monte Carlo
scaling probes for averaged functionals of the convolved noise."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .core import GridSpec
from .drift import DriftSpec, HolderFnSpec, eval_drift
from .noise import map_replicas, noise_path_batch, noise_step

__all__ = [
    "AnisoMetric",
    "ProbeReport",
    "ProbeError",
    "InsufficientReplicas",
    "SmoothingProbeSpec",
    "lambda_weight",
    "weighted_sup_norm",
    "weighted_lip",
    "weighted_lip_exact",
    "norm_1delta",
    "fit_slope",
    "estimate_holder_exponent",
    "stream_points",
    "noise_time_increments",
    "noise_space_increments",
    "averaging_increment",
    "smoothing_probe",
    "moment_probe",
    "occupation_probe",
    "smoothing_target",
]


class ProbeError(RuntimeError):
    def __init__(self, msg: str, report: ProbeReport | None = None):
        super().__init__(msg)
        self.report = report


class InsufficientReplicas(ProbeError):
    pass


@dataclass(frozen=True)
class AnisoMetric:
    """``d_a(w) = |w1|^a1 + |w2|^a2``."""

    a1: float
    a2: float

    def __post_init__(self):
        if not (0 < self.a1 <= 1 and 0 < self.a2 <= 1):
            raise ValueError("exponents must lie in (0, 1]")

    def __call__(self, w1, w2):
        return np.abs(w1) ** self.a1 + np.abs(w2) ** self.a2


@dataclass
class ProbeReport:
    """Scaling table with a log2-log2 least-squares slope.

    ``half_width`` is the 95% band from the regression residuals;
    ``slope_se`` propagates the per-level Monte Carlo standard errors.
    """

    name: str
    abscissa: list
    mean: list
    stderr: list
    slope: float
    intercept: float
    half_width: float
    slope_se: float
    replicas: int
    target: float | None = None
    tolerance: float | None = None
    passed: bool | None = None
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.asarray(self.abscissa, dtype=float)
        if len(a) > 1 and not np.all(np.diff(a) > 0):
            raise ValueError("abscissa must be strictly increasing")

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["abscissa", "mean", "stderr"])
        for row in zip(self.abscissa, self.mean, self.stderr):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def summary(self) -> str:
        flag = {True: "PASS", False: "FAIL", None: "INFO"}[self.passed]
        tgt = "" if self.target is None else f" target {self.target:.4g} +- {self.tolerance:.3g}"
        return f"{flag} {self.name}: slope {self.slope:.4f} (+-{self.half_width:.3f}){tgt} [{self.status}]"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------- norms


def lambda_weight(x, delta: float):
    """``e^x x^delta`` with ``0^0 = 1``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    out = np.exp(x) * x**delta
    return out if out.ndim else float(out)


def weighted_sup_norm(f, g: GridSpec) -> float:
    """``max_j |f(z_j)| e^{-|z_j|}``."""
    return float(np.max(np.abs(np.asarray(f, dtype=float)) * np.exp(-np.abs(g.z))))


def _lip_pairs(f, z, delta, i, j):
    num = np.abs(f[i] - f[j])
    den = np.abs(z[i] - z[j]) * lambda_weight(np.maximum(np.maximum(np.abs(z[i]), np.abs(z[j])), 1.0), delta)
    return float(np.max(num / den)) if len(num) else 0.0


def weighted_lip_exact(f, delta: float, g: GridSpec) -> float:
    """Weighted Lipschitz coefficient over all ``O(nz^2)`` grid pairs."""
    f = np.asarray(f, dtype=float)
    i, j = np.triu_indices(g.nz, k=1)
    return _lip_pairs(f, g.z, delta, i, j)


def weighted_lip(f, delta: float, g: GridSpec, exact_below: int = 128) -> float:
    """``sup |f(z1) - f(z2)| / (|z1 - z2| Lambda_delta(|z1| v |z2| v 1))``.

    Exact for ``nz < exact_below``; otherwise over pairs at strides
    ``1, 2, 4, ...`` (``O(nz log nz)``). Pairs do not wrap around the torus.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    f = np.asarray(f, dtype=float)
    if g.nz < exact_below:
        return weighted_lip_exact(f, delta, g)
    best = 0.0
    stride = 1
    while stride < g.nz:
        i = np.arange(g.nz - stride)
        best = max(best, _lip_pairs(f, g.z, delta, i, i + stride))
        stride *= 2
    return best


def norm_1delta(f, delta: float, g: GridSpec) -> float:
    """``||f||_w + Lip_delta(f)``."""
    return weighted_sup_norm(f, g) + weighted_lip(f, delta, g)


# ---------------------------------------------------------------- regression


def fit_slope(x, y, y_se=None, level: float = 0.95) -> dict:
    """OLS slope of ``log2 y`` on ``log2 x`` with residual band and
    Monte Carlo standard error propagated from ``y_se``."""
    lx = np.log2(np.asarray(x, dtype=float))
    ly = np.log2(np.asarray(y, dtype=float))
    n = len(lx)
    A = np.column_stack([lx, np.ones(n)])
    (slope, icept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    if n > 2:
        resid = ly - (slope * lx + icept)
        se = math.sqrt(float(resid @ resid) / (n - 2) / sxx)
        half = float(stats.t.ppf(0.5 + level / 2, n - 2)) * se
    else:
        half = math.nan
    mc_se = math.nan
    if y_se is not None:
        sl = np.asarray(y_se, dtype=float) / (np.asarray(y, dtype=float) * math.log(2))
        c = (lx - lx.mean()) / sxx
        mc_se = math.sqrt(float(np.sum(c * c * sl * sl)))
    return {"slope": float(slope), "intercept": float(icept), "half_width": half, "slope_se": mc_se}


def estimate_holder_exponent(
    samples: Sequence[np.ndarray],
    gaps: Sequence,
    metric: AnisoMetric | None = None,
    p: float = 2.0,
    target: float | None = None,
    tolerance: float | None = None,
    name: str = "holder",
    min_levels: int = 4,
    min_replicas: int = 200,
) -> ProbeReport:
    """Exponent from increments over a dyadic ladder of gaps.

    ``samples[l]`` has shape ``(replicas,)`` or ``(replicas, positions)``
    and holds increments over ``gaps[l]``. Per level the statistic is the
    median over positions of ``(mean |inc|^p)^(1/p)``; the exponent is the
    log2-log2 slope against the gap. With ``metric`` each gap is a pair
    ``(w1, w2)`` and the abscissa is ``d_a(w)``.
    """
    if len(samples) != len(gaps):
        raise ValueError("one gap per sample family")
    if len(samples) < min_levels:
        raise ValueError(f"need at least {min_levels} levels")
    if metric is not None:
        absc = [float(metric(*w)) for w in gaps]
    else:
        absc = [float(w) for w in gaps]
    stat, se = [], []
    nrep = None
    for inc in samples:
        inc = np.asarray(inc, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        if inc.shape[0] < min_replicas:
            raise ValueError(f"need at least {min_replicas} replicas, got {inc.shape[0]}")
        nrep = inc.shape[0] if nrep is None else min(nrep, inc.shape[0])
        mom = np.mean(np.abs(inc) ** p, axis=0)
        if not np.any(mom > 0):
            raise ValueError("degenerate (all-zero) increments")
        root = mom ** (1.0 / p)
        # delta method per position, then the median position's error
        mom_se = np.std(np.abs(inc) ** p, axis=0, ddof=1) / math.sqrt(inc.shape[0])
        root_se = root * mom_se / (p * np.where(mom > 0, mom, 1.0))
        stat.append(float(np.median(root)))
        se.append(float(np.median(root_se)))
    order = np.argsort(absc)
    absc = [absc[i] for i in order]
    stat = [stat[i] for i in order]
    se = [se[i] for i in order]
    fit = fit_slope(absc, stat, se)
    passed = None
    if target is not None and tolerance is not None:
        passed = abs(fit["slope"] - target) <= tolerance
    return ProbeReport(name, absc, stat, se, fit["slope"], fit["intercept"], fit["half_width"], fit["slope_se"],
                       int(nrep), target, tolerance, passed)


# ---------------------------------------------------------------- Monte Carlo engine


def stream_points(
    g: GridSpec,
    seed: int,
    replica_ids: Sequence[int],
    zidx,
    consume: Callable[[int, np.ndarray], None],
    last_step: int | None = None,
) -> None:
    """Feed ``consume(k, V(0, t_k, z[zidx]))`` for ``k = 0..last_step``,
    values shaped ``(replicas, len(zidx))``."""
    zidx = np.asarray(zidx)
    last = g.nt if last_step is None else last_step
    for k, v in noise_path_batch(g, seed, replica_ids):
        consume(k, v[:, zidx])
        if k >= last:
            break


def _collect(fn, replicas: int, threads=None) -> np.ndarray:
    parts = map_replicas(fn, range(replicas), threads=threads)
    return np.concatenate(parts, axis=0)


def noise_time_increments(
    g: GridSpec, seed: int, replicas: int, base: float, gaps: Sequence[float], zidx, threads=None
) -> list[np.ndarray]:
    """``V(0, base + h, z) - V(0, base, z)`` per gap ``h``, each ``(replicas, positions)``."""
    k0 = g.index_of(base)
    ks = [g.index_of(base + h) for h in gaps]
    last = max(ks)

    def block(ids):
        keep = {}

        def consume(k, v):
            if k == k0 or k in ks:
                keep[k] = v.copy()

        stream_points(g, seed, ids, zidx, consume, last)
        return np.stack([keep[k] - keep[k0] for k in ks], axis=1)

    out = _collect(block, replicas, threads)
    return [out[:, i] for i in range(len(gaps))]


def noise_space_increments(
    g: GridSpec, seed: int, replicas: int, t: float, lags: Sequence[int], threads=None
) -> list[np.ndarray]:
    """``V(0, t, z_j + lag dz) - V(0, t, z_j)`` over all ``j`` (periodic), per integer ``lag``."""
    kt = g.index_of(t)

    def block(ids):
        got = {}

        def consume(k, v):
            if k == kt:
                got["v"] = v.copy()

        stream_points(g, seed, ids, np.arange(g.nz), consume, kt)
        v = got["v"]
        return np.stack([np.roll(v, -lag, axis=1) - v for lag in lags], axis=1)

    out = _collect(block, replicas, threads)
    return [out[:, i] for i in range(len(lags))]


def averaging_increment(W, b: DriftSpec, f: HolderFnSpec, x: float, y: float, z: float,
                        t1: float, t2: float, s: float = 0.0) -> float:
    """Left-endpoint quadrature of
    ``int_{t1}^{t2} b(V(0, t+s, z) + f(t, z) + x) - b(V(0, t+s, z) + f(t, z) + y) dt``."""
    g = W.grid
    if not 0 <= t1 <= t2:
        raise ValueError("need 0 <= t1 <= t2")
    if x == y:
        return 0.0
    j = g.point_index(z)
    k1, k2, ks = g.index_of(t1), g.index_of(t2), g.index_of(s)
    if ks + k2 > g.nt:
        raise ValueError("t2 + s beyond the horizon")
    step = noise_step(g)
    v = np.zeros(g.nz)
    vals = np.empty(ks + k2)
    vals[0] = 0.0
    for k in range(ks + k2 - 1):
        v = step(v, W.increments[k])
        vals[k + 1] = v[j]
    ks_ = np.arange(k1, k2)
    t = np.array([g.time(k) for k in ks_])
    base = vals[ks_ + ks] + f(t, np.full_like(t, z))
    return float(g.dt * np.sum(eval_drift(b, base + x) - eval_drift(b, base + y)))


def smoothing_target(h: float, gamma: float) -> float:
    return 1.0 - 0.25 * max(gamma / (h - 0.25), 1.0)


@dataclass(frozen=True)
class SmoothingProbeSpec:
    """Inputs of :func:`smoothing_probe`.

    ``levels`` are the gaps ``t2 - t1`` (grid times); ``zidx`` indexes the
    sampled positions; ``widths`` drive the ``|x - y|`` proportionality check,
    each centred at ``(x + y) / 2``.
    """

    b: DriftSpec
    f: HolderFnSpec
    grid: GridSpec
    levels: tuple[float, ...]
    x: float
    y: float
    zidx: tuple[int, ...]
    replicas: int
    seed: int
    s: float = 0.0
    t1: float = 0.0
    widths: tuple[float, ...] = (0.05, 0.1, 0.2)
    tolerance: float = 0.1
    linearity_tol: float = 0.15

    def __post_init__(self):
        if not 0.5 < self.f.h <= 1:
            raise ValueError("h must lie in (1/2, 1]")
        if not 0 <= self.f.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if len(self.levels) < 4:
            raise ValueError("need at least 4 dyadic levels")
        if self.x == self.y:
            raise ValueError("need x != y")

    @property
    def target(self) -> float:
        return smoothing_target(self.f.h, self.f.gamma)


def _band_integrals(g, spec_b, f, pairs, zs, t1_k, s_k, gap_ks, seed, replicas, threads):
    """Per replica and gap: mean over positions of ``|int b(V+f+x) - b(V+f+y)|``."""
    last = s_k + t1_k + max(gap_ks)
    zidx = np.asarray(zs)
    zval = g.z[zidx]
    ends = sorted(set(gap_ks))

    def block(ids):
        acc = np.zeros((len(pairs), len(ids), len(zidx)))
        res = np.zeros((len(pairs), len(ends), len(ids)))

        def consume(k, v):
            rel = k - s_k - t1_k  # steps elapsed since t1
            if rel < 0:
                return
            if rel in ends:
                res[:, ends.index(rel)] = np.abs(acc).mean(axis=2)
            if rel < ends[-1]:
                t = g.time(t1_k + rel)
                base = v + f(t, zval)
                for i, (x, y) in enumerate(pairs):
                    acc[i] += eval_drift(spec_b, base + x) - eval_drift(spec_b, base + y)

        stream_points(g, seed, ids, zidx, consume, last)
        return np.moveaxis(res * g.dt, 2, 0)  # (ids, pairs, gaps)

    return _collect(block, replicas, threads)


def smoothing_probe(spec: SmoothingProbeSpec, threads=None) -> ProbeReport:
    """Scaling of ``E|averaging_increment| / |x - y|`` in the gap ``t2 - t1``."""
    g = spec.grid
    gap_ks = [g.index_of(d) for d in spec.levels]
    order = np.argsort(gap_ks)
    gap_ks = [gap_ks[i] for i in order]
    gaps = [g.time(k) for k in gap_ks]
    c = 0.5 * (spec.x + spec.y)
    pairs = [(spec.x, spec.y)] + [(c + w / 2, c - w / 2) for w in spec.widths]
    w_all = [abs(spec.x - spec.y)] + list(spec.widths)
    raw = _band_integrals(g, spec.b, spec.f, pairs, spec.zidx, g.index_of(spec.t1), g.index_of(spec.s),
                          gap_ks, spec.seed, spec.replicas, threads)
    R = raw.shape[0]
    means = raw.mean(axis=0) / np.asarray(w_all)[:, None]
    ses = raw.std(axis=0, ddof=1) / math.sqrt(R) / np.asarray(w_all)[:, None]
    main, main_se = means[0], ses[0]
    if not np.any(main > 0):
        return ProbeReport("smoothing", gaps, main.tolist(), main_se.tolist(), math.nan, math.nan, math.nan, math.nan,
                           R, spec.target, spec.tolerance, True, "degenerate")
    fit = fit_slope(gaps, main, main_se)
    # proportionality in |x - y|: per-unit-width means relative to their average
    lin = means[1:] / means[1:].mean(axis=0)
    lin_dev = float(np.max(np.abs(lin - 1.0)))
    slope_ok = abs(fit["slope"] - spec.target) <= spec.tolerance
    lin_ok = lin_dev <= spec.linearity_tol
    rep = ProbeReport(
        "smoothing", gaps, main.tolist(), main_se.tolist(), fit["slope"], fit["intercept"], fit["half_width"],
        fit["slope_se"], R, spec.target, spec.tolerance, bool(slope_ok and lin_ok),
        extra={
            "slope_ok": bool(slope_ok),
            "linearity_ok": bool(lin_ok),
            "linearity_max_deviation": lin_dev,
            "widths": list(spec.widths),
            "per_width_means": means[1:].tolist(),
        },
    )
    if fit["slope_se"] > 0.05:
        raise InsufficientReplicas(f"slope standard error {fit['slope_se']:.3g} > 0.05", rep)
    return rep


def moment_probe(
    b,
    p: float,
    g: GridSpec,
    levels: Sequence[float],
    replicas: int,
    seed: int,
    zidx=(None,),
    delta: float = 0.05,
    t1: float = 0.0,
    tolerance: float = 0.15,
    two_point: tuple[float, float, int] | None = None,
    threads=None,
) -> ProbeReport:
    """Monte Carlo ``E (int_{t1}^{t1+D} b'(V(0, t, z)) dt)^p`` over gaps ``D``.

    ``b`` is a differentiable :class:`DriftSpec` or the derivative itself as a
    callable. With ``two_point = (x, y, j2)`` the integrand becomes
    ``b'(V(t, z) + x) - b'(V(t, z_j2) + y)``. Even integer ``p`` uses the
    plain power, other ``p`` the absolute value. A level whose moment has a
    standard error above 30% of its mean makes the report inconclusive.
    """
    deriv = b.derivative if isinstance(b, DriftSpec) else b
    zidx = [g.nz // 2 if j is None else j for j in zidx]
    gap_ks = sorted(g.index_of(d) for d in levels)
    if len(gap_ks) < 4:
        raise ValueError("need at least 4 dyadic levels")
    k1 = g.index_of(t1)
    x, y, j2 = two_point if two_point is not None else (0.0, 0.0, None)
    cols = list(zidx) + ([j2] if j2 is not None else [])
    ends = gap_ks
    nzs = len(zidx)

    def power(v):
        if float(p).is_integer() and int(p) % 2 == 0:
            return v ** int(p)
        return np.abs(v) ** p

    def block(ids):
        acc = np.zeros((len(ids), nzs))
        res = np.zeros((len(ids), len(ends)))

        def consume(k, v):
            rel = k - k1
            if rel < 0:
                return
            if rel in ends:
                res[:, ends.index(rel)] = power(acc * g.dt).mean(axis=1)
            if rel < ends[-1]:
                vals = deriv(v[:, :nzs] + x)
                if j2 is not None:
                    vals = vals - deriv(v[:, nzs:nzs + 1] + y)
                acc[:] += vals

        stream_points(g, seed, ids, cols, consume, k1 + ends[-1])
        return res

    raw = _collect(block, replicas, threads)
    R = raw.shape[0]
    mean = raw.mean(axis=0)
    se = raw.std(axis=0, ddof=1) / math.sqrt(R)
    gaps = [g.time(k) for k in gap_ks]
    target = p * (0.75 - delta)
    if not np.any(mean > 0):
        return ProbeReport("moments", gaps, mean.tolist(), se.tolist(), math.nan, math.nan, math.nan, math.nan, R,
                           target, tolerance, None, "degenerate")
    fit = fit_slope(gaps, mean, se)
    heavy = bool(np.any(se > 0.3 * np.abs(mean)))
    status = "inconclusive" if heavy else "ok"
    passed = None if heavy else bool(abs(fit["slope"] - target) <= tolerance)
    return ProbeReport("moments", gaps, mean.tolist(), se.tolist(), fit["slope"], fit["intercept"], fit["half_width"],
                       fit["slope_se"], R, target, tolerance, passed, status)


def _occupation(values, intervals):
    hit = np.zeros(values.shape, dtype=bool)
    for a, b in intervals:
        hit |= (values >= a) & (values < b)
    return hit


def occupation_probe(
    g: GridSpec,
    seed: int,
    sets: Sequence[Sequence[tuple[float, float]]],
    replicas: int,
    f: HolderFnSpec | None = None,
    zidx=(None,),
    s: float = 0.0,
    T: float | None = None,
    ratio_target: float = 1 / math.sqrt(2),
    tolerance: float = 0.15,
    threads=None,
) -> ProbeReport:
    """Mean of ``int_0^T 1_U(V(0, t+s, z) + f(t, z)) dt`` for each set ``U``.

    ``sets`` is a shrinking sequence of finite unions of half-open intervals.
    Passes iff every ratio of consecutive mean occupations lies within
    ``ratio_target +- tolerance``; also records whether the square-root
    bound calibrated on the largest set holds on the others.
    """
    T = g.T - s if T is None else T
    ks, kT = g.index_of(s), g.index_of(T)
    if ks + kT > g.nt:
        raise ValueError("s + T beyond the horizon")
    zidx = np.asarray([g.nz // 2 if j is None else j for j in zidx])
    zval = g.z[zidx]
    sizes = [sum(b - a for a, b in U) for U in sets]
    if any(m <= 0 for m in sizes):
        raise ValueError("every set needs positive length")

    def block(ids):
        occ = np.zeros((len(ids), len(sets), len(zidx)))

        def consume(k, v):
            rel = k - ks
            if 0 <= rel < kT:
                val = v + (f(g.time(rel), zval) if f is not None else 0.0)
                for i, U in enumerate(sets):
                    occ[:, i] += _occupation(val, U)

        stream_points(g, seed, ids, zidx, consume, ks + kT)
        return occ.mean(axis=2) * g.dt

    raw = _collect(block, replicas, threads)
    R = raw.shape[0]
    mean = raw.mean(axis=0)
    se = raw.std(axis=0, ddof=1) / math.sqrt(R)
    order = np.argsort(sizes)
    sz = [sizes[i] for i in order]
    m = mean[order]
    e = se[order]
    big = int(np.argmax(sizes))
    c_fit = mean[big] / math.sqrt(sizes[big])
    sqrt_ok = bool(np.all(mean <= c_fit * np.sqrt(sizes) * (1 + 1e-12)))
    ratios = [float(mean[i + 1] / mean[i]) if mean[i] > 0 else math.nan for i in range(len(sets) - 1)]
    ok = bool(all(abs(r - ratio_target) <= tolerance for r in ratios))
    if np.any(m <= 0):
        fit = dict(slope=math.nan, intercept=math.nan, half_width=math.nan, slope_se=math.nan)
    else:
        fit = fit_slope(sz, m, e)
    return ProbeReport(
        "occupation", sz, m.tolist(), e.tolist(), fit["slope"], fit["intercept"], fit["half_width"], fit["slope_se"],
        R, ratio_target, tolerance, ok,
        extra={"ratios": ratios, "c_fit": float(c_fit), "sqrt_bound_holds": sqrt_ok},
    )
