import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heatflow.analysis import (
    AnisoMetric,
    ProbeReport,
    SmoothingProbeSpec,
    averaging_increment,
    estimate_holder_exponent,
    fit_slope,
    lambda_weight,
    moment_probe,
    noise_space_increments,
    noise_time_increments,
    norm_1delta,
    occupation_probe,
    smoothing_probe,
    smoothing_target,
    weighted_lip,
    weighted_lip_exact,
    weighted_sup_norm,
)
from heatflow.core import make_grid
from heatflow.drift import DriftSpec, HolderFnSpec
from heatflow.kernel import fit_constant
from heatflow.noise import sample_white_noise


@pytest.mark.parametrize(
    "x, delta, expected",
    [(1.0, 0.0, math.e), (1.0, 3.7, math.e), (0.0, 0.0, 1.0), (2.0, 0.5, math.e**2 * math.sqrt(2))],
)
def test_lambda_weight(x, delta, expected):
    assert lambda_weight(x, delta) == pytest.approx(expected, rel=1e-15)


def test_lambda_weight_closed_value():
    assert lambda_weight(2.0, 0.5) == pytest.approx(10.4497, abs=5e-5)
    with pytest.raises(ValueError):
        lambda_weight(-0.1, 0.0)


def test_weighted_sup_norm_examples():
    g = make_grid(8, 128, 1, 10)
    assert weighted_sup_norm(np.ones(128), g) == 1.0
    assert weighted_sup_norm(np.zeros(128), g) == 0.0
    assert weighted_sup_norm(np.exp(np.abs(g.z)), g) == pytest.approx(1.0, rel=1e-15)


def _brute_lip(f, z, delta):
    best = 0.0
    for i in range(len(z)):
        for j in range(len(z)):
            if i != j:
                m = max(abs(z[i]), abs(z[j]), 1.0)
                best = max(best, abs(f[i] - f[j]) / (abs(z[i] - z[j]) * math.exp(m) * m**delta))
    return best


def test_weighted_lip_constant():
    g = make_grid(8, 256, 1, 10)
    assert weighted_lip(np.full(256, 3.0), 0.5, g) == 0.0


@pytest.mark.parametrize("delta", [0.0, 0.5])
def test_weighted_lip_brute_force(delta):
    g = make_grid(8, 64, 1, 10)
    z = g.z
    # the truncated identity jumps at +-1, which dominates the interior slope
    f = np.where(np.abs(z) <= 1, z, 0.0)
    assert weighted_lip(f, delta, g) == pytest.approx(_brute_lip(f, z, delta), rel=1e-12)


def test_weighted_lip_clipped_identity():
    g = make_grid(8, 64, 1, 10)
    f = np.clip(g.z, -1, 1)
    assert weighted_lip(f, 0.0, g) == pytest.approx(1 / math.e, rel=1e-12)
    assert weighted_lip_exact(f, 0.0, g) == pytest.approx(1 / math.e, rel=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_weighted_lip_stride_vs_exact(seed):
    g = make_grid(8, 256, 1, 10)
    rng = np.random.default_rng(seed)
    f = np.sin(rng.uniform(0.5, 3) * g.z + rng.uniform(0, 6)) * np.exp(-0.1 * g.z**2)
    fast, exact = weighted_lip(f, 0.3, g), weighted_lip_exact(f, 0.3, g)
    assert fast <= exact * (1 + 1e-12)
    assert fast >= 0.95 * exact


def test_weighted_lip_rejects_delta():
    with pytest.raises(ValueError):
        weighted_lip(np.zeros(16), -1, make_grid(8, 16, 1, 1))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_norm_homogeneity(seed, a):
    g = make_grid(8, 64, 1, 10)
    f = np.random.default_rng(seed).standard_normal(64)
    for norm in (lambda h: weighted_sup_norm(h, g), lambda h: weighted_lip(h, 0.2, g),
                 lambda h: norm_1delta(h, 0.2, g)):
        assert norm(a * f) == pytest.approx(abs(a) * norm(f), rel=1e-12, abs=1e-300)
    assert norm_1delta(f, 0.2, g) == weighted_sup_norm(f, g) + weighted_lip(f, 0.2, g)


@pytest.mark.parametrize("delta", [0.0, 0.5, 1.0])
def test_lambda_product_bound(delta):
    rng = np.random.default_rng(7)

    def sides(n):
        a, b = rng.uniform(-6, 6, n), rng.uniform(-6, 6, n)
        lhs = lambda_weight(np.maximum(np.abs(a - b), 1), delta)
        rhs = lambda_weight(np.maximum(np.abs(a), 1), delta) * lambda_weight(np.maximum(np.abs(b), 1), delta)
        return lhs, rhs

    lhs, rhs = sides(2000)
    C = fit_constant(lhs, rhs)
    lhs, rhs = sides(20000)
    assert np.all(lhs <= C * rhs)


def test_aniso_metric():
    d = AnisoMetric(0.25, 0.5)
    assert d(0, 0) == 0
    assert d(0.3, -0.2) == d(-0.3, 0.2)
    assert d(16, 4) == pytest.approx(4.0)
    for bad in [(0, 0.5), (1.2, 0.5), (0.5, -1)]:
        with pytest.raises(ValueError):
            AnisoMetric(*bad)


GAPS = [2.0**-k for k in range(2, 7)]


def test_estimator_linear_function():
    t0 = 0.3
    samples = [np.full(200, (t0 + h) - t0) for h in GAPS]
    rep = estimate_holder_exponent(samples, GAPS, target=1.0, tolerance=0.02)
    assert rep.slope == pytest.approx(1.0, abs=1e-12)
    assert rep.passed


def test_estimator_random_walk():
    # cumulative sums of independent Gaussian steps on [0, 1]
    rng = np.random.default_rng(12)
    n = 1024
    B = np.concatenate([np.zeros((1000, 1)), np.cumsum(rng.standard_normal((1000, n)) / math.sqrt(n), axis=1)], axis=1)
    starts = np.arange(0, n // 2, 32)
    samples = [B[:, starts + int(h * n)] - B[:, starts] for h in GAPS]
    rep = estimate_holder_exponent(samples, GAPS, target=0.5, tolerance=0.05)
    assert rep.passed, rep.summary()


def _fbm(H, times, replicas, seed):
    rng = np.random.default_rng(seed)
    if H == 1.0:
        return np.outer(rng.standard_normal(replicas), times)
    t, s = np.meshgrid(times, times, indexing="ij")
    cov = 0.5 * (t ** (2 * H) + s ** (2 * H) - np.abs(t - s) ** (2 * H))
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(len(times)))
    return rng.standard_normal((replicas, len(times))) @ L.T


@pytest.mark.parametrize("H", [0.25, 0.5, 1.0])
def test_estimator_fractional_processes(H):
    n = 128
    times = np.arange(1, n + 1) / n
    X = _fbm(H, times, 1000, seed=int(100 * H))
    bases = np.array([32, 40, 48]) - 1  # indices of t = 0.25, 0.3125, 0.375
    samples = [X[:, bases + int(h * n)] - X[:, bases] for h in GAPS]
    rep = estimate_holder_exponent(samples, GAPS, target=H, tolerance=0.05)
    assert rep.passed, rep.summary()


def test_estimator_metric_mode():
    d = AnisoMetric(1.0, 1.0)
    gaps = [(h, 0.0) for h in GAPS]
    samples = [np.full(200, h) for h in GAPS]
    rep = estimate_holder_exponent(samples, gaps, metric=d)
    assert rep.abscissa == sorted(GAPS)
    assert rep.slope == pytest.approx(1.0)


@pytest.mark.parametrize(
    "samples, gaps, match",
    [
        ([np.ones(200)] * 3, GAPS[:3], "levels"),
        ([np.ones(100)] * 5, GAPS, "replicas"),
        ([np.zeros(200)] * 5, GAPS, "degenerate"),
        ([np.ones(200)] * 5, GAPS[:4], "gap"),
    ],
)
def test_estimator_rejects(samples, gaps, match):
    with pytest.raises(ValueError, match=match):
        estimate_holder_exponent(samples, gaps)


def test_fit_slope_exact_power_law():
    x = np.array([0.5, 0.25, 0.125, 0.0625])
    fit = fit_slope(x, 3 * x**0.7, y_se=0.01 * x**0.7)
    assert fit["slope"] == pytest.approx(0.7, abs=1e-12)
    assert fit["intercept"] == pytest.approx(math.log2(3), abs=1e-12)
    assert fit["half_width"] < 1e-10
    assert fit["slope_se"] > 0


def test_probe_report_serialization():
    rep = ProbeReport("x", [0.1, 0.2], [1.0, 2.0], [0.1, 0.1], 1.0, 0.0, np.nan, 0.1, 200, 1.0, 0.1, True)
    d = json.loads(rep.to_json())
    assert d["half_width"] == "nan" and d["passed"] is True
    assert rep.to_csv().splitlines()[0] == "abscissa,mean,stderr"
    assert rep.summary().startswith("PASS x")
    with pytest.raises(ValueError):
        ProbeReport("x", [0.2, 0.1], [1, 2], [0, 0], 1, 0, 0, 0, 1)


def test_noise_increments_shape_and_threads():
    g = make_grid(4, 64, 0.25, 64)
    a = noise_time_increments(g, 3, 300, 0.125, [2.0**-4, 2.0**-5], [10, 20], threads=1)
    b = noise_time_increments(g, 3, 300, 0.125, [2.0**-4, 2.0**-5], [10, 20], threads=4)
    assert a[0].shape == (300, 2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    s = noise_space_increments(g, 3, 10, 0.25, [1, 4])
    assert s[1].shape == (10, 64)


def test_noise_increments_match_single_path():
    from heatflow.noise import noise_path

    g = make_grid(4, 64, 0.25, 64)
    inc = noise_time_increments(g, 5, 3, 0.125, [2.0**-4], [7])
    V = noise_path(sample_white_noise(g, 5, 2))
    assert inc[0][2, 0] == pytest.approx(V.at(0.1875)[7] - V.at(0.125)[7], abs=1e-14)


def test_averaging_increment_equal_points():
    g = make_grid(8, 128, 0.5, 200)
    W = sample_white_noise(g, 1)
    assert averaging_increment(W, DriftSpec.sign(1), HolderFnSpec.zero(), 0.3, 0.3, 0.0, 0.1, 0.4) == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_averaging_increment_lipschitz_bound(seed):
    g = make_grid(8, 128, 0.5, 200)
    W = sample_white_noise(g, seed)
    b = DriftSpec.smooth(1.5, 2.0)
    f = HolderFnSpec.time_power(0.5, 0.8)
    x, y, t1, t2 = 0.2, -0.1, 0.1, 0.3
    val = averaging_increment(W, b, f, x, y, 0.5, t1, t2, s=0.1)
    assert abs(val) <= b.lipschitz * abs(x - y) * (t2 - t1) * (1 + 1e-12)
    assert val != 0.0


def test_averaging_increment_rejects():
    g = make_grid(8, 128, 0.5, 200)
    W = sample_white_noise(g, 1)
    with pytest.raises(ValueError):
        averaging_increment(W, DriftSpec.sign(1), HolderFnSpec.zero(), 1, 0, 0.0, 0.3, 0.1)
    with pytest.raises(ValueError):
        averaging_increment(W, DriftSpec.sign(1), HolderFnSpec.zero(), 1, 0, 0.0, 0.1, 0.4, s=0.2)


@pytest.mark.parametrize("h, gamma, expected", [(1.0, 0.0, 0.75), (0.75, 0.0, 0.75), (1.0, 0.75, 0.75), (0.5, 0.5, 0.5)])
def test_smoothing_target(h, gamma, expected):
    assert smoothing_target(h, gamma) == pytest.approx(expected)


def test_smoothing_target_singular():
    assert smoothing_target(0.75, 1.0) == pytest.approx(0.5)


def _spec(b, **kw):
    g = make_grid(4, 64, 0.25, 128)
    base = dict(b=b, f=HolderFnSpec.zero(), grid=g, levels=tuple(2.0**-k for k in range(2, 6)), x=0.05, y=-0.05,
                zidx=(16, 32), replicas=50, seed=0)
    base.update(kw)
    return SmoothingProbeSpec(**base)


@pytest.mark.parametrize("b", [DriftSpec.zero(), DriftSpec.constant(2.0)], ids=["zero", "constant"])
def test_smoothing_degenerate(b):
    rep = smoothing_probe(_spec(b))
    assert rep.status == "degenerate" and rep.passed
    assert rep.mean == [0.0] * 4


@pytest.mark.parametrize(
    "kw",
    [dict(f=HolderFnSpec.time_power(1, 0.4)), dict(levels=(0.25, 0.125)), dict(x=0.1, y=0.1),
     dict(f=HolderFnSpec(lambda t, z: 0 * t, 1.0, 1.5))],
)
def test_smoothing_spec_rejects(kw):
    with pytest.raises(ValueError):
        _spec(DriftSpec.sign(1), **kw)


MOMENT_GRID = make_grid(4, 64, 0.25, 128)
MOMENT_LEVELS = [2.0**-k for k in range(2, 6)]


def test_moment_zero_derivative():
    rep = moment_probe(DriftSpec.constant(3.0), 2, MOMENT_GRID, MOMENT_LEVELS, 20, 0)
    assert rep.mean == [0.0] * 4 and rep.status == "degenerate"


@pytest.mark.parametrize("p", [2, 3, 1.5])
def test_moment_unit_derivative(p):
    rep = moment_probe(np.ones_like, p, MOMENT_GRID, MOMENT_LEVELS, 20, 0)
    assert np.allclose(rep.mean, np.array(sorted(MOMENT_LEVELS)) ** p, rtol=1e-12)
    assert rep.slope == pytest.approx(p, abs=1e-10)


def test_moment_two_point_same_point_vanishes():
    j = MOMENT_GRID.nz // 2
    rep = moment_probe(DriftSpec.smooth(1, 1), 2, MOMENT_GRID, MOMENT_LEVELS, 20, 0, zidx=(j,), two_point=(0.2, 0.2, j))
    assert rep.status == "degenerate"


def test_moment_rejects():
    with pytest.raises(ValueError):
        moment_probe(DriftSpec.sign(1), 2, MOMENT_GRID, MOMENT_LEVELS, 20, 0)
    with pytest.raises(ValueError):
        moment_probe(DriftSpec.smooth(1, 1), 2, MOMENT_GRID, MOMENT_LEVELS[:3], 20, 0)


def test_occupation_empty_set_rejected():
    with pytest.raises(ValueError, match="positive length"):
        occupation_probe(MOMENT_GRID, 0, [[(0.0, 0.0)]], 10)


def test_occupation_covering_set():
    g = MOMENT_GRID
    rep = occupation_probe(g, 0, [[(-10, 10)], [(0.5, 0.5 + 1e-9)]], 20)
    # the covering set is hit at every step; V(0) = 0 so the tiny set avoids 0
    assert rep.mean[-1] == pytest.approx(g.T, rel=1e-12)
    assert rep.extra["sqrt_bound_holds"]


def test_occupation_shift_horizon():
    with pytest.raises(ValueError):
        occupation_probe(MOMENT_GRID, 0, [[(0, 1)]], 10, s=0.125, T=0.25)
