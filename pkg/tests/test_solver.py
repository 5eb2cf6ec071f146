import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heatflow.core import make_grid
from heatflow.drift import DriftSpec, InitialCondition
from heatflow.kernel import fit_constant, kernel_convolve
from heatflow.noise import (
    FIELD_MAGIC,
    coarsen_noise,
    noise_path,
    read_binary,
    sample_white_noise,
    zero_noise,
)
from heatflow.solver import (
    AprioriBoundError,
    NonConvergence,
    SolveConfig,
    SolverError,
    apriori_bound,
    continuity_in_q_probe,
    export_binary,
    export_csv,
    flow_composition_defect,
    flow_map,
    shift_noise,
    shift_solution,
    solution_difference,
    solve,
    solve_marching,
    solve_picard,
)

BUMP = InitialCondition.bump(0, 1)
PICARD = SolveConfig("picard")


@pytest.fixture(scope="module")
def grid():
    return make_grid(8, 128, 0.5, 200)


@pytest.fixture(scope="module")
def noise(grid):
    return sample_white_noise(grid, 11)


@pytest.mark.parametrize("s", [0.0, 0.2])
def test_zero_drift_is_free_part(grid, noise, s):
    sol = solve_marching(noise, s, BUMP, DriftSpec.zero())
    V = noise_path(noise, s)
    q0 = BUMP.sample(grid)
    for k in sol.u.steps:
        t = grid.time(k)
        ref = kernel_convolve(q0, t - grid.time(grid.index_of(s)), grid) + V.field.at_step(k)
        assert np.max(np.abs(sol.u.at_step(k) - ref)) <= 1e-10


@pytest.mark.parametrize("cfg", [SolveConfig(), PICARD], ids=["marching", "picard"])
@pytest.mark.parametrize("c", [-0.7, 1.3])
def test_constant_drift_no_noise(grid, cfg, c):
    s = 0.1
    sol = solve(zero_noise(grid), s, InitialCondition.zero(), DriftSpec.constant(c), cfg=cfg)
    for k in sol.u.steps:
        assert np.allclose(sol.u.at_step(k), c * (grid.time(k) - s), atol=1e-10, rtol=0)


def test_anchor_slice_reproduces_q(grid, noise):
    for cfg in (SolveConfig(), PICARD):
        sol = solve(noise, 0.1, BUMP, DriftSpec.sign(1), cfg=cfg)
        assert np.array_equal(sol.at(0.1), BUMP.sample(grid))
        assert sol.anchor == pytest.approx(0.1)


def test_picard_zero_drift_one_sweep(noise):
    sol = solve_picard(noise, 0.0, BUMP, DriftSpec.zero())
    assert sol.iterations == 1
    ref = solve_marching(noise, 0.0, BUMP, DriftSpec.zero())
    assert np.array_equal(sol.u.values, ref.u.values)


def _sweep_changes(W, b, sweeps):
    out = []
    for m in range(1, sweeps + 1):
        try:
            solve_picard(W, 0.0, BUMP, b, cfg=SolveConfig("picard", picard_tol=1e-300, picard_max_iters=m))
        except NonConvergence as exc:
            out.append(exc.change)
    return np.array(out)


def test_picard_contracts_for_lipschitz_drift():
    g = make_grid(8, 128, 0.1, 100)
    W = sample_white_noise(g, 3)
    b = DriftSpec.smooth(1.0, 2.0)
    ch = _sweep_changes(W, b, 6)
    ratios = ch[1:] / ch[:-1]
    # discrete Lipschitz constant of the drift integral operator
    contraction = b.lipschitz * apriori_bound(g, DriftSpec.constant(1), g.nt, "picard")[-1]
    assert contraction == pytest.approx(b.lipschitz * g.T, rel=0.01)
    assert np.all(ratios <= contraction)


def test_picard_terminates_within_step_count():
    g = make_grid(8, 64, 0.5, 12)
    W = sample_white_noise(g, 5)
    sol = solve_picard(W, 0.0, BUMP, DriftSpec.sign(1), cfg=SolveConfig("picard", picard_tol=1e-300))
    assert sol.iterations <= g.nt + 1
    assert sol.last_change == 0.0


def test_picard_nonconvergence_reported(noise):
    with pytest.raises(NonConvergence) as info:
        solve_picard(noise, 0.0, BUMP, DriftSpec.sign(1), cfg=SolveConfig("picard", picard_max_iters=1))
    assert info.value.iterations == 1 and info.value.change > 0


def test_schemes_agree_for_sign_drift():
    g = make_grid(8, 256, 1, 1000)
    W = sample_white_noise(g, 1)
    b = DriftSpec.sign(1)
    m = solve_marching(W, 0.0, BUMP, b)
    p = solve_picard(W, 0.0, BUMP, b)
    assert np.max(np.abs(m.u.values - p.u.values)) <= 1e-2


@pytest.mark.parametrize("scheme", ["marching", "picard"])
def test_nonfinite_aborts_with_step(grid, noise, scheme):
    q = BUMP.sample(grid)
    q[5] = np.nan
    with pytest.raises(SolverError) as info:
        solve(noise, 0.1, q, DriftSpec.sign(1), cfg=SolveConfig(scheme))
    assert info.value.step == grid.index_of(0.1) + (1 if scheme == "marching" else 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_overflow_aborts(grid):
    q = np.full(grid.nz, 1e308)
    with pytest.raises(SolverError):
        solve_marching(zero_noise(grid), 0.0, q, DriftSpec.constant(1e308))


@pytest.mark.parametrize("scheme", ["marching", "picard"])
def test_apriori_bound_holds(grid, noise, scheme):
    b = DriftSpec.step([(-0.5, 0.5)])
    sol = solve(noise, 0.0, BUMP, b, cfg=SolveConfig(scheme))
    bound = apriori_bound(grid, b, grid.nt, scheme)
    assert np.all(np.abs(sol.drift_part.values).max(axis=1) <= bound + 1e-12)
    # never below the continuous bound (t - s) ||b||, and close to it
    t = grid.times
    assert np.all(bound >= t * b.sup_norm - 1e-12)
    assert bound[-1] <= 1.05 * grid.T * b.sup_norm


def test_apriori_bound_violation_detected(grid, monkeypatch):
    import heatflow.solver as mod

    monkeypatch.setattr(mod, "apriori_bound", lambda g, b, n, scheme="marching": np.zeros(n + 1))
    with pytest.raises(AprioriBoundError):
        solve_marching(zero_noise(grid), 0.0, BUMP, DriftSpec.constant(1))


@pytest.mark.parametrize(
    "kwargs", [dict(scheme="euler"), dict(picard_tol=0), dict(picard_max_iters=0), dict(record_every=0)]
)
def test_config_rejects(kwargs):
    with pytest.raises(ValueError):
        SolveConfig(**kwargs)


def test_record_every_keeps_last(grid, noise):
    sol = solve_marching(noise, 0.0, BUMP, DriftSpec.sign(1), cfg=SolveConfig(record_every=30))
    assert sol.u.steps[0] == 0 and sol.u.steps[-1] == grid.nt
    assert np.all(np.diff(sol.u.steps) <= 30)
    full = solve_marching(noise, 0.0, BUMP, DriftSpec.sign(1))
    assert np.array_equal(sol.final(), full.final())


def test_scheme_consistency_rate():
    # refine dt only on a coarse space mesh, same path at every level
    fine_g = make_grid(4, 32, 1, 2048)
    fine = sample_white_noise(fine_g, 8)
    b = DriftSpec.smooth(1.0, 1.0)
    finals = []
    for f in (16, 8, 4, 2):
        W = coarsen_noise(fine, f)
        finals.append(solve_marching(W, 0.0, BUMP, b).final())
    errs = [np.abs(a - c).max() for a, c in zip(finals, finals[1:])]
    slope = np.polyfit(np.arange(len(errs)), np.log2(errs), 1)[0]
    assert slope <= -0.5


def test_gronwall_bound(grid, noise):
    b = DriftSpec.smooth(1.0, 1.5)
    q1 = BUMP.sample(grid)
    q2 = q1 + 0.01 * InitialCondition.bump(1, 0.5).sample(grid)
    d = solution_difference(solve_marching(noise, 0.0, q1, b), solve_marching(noise, 0.0, q2, b))
    assert np.abs(d.values).max() <= math.exp(b.lipschitz * grid.T) * np.abs(q1 - q2).max()


def test_drift_integral_modulus():
    g = make_grid(8, 256, 1, 1000)
    W = sample_white_noise(g, 4)
    D = solve_marching(W, 0.0, BUMP, DriftSpec.sign(1)).drift_part
    delta = 0.1
    j = g.point_index(0.0)
    k = g.index_of(0.5)

    def incr(k1, j1, k2, j2):
        return abs(D.at_step(k1)[j1] - D.at_step(k2)[j2])

    def bound(k1, j1, k2, j2):
        return abs(g.z[j1] - g.z[j2]) + abs(g.time(k1) - g.time(k2)) ** (1 - delta)

    calib = [(k, j, k, j + 4), (k, j, k + 50, j), (k, j, k + 8, j + 1), (k + 200, j - 10, k + 200, j + 10)]
    C = fit_constant([incr(*p) for p in calib], [bound(*p) for p in calib])
    fresh = [(300, j + 3, 300, j - 5), (700, j, 760, j), (100, j - 20, 140, j - 16), (900, j + 30, 902, j + 31)]
    for p in fresh:
        assert incr(*p) <= C * bound(*p)


def test_flow_map_identity(grid, noise):
    q = BUMP.sample(grid)
    assert np.array_equal(flow_map(noise, 0.3, 0.3, q, DriftSpec.sign(1)), q)
    with pytest.raises(ValueError):
        flow_map(noise, 0.3, 0.2, q, DriftSpec.sign(1))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 197), st.integers(1, 100), st.integers(1, 100))
def test_flow_composition_zero_drift(kr, a, c):
    g = make_grid(8, 128, 0.5, 200)
    W = sample_white_noise(g, 11)
    ks = min(kr + a, 199)
    kt = min(ks + c, 200)
    if not kr < ks < kt:
        return
    d = flow_composition_defect(W, g.time(kr), g.time(ks), g.time(kt), BUMP, DriftSpec.zero())
    assert d <= 1e-10


@pytest.mark.parametrize("cfg", [SolveConfig(), PICARD], ids=["marching", "picard"])
def test_flow_composition_constant_drift(grid, cfg):
    d = flow_composition_defect(zero_noise(grid), 0.0, 0.2, 0.5, BUMP, DriftSpec.constant(0.8), cfg=cfg)
    assert d <= 1e-10


def test_flow_composition_needs_order(grid, noise):
    with pytest.raises(ValueError):
        flow_composition_defect(noise, 0.2, 0.2, 0.5, BUMP, DriftSpec.zero())


def test_shift_identity_at_zero(noise):
    sol = solve_marching(noise, 0.0, BUMP, DriftSpec.sign(1))
    assert shift_solution(sol) is sol


def test_shift_reindexes(grid, noise):
    s = 0.2
    sol = solve_marching(noise, s, BUMP, DriftSpec.sign(1))
    sh = shift_solution(sol)
    assert sh.anchor == 0.0
    assert sh.grid.T == pytest.approx(grid.T - s)
    for t in (0.0, 0.05, 0.3):
        assert np.array_equal(sh.at(t), sol.at(t + s))


def test_shift_solves_shifted_equation(grid, noise):
    s = 0.2
    sh = shift_solution(solve_marching(noise, s, BUMP, DriftSpec.zero()))
    V = noise_path(noise, s)
    q = BUMP.sample(grid)
    for t in (0.05, 0.3):
        ref = kernel_convolve(q, t, grid) + V.at(t + s)
        assert np.max(np.abs(sh.at(t) - ref)) <= 1e-10
    # same answer as solving from 0 with the shifted noise
    direct = solve_marching(shift_noise(noise, s), 0.0, BUMP, DriftSpec.zero())
    assert np.allclose(direct.u.values, sh.u.values, atol=1e-12, rtol=0)


def test_solution_difference(grid, noise):
    a = solve_marching(noise, 0.0, BUMP, DriftSpec.sign(1))
    assert np.array_equal(solution_difference(a, a).values, np.zeros_like(a.u.values))
    other = solve_marching(sample_white_noise(make_grid(8, 64, 0.5, 200), 1), 0.0, BUMP, DriftSpec.sign(1))
    with pytest.raises(ValueError):
        solution_difference(a, other)
    with pytest.raises(ValueError):
        solution_difference(a, solve_marching(noise, 0.1, BUMP, DriftSpec.sign(1)))


def test_continuity_constant_sequence(grid, noise):
    d = continuity_in_q_probe(noise, 0.0, 0.5, [BUMP] * 3, BUMP, DriftSpec.sign(1))
    assert d == [0.0, 0.0, 0.0]


def test_continuity_linear_without_drift(grid, noise):
    q = InitialCondition.indicator(-1, 1).sample(grid)
    bump = InitialCondition.bump(0.5, 0.3).sample(grid)
    seq = [q + bump / n for n in range(1, 6)]
    d = continuity_in_q_probe(noise, 0.1, 0.5, seq, q, DriftSpec.zero(), envelope=(2.0, 0.0))
    ref = np.abs(kernel_convolve(bump, 0.4, grid)).max()
    assert np.allclose(d, [ref / n for n in range(1, 6)], rtol=1e-9, atol=1e-13)


def test_continuity_envelope_rejected(grid, noise):
    big = 5 * BUMP.sample(grid)
    with pytest.raises(ValueError, match="envelope"):
        continuity_in_q_probe(noise, 0.0, 0.5, [big], BUMP, DriftSpec.zero())


def test_export_csv_roundtrip(tmp_path, noise):
    sol = solve_marching(noise, 0.1, BUMP, DriftSpec.sign(1), cfg=SolveConfig(record_every=50))
    path = tmp_path / "u.csv"
    export_csv(sol, path)
    assert path.read_text().splitlines()[0] == "t,z,u"
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    g = sol.grid
    assert table.shape == (len(sol.u.steps) * g.nz, 3)
    assert np.array_equal(table[:, 2], sol.u.values.ravel())
    assert np.array_equal(table[: g.nz, 1], g.z)
    assert set(table[:, 0]) == set(sol.u.times)


def test_export_binary_roundtrip(tmp_path, noise):
    sol = solve_marching(noise, 0.0, BUMP, DriftSpec.sign(1), cfg=SolveConfig(record_every=20))
    path = tmp_path / "u.bin"
    export_binary(sol, path)
    data, head = read_binary(path)
    assert head["magic"] == FIELD_MAGIC
    assert (head["seed"], head["replica_id"]) == (11, 0)
    assert np.array_equal(data, sol.u.values)
