"""Experiment scenarios with embedded assertions.

Each function takes resolved parameters and returns a
:class:`ScenarioResult` of named checks, CSV tables and probe reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    SmoothingProbeSpec,
    estimate_holder_exponent,
    moment_probe,
    noise_space_increments,
    noise_time_increments,
    occupation_probe,
    smoothing_probe,
)
from .core import make_grid
from .drift import DriftSpec, HolderFnSpec, InitialCondition, parse_drift, parse_initial_condition
from .noise import (
    coarsen_noise,
    covariance_diff_oracle,
    map_replicas,
    noise_path_batch,
    sample_white_noise,
    script_v_batch,
    variance_oracle_v,
)
from .solver import (
    SolveConfig,
    continuity_in_q_probe,
    flow_composition_defect,
    flow_map,
    solve,
    solve_marching,
    solve_picard,
)

__all__ = ["Check", "ScenarioResult", "SCENARIOS", "DEFAULTS"]


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class ScenarioResult:
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # file stem -> csv text
    reports: list = field(default_factory=list)
    binaries: dict = field(default_factory=dict)  # file name -> callable(path)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r))
    return "\n".join(lines) + "\n"


def _grid(p):
    return make_grid(p["L"], p["nz"], p["T"], p["nt"])


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


# defaults double as the acceptance parameters
DEFAULTS = {
    "simulate": dict(L=8.0, nz=256, T=1.0, nt=1000, drift="sign:1", ic="bump:0:1", scheme="marching", s=0.0,
                     record_every=10),
    "covariance": dict(L=8.0, nz=256, T=1.0, nt=1000, replicas=2000, times="0.25,0.5,1", r=0.25, s=0.75, t=1.0,
                       lags="1,2,4", rel_tol=0.05),
    "holder": dict(L=4.0, nz=512, T=1.0, nt=2048, replicas=500, base_time=0.5, time_gaps="4,5,6,7,8",
                   space_time=1.0, space_lags="2,4,8,16,32", z_stride=16),
    "flow-check": dict(L=8.0, nz=256, T=1.0, nt=1000, flow_nt=1024, drift="sign:1", ic="bump:0:1", r=0.0, s=0.5,
                       t=1.0, halvings=3, const=0.7, picard_tol=1e-12, agree_tol=1e-2),
    "continuity": dict(L=8.0, nz=256, T=1.0, nt=1000, drift="sign:1", s=0.0, t=1.0, lo=-1.03125, hi=1.03125,
                       levels=11),
    "smoothing": dict(L=4.0, nz=128, T=0.5, nt=2048, replicas=2000, drift="step:0:10", x=0.05, y=-0.05,
                      gaps="1,2,3,4,5", z_stride=4, s=0.0, t1=0.0),
    "moments": dict(L=4.0, nz=128, T=0.5, nt=2048, replicas=2000, drift="sin:1:1", p=2.0, delta=0.0,
                    gaps="1,2,3,4", z_stride=8, t1=0.0),
    "occupation": dict(L=8.0, nz=256, T=1.0, nt=1000, replicas=1000, center=0.25, width=0.2, halvings=4,
                       z_stride=8, s=0.0),
}


def simulate(p, seed) -> ScenarioResult:
    g = _grid(p)
    W = sample_white_noise(g, seed)
    cfg = SolveConfig(p["scheme"], record_every=p["record_every"])
    sol = solve(W, p["s"], parse_initial_condition(p["ic"]), parse_drift(p["drift"]), g, cfg)
    res = ScenarioResult()
    t = np.repeat(sol.u.times, g.nz)
    z = np.tile(g.z, len(sol.u.steps))
    res.tables["field"] = _csv(["t", "z", "u"], zip(t, z, sol.u.values.ravel()))
    from .solver import export_binary

    res.binaries["field.bin"] = lambda path: export_binary(sol, path)
    res.checks.append(Check("simulate.finite", bool(np.isfinite(sol.u.values).all()),
                            f"{len(sol.u.steps)} slices, sup |u| = {np.abs(sol.u.values).max():.6g}"))
    return res


def covariance(p, seed) -> ScenarioResult:
    g = _grid(p)
    res = ScenarioResult()
    times = _floats(p["times"])
    ks = [g.index_of(t) for t in times]
    R = p["replicas"]

    def block(ids):
        keep = {}
        for k, v in noise_path_batch(g, seed, ids):
            if k in ks:
                keep[k] = v.copy()
            if k >= max(ks):
                break
        return np.stack([keep[k] for k in ks], axis=1)

    V = np.concatenate(map_replicas(block, range(R)))
    rows = []
    for i, t in enumerate(times):
        # Var(V(0,t,z)) is the same at every z: pool the per-position estimates
        est = float(V[:, i].var(axis=0, ddof=1).mean())
        ref = variance_oracle_v(t)
        rel = est / ref - 1
        rows.append((t, est, ref, rel))
        res.checks.append(Check(f"variance.t={t:g}", abs(rel) <= p["rel_tol"], f"{est:.5f} vs {ref:.5f} ({rel:+.2%})"))
    res.tables["variance"] = _csv(["t", "estimate", "oracle", "rel_error"], rows)

    r, s, t = p["r"], p["s"], p["t"]
    # second seed stream: independent of the variance replicas
    X = np.concatenate(map_replicas(lambda ids: script_v_batch(g, seed + 1, ids, r, s, t), range(R)))
    rows = []
    for lag in (int(v) for v in _floats(p["lags"])):
        d = np.roll(X, -lag, axis=1) - X
        est = float(d.var(axis=0, ddof=1).mean())
        ref = covariance_diff_oracle(r, s, t, lag * g.dz)
        rel = est / ref - 1
        rows.append((lag * g.dz, est, ref, rel))
        res.checks.append(Check(f"covariance_diff.dz={lag * g.dz:g}", abs(rel) <= p["rel_tol"],
                                f"{est:.6f} vs {ref:.6f} ({rel:+.2%})"))
    res.tables["covariance_diff"] = _csv(["dz", "estimate", "oracle", "rel_error"], rows)
    return res


def holder(p, seed) -> ScenarioResult:
    g = _grid(p)
    res = ScenarioResult()
    R = p["replicas"]
    gaps = [2.0 ** -int(e) for e in _floats(p["time_gaps"])]
    zidx = np.arange(0, g.nz, p["z_stride"])
    inc = noise_time_increments(g, seed, R, p["base_time"], gaps, zidx)
    rt = estimate_holder_exponent(inc, gaps, target=0.25, tolerance=0.1, name="holder.time")
    rt_ok = 0.15 <= rt.slope <= 0.35
    lags = [int(v) for v in _floats(p["space_lags"])]
    inc = noise_space_increments(g, seed + 1, R, p["space_time"], lags)
    rs = estimate_holder_exponent(inc, [l * g.dz for l in lags], target=0.5, tolerance=0.1, name="holder.space")
    rs_ok = 0.40 <= rs.slope <= 0.60
    for rep, ok in ((rt, rt_ok), (rs, rs_ok)):
        res.reports.append(rep)
        res.tables[rep.name.replace(".", "_")] = rep.to_csv()
        res.checks.append(Check(rep.name, bool(ok), f"exponent {rep.slope:.4f} +- {rep.half_width:.3f}"))
    return res


def flow_check(p, seed) -> ScenarioResult:
    res = ScenarioResult()
    q = parse_initial_condition(p["ic"])
    r, s, t = p["r"], p["s"], p["t"]
    # composition defects across dt-halvings (coarsening one noise path)
    gf = make_grid(p["L"], p["nz"], p["T"], p["flow_nt"])
    Wf = sample_white_noise(gf, seed)
    levels = [Wf]
    for _ in range(p["halvings"]):
        levels.append(coarsen_noise(levels[-1], 2, 1))
    levels = levels[::-1]  # coarse to fine
    rows = []
    defects = {}
    for name, b in (("zero", DriftSpec.zero()), ("constant", DriftSpec.constant(p["const"])),
                    (p["drift"], parse_drift(p["drift"]))):
        ds = []
        for W in levels:
            ds.append(flow_composition_defect(W, r, s, t, q, b))
        defects[name] = ds
        for W, d in zip(levels, ds):
            rows.append((name, W.grid.dt, d))
    # refinement self-error: same path, dt vs dt/2
    b = parse_drift(p["drift"])
    self_err = []
    for Wc, Wfine in zip(levels[:-1], levels[1:]):
        uc = flow_map(Wc, r, t, q, b)
        uf = flow_map(Wfine, r, t, q, b)
        self_err.append(float(np.abs(uc - uf).max()))
    res.tables["composition_defect"] = _csv(["drift", "dt", "defect"], rows)
    for name in ("zero", "constant"):
        worst = max(defects[name])
        res.checks.append(Check(f"flow.defect.{name}", worst <= 1e-10, f"max defect {worst:.3g}"))
    ds = defects[p["drift"]]
    halves = all(d1 <= 0.7 * d0 for d0, d1 in zip(ds[:-1], ds[1:]))
    res.checks.append(Check(f"flow.defect_halving.{p['drift']}", halves,
                            "defects " + ", ".join(f"{d:.3g}" for d in ds)))
    within = all(d <= 5 * e for d, e in zip(ds[1:], self_err))
    res.checks.append(Check(f"flow.defect_vs_self_error.{p['drift']}", within,
                            "self errors " + ", ".join(f"{e:.3g}" for e in self_err)))

    # Picard vs marching under joint space-time refinement
    g = _grid(p)
    W = sample_white_noise(g, seed + 1)
    joint = [coarsen_noise(W, 4, 4), coarsen_noise(W, 2, 2), W]
    cfg = SolveConfig("picard", picard_tol=p["picard_tol"])
    rows, diffs = [], []
    for Wl in joint:
        m = solve_marching(Wl, 0.0, q, b)
        pc = solve_picard(Wl, 0.0, q, b, cfg=cfg)
        d = float(np.abs(m.u.values - pc.u.values).max())
        diffs.append(d)
        rows.append((Wl.grid.nz, Wl.grid.dt, d, pc.iterations))
    res.tables["picard_vs_marching"] = _csv(["nz", "dt", "sup_difference", "picard_iterations"], rows)
    mono = all(b_ < a_ for a_, b_ in zip(diffs[:-1], diffs[1:]))
    res.checks.append(Check("uniqueness.monotone", mono, "differences " + ", ".join(f"{d:.3g}" for d in diffs)))
    res.checks.append(Check("uniqueness.finest", diffs[-1] < p["agree_tol"], f"{diffs[-1]:.3g} < {p['agree_tol']:g}"))
    return res


def continuity(p, seed) -> ScenarioResult:
    g = _grid(p)
    W = sample_white_noise(g, seed)
    b = parse_drift(p["drift"])
    lo, hi = p["lo"], p["hi"]
    q = InitialCondition.indicator(lo, hi)
    qs = [InitialCondition.smooth_indicator(lo, hi, 2.0**-n) for n in range(p["levels"])]
    d = continuity_in_q_probe(W, p["s"], p["t"], qs, q, b, g)
    # scheme tolerance: cross-scheme disagreement for the limit datum on this path
    um = flow_map(W, p["s"], p["t"], q, b, g, SolveConfig("marching"))
    up = flow_map(W, p["s"], p["t"], q, b, g, SolveConfig("picard"))
    tol = float(np.abs(um - up).max())
    res = ScenarioResult()
    res.tables["continuity"] = _csv(["eps", "distance"], [(2.0**-n, v) for n, v in enumerate(d)])
    nonincr = all(b_ <= a_ for a_, b_ in zip(d[:-1], d[1:]))
    res.checks.append(Check("continuity.non_increasing", nonincr, ", ".join(f"{v:.3g}" for v in d)))
    res.checks.append(Check("continuity.final", d[-1] <= 2 * tol, f"{d[-1]:.3g} <= 2 x {tol:.3g}"))
    return res


def _report_result(rep, checks) -> ScenarioResult:
    res = ScenarioResult()
    res.reports.append(rep)
    res.tables[rep.name] = rep.to_csv()
    res.checks.extend(checks)
    return res


def smoothing(p, seed) -> ScenarioResult:
    g = _grid(p)
    spec = SmoothingProbeSpec(
        parse_drift(p["drift"]), HolderFnSpec.zero(), g, tuple(2.0 ** -int(e) for e in _floats(p["gaps"])),
        p["x"], p["y"], tuple(range(0, g.nz, p["z_stride"])), p["replicas"], seed, p["s"], p["t1"],
    )
    rep = smoothing_probe(spec)
    return _report_result(rep, [
        Check("smoothing.slope", rep.extra.get("slope_ok", rep.passed),
              f"{rep.slope:.4f} vs {rep.target:.3g} +- {rep.tolerance:g}"),
        Check("smoothing.linearity", rep.extra.get("linearity_ok", rep.passed),
              f"max deviation {rep.extra.get('linearity_max_deviation', 0.0):.3f} (limit 0.15)"),
    ])


def moments(p, seed) -> ScenarioResult:
    g = _grid(p)
    rep = moment_probe(parse_drift(p["drift"]), p["p"], g, [2.0 ** -int(e) for e in _floats(p["gaps"])],
                       p["replicas"], seed, zidx=tuple(range(0, g.nz, p["z_stride"])), delta=p["delta"],
                       t1=p["t1"])
    ok = bool(rep.passed)
    return _report_result(rep, [Check("moments.slope", ok, f"{rep.slope:.4f} vs {rep.target:.3g} +- 0.15 "
                                                           f"[{rep.status}]")])


def occupation(p, seed) -> ScenarioResult:
    g = _grid(p)
    c, w = p["center"], p["width"]
    sets = [[(c - w * 2.0**-i / 2, c + w * 2.0**-i / 2)] for i in range(p["halvings"] + 1)]
    rep = occupation_probe(g, seed, sets, p["replicas"], zidx=tuple(range(0, g.nz, p["z_stride"])), s=p["s"])
    ratios = rep.extra["ratios"]
    return _report_result(rep, [
        Check("occupation.ratios", bool(rep.passed), ", ".join(f"{r:.4f}" for r in ratios) + " vs 0.7071 +- 0.15"),
        Check("occupation.sqrt_bound", rep.extra["sqrt_bound_holds"], f"C_fit = {rep.extra['c_fit']:.4f}"),
    ])


SCENARIOS = {
    "simulate": simulate,
    "covariance": covariance,
    "holder": holder,
    "flow-check": flow_check,
    "continuity": continuity,
    "smoothing": smoothing,
    "moments": moments,
    "occupation": occupation,
}
