"""Batch runner: ``heatflow <scenario> --config <path> [--seed N] [--out DIR]``.

Configs are flat ``key=value`` text; ``#`` starts a comment. Outputs are
``manifest.json``, ``report.json``, one CSV per table, and a PASS/FAIL line
per assertion on stdout. The exit status is 0 iff every assertion passes.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .analysis import ProbeError, _jsonable
from .drift import parse_drift, parse_initial_condition
from .scenarios import DEFAULTS, SCENARIOS

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "run", "main"]

COMMON = {"scenario": str, "seed": int, "out": str, "formats": str}
FORMATS = ("csv", "json", "bin")


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None, key: str | None = None):
        where = "".join([f"line {line}: " if line else "", f"key {key!r}: " if key else ""])
        super().__init__(where + msg)
        self.line = line
        self.key = key


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int
    params: dict
    out: str = "heatflow-out"
    formats: tuple = ("csv", "json")
    explicit: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        return {"scenario": self.scenario, "seed": self.seed, "formats": ",".join(self.formats), **self.params}


def _convert(raw: str, typ, key, line):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"expected {typ.__name__}, got {raw!r}", line, key) from None


def parse_config(text: str, seed: int | None = None, scenario: str | None = None) -> ExperimentConfig:
    """Strict parse: unknown or duplicate keys, bad types, unknown catalog
    names and a missing seed are errors. ``seed``/``scenario`` arguments
    override or supply the corresponding keys."""
    seen: dict[str, tuple[str, int]] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected key=value", n)
        key, val = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", n)
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key][1]})", n, key)
        seen[key] = (val, n)
    scen = scenario if scenario is not None else seen.get("scenario", (None, None))[0]
    if scen is None:
        raise ConfigError("missing mandatory key", key="scenario")
    if "scenario" in seen and scenario is not None and seen["scenario"][0] != scenario:
        raise ConfigError(f"config is for {seen['scenario'][0]!r}, not {scenario!r}", seen["scenario"][1], "scenario")
    if scen not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scen!r}", seen.get("scenario", (None, None))[1], "scenario")
    defaults = DEFAULTS[scen]
    params = dict(defaults)
    explicit = {}
    for key, (val, n) in seen.items():
        if key in COMMON:
            continue
        if key not in defaults:
            raise ConfigError(f"unknown key for scenario {scen!r}", n, key)
        typ = type(defaults[key])
        params[key] = explicit[key] = _convert(val, typ, key, n)
    if seed is None:
        if "seed" not in seen:
            raise ConfigError("missing mandatory key", key="seed")
        seed = _convert(seen["seed"][0], int, "seed", seen["seed"][1])
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must fit in 64 bits", key="seed")
    for key, parser in (("drift", parse_drift), ("ic", parse_initial_condition)):
        if key in params:
            try:
                parser(params[key])
            except ValueError as exc:
                raise ConfigError(str(exc), seen.get(key, (None, None))[1], key) from None
    formats = tuple(f.strip() for f in seen.get("formats", ("csv,json", 0))[0].split(",") if f.strip())
    for f in formats:
        if f not in FORMATS:
            raise ConfigError(f"unknown output format {f!r}", seen["formats"][1], "formats")
    out = seen.get("out", ("heatflow-out", 0))[0]
    return ExperimentConfig(scen, seed, params, out, formats, explicit)


def run(cfg: ExperimentConfig, out: str | Path | None = None, stream=None) -> int:
    """Run a scenario, write artifacts to ``out`` and return the exit status."""
    stream = stream or sys.stdout
    outdir = Path(out if out is not None else cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    error = None
    try:
        result = SCENARIOS[cfg.scenario](cfg.params, cfg.seed)
    except ProbeError as exc:
        from .scenarios import Check, ScenarioResult

        result = ScenarioResult(checks=[Check(f"{cfg.scenario}.probe", False, str(exc))])
        if exc.report is not None:
            result.reports.append(exc.report)
        error = str(exc)
    wall = time.perf_counter() - t0
    if "csv" in cfg.formats:
        for stem, text in sorted(result.tables.items()):
            (outdir / f"{stem}.csv").write_text(text)
    if "bin" in cfg.formats:
        for name, writer in sorted(result.binaries.items()):
            writer(outdir / name)
    report = {
        "scenario": cfg.scenario,
        "passed": result.passed,
        "checks": [{"name": c.name, "passed": bool(c.passed), "detail": c.detail} for c in result.checks],
        "reports": [r.to_dict() for r in result.reports],
    }
    if error:
        report["error"] = error
    if "json" in cfg.formats:
        (outdir / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    manifest = {"config": cfg.resolved(), "version": __version__, "wall_time_s": wall}
    (outdir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    for c in result.checks:
        print(c.line(), file=stream)
    return 0 if result.passed else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="heatflow", description=__doc__.splitlines()[0])
    ap.add_argument("scenario", choices=sorted(SCENARIOS))
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args(argv)
    try:
        cfg = parse_config(args.config.read_text(), seed=args.seed, scenario=args.scenario)
    except (ConfigError, OSError) as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return 2
    return run(cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
