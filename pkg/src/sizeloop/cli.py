"""Command-line driver: size, measure, check, vary and bench.

Exit codes are a stable contract: 0 success, 1 spec not met (or every metric
failed), 2 configuration or environment error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .agent import make_proposer, run_sizing_loop
from .agent.types import AgentError, ProposerUnavailable, RunReport
from .agent.proposers import BACKENDS
from .bench import load_suite, run_bench, write_summary
from .measure import METRICS, Harness, Measurer, MetricResult, UnknownMetric, measure_suite, supply_source
from .netlist import Netlist, NetlistError, list_sources, load_netlist
from .simulator import ENV_BINARY, RawData, Simulator, SimulatorError, resolve_binary
from .spec import BackendConfig, Spec, SpecError, check_spec, evaluate_success, format_report, parse_spec
from .variation import VariationSpec, run_variation_study, write_variation

log = logging.getLogger("sizeloop")

EXIT_OK, EXIT_UNMET, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, resolved before any module runs."""

    command: str
    netlist: str | None = None
    spec: str | None = None
    out: str | None = None
    ngspice: str | None = None
    models: tuple[str, ...] = ()
    backend: BackendConfig = field(default_factory=BackendConfig)
    jobs: int = 1
    seed: int = 0
    budget: int | None = None
    metrics: tuple[str, ...] = ()
    samples: int = 50
    sigma_wl: float = 5e-9
    sigma_vth: float = 10e-3
    attempts: int = 10
    suite: str | None = None
    results: str | None = None
    sweep_dump: bool = False
    golden: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = list(self.models)
        d["metrics"] = list(self.metrics)
        d["version"] = __version__
        return d


def _abs(p: str | None) -> str | None:
    return str(Path(p).resolve()) if p else None


def _default_models(binary: str | None) -> tuple[str, ...]:
    if not binary:
        return ()
    d = Path(binary).resolve().parent / "models"
    return (str(d),) if d.is_dir() else ()


def resolve_config(args: argparse.Namespace, spec: Spec | None = None) -> RunConfig:
    """Flags override the spec file, which overrides the environment."""
    needs_sim = args.command in ("size", "measure", "vary", "bench")
    binary = None
    if needs_sim:
        try:
            binary = resolve_binary(args.ngspice)
        except SimulatorError as e:
            raise ConfigError(str(e)) from e
    models = tuple(_abs(m) for m in (args.models or [])) or _default_models(binary)
    for m in models:
        if not Path(m).is_dir():
            raise ConfigError(f"--models {m}: not a directory")

    backend = spec.backend if spec is not None else BackendConfig()
    if args.backend:
        backend = replace(backend, kind=args.backend)
    if args.model_name:
        backend = replace(backend, model=args.model_name)
    if args.script:
        backend = replace(backend, script=_abs(args.script))
    if args.seed is not None:
        backend = replace(backend, seed=args.seed)
    if backend.api_base is None and os.environ.get("EESIZER_API_BASE"):
        backend = replace(backend, api_base=os.environ["EESIZER_API_BASE"])
    if backend.kind not in BACKENDS:
        raise ConfigError(f"unknown backend {backend.kind!r}; expected one of {', '.join(BACKENDS)}")
    if backend.kind == "scripted" and not backend.script:
        raise ConfigError("the scripted backend needs --script FILE")

    metrics: tuple[str, ...] = ()
    if args.metrics:
        metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
        bad = [m for m in metrics if m not in METRICS]
        if bad:
            raise ConfigError(f"unknown metric(s) {', '.join(bad)}; valid: {', '.join(METRICS)}")
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")

    return RunConfig(
        command=args.command, netlist=_abs(args.netlist), spec=_abs(args.spec), out=_abs(args.out),
        ngspice=binary, models=models, backend=backend, jobs=args.jobs,
        seed=0 if args.seed is None else args.seed, budget=args.budget, metrics=metrics,
        samples=args.samples, sigma_wl=args.sigma_wl, sigma_vth=args.sigma_vth, attempts=args.attempts,
        suite=args.suite, results=_abs(args.results), sweep_dump=args.sweep_dump, golden=args.golden,
    )


def _simulator(cfg: RunConfig) -> Simulator:
    return Simulator(cfg.ngspice, model_dirs=cfg.models)


def _write_config(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, default=str) + "\n")


def _require(value, flag: str):
    if not value:
        raise ConfigError(f"{flag} is required")
    return value


def _load_netlist(path: str) -> Netlist:
    if not Path(path).is_file():
        raise ConfigError(f"netlist {path} not found")
    return load_netlist(path)


def _load_spec(path: str | None) -> Spec | None:
    if path is None:
        return None
    if not Path(path).is_file():
        raise ConfigError(f"spec {path} not found")
    return parse_spec(path)


# ---------------------------------------------------------------- size


def rationale_markdown(report: RunReport) -> str:
    lines = ["# Reasons for changes", ""]
    for rec in report.history:
        status = "meets spec" if rec.flags.succeed else f"{rec.passed}/{len(rec.flags.flags)} targets met"
        lines += [f"## Iteration {rec.index} ({status})", ""]
        lines.append(rec.rationale.strip() or "_no rationale given_")
        if rec.clamp_log:
            lines += ["", "Clamped:"] + [f"- {c}" for c in rec.clamp_log]
        if rec.notes:
            lines += ["", "Notes:"] + [f"- {n}" for n in rec.notes]
        lines.append("")
    return "\n".join(lines)


def cmd_size(cfg: RunConfig, spec: Spec) -> int:
    n = _load_netlist(_require(cfg.netlist, "--netlist"))
    try:
        proposer = make_proposer(cfg.backend)
    except (ProposerUnavailable, ValueError, OSError) as e:
        raise ConfigError(str(e)) from e
    out = Path(cfg.out or "run")
    _write_config(cfg, out)
    report = run_sizing_loop(n, spec, proposer, cfg.budget, sim=_simulator(cfg), run_dir=out)
    (out / "final.sp").write_text(report.final_netlist)
    (out / "rationale.md").write_text(rationale_markdown(report))
    last = report.history[-1] if report.history else report.baseline
    print(format_report(last.flags))
    print(f"iterations used: {report.iterations_used}/{report.budget}; final design: {out / 'final.sp'}")
    return EXIT_OK if report.succeed else EXIT_UNMET


# ---------------------------------------------------------------- measure


def _dump_raw(raw: RawData, path: Path) -> None:
    cols = [raw.variables[0][0]] if raw.has_sweep else []
    data = [np.real(raw.sweep)] if raw.has_sweep else []
    for name in raw.names[1 if raw.has_sweep else 0:]:
        v = raw.vector(name)
        if np.iscomplexobj(v):
            cols += [f"{name}_mag_db", f"{name}_phase_deg"]
            mag = np.abs(v)
            data += [20 * np.log10(np.where(mag > 0, mag, np.nan)), np.degrees(np.unwrap(np.angle(v)))]
        else:
            cols.append(name)
            data.append(np.real(v))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*data):
            w.writerow([repr(float(x)) for x in row])


def write_results(results: Sequence[MetricResult], out: Path) -> tuple[Path, Path]:
    out.mkdir(parents=True, exist_ok=True)
    js = out / "results.json"
    js.write_text(json.dumps([r.to_dict() for r in results], indent=2) + "\n")
    cs = out / "results.csv"
    with cs.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value", "unit", "error"])
        for r in results:
            w.writerow([r.metric, repr(r.value), METRICS[r.metric], r.error or ""])
    return js, cs


def cmd_measure(cfg: RunConfig, spec: Spec | None) -> int:
    n = _load_netlist(_require(cfg.netlist, "--netlist"))
    metrics = list(cfg.metrics) or (spec.metrics if spec else [])
    if not metrics:
        raise ConfigError("nothing to measure: pass --metrics or a --spec with targets")
    harness = spec.harness if spec else Harness(vsup=_supply(n), cl=None, rl=None)
    out = Path(cfg.out or "measure")
    _write_config(cfg, out)
    me = Measurer(n, harness, _simulator(cfg), out / "sim")
    results = measure_suite(n, metrics, harness, me.sim, measurer=me)
    write_results(results, out)
    if cfg.sweep_dump:
        for name in me.order:
            raw = me.raws.get(name)
            if isinstance(raw, tuple):  # cmrr grid: (entries, source)
                raw = raw[0][0][1] if raw[0] else None
            if isinstance(raw, RawData):
                _dump_raw(raw, out / f"{name}.csv")
    for r in results:
        shown = f"{r.value:.6g} {METRICS[r.metric]}" if math.isfinite(r.value) else f"error: {r.error}"
        print(f"{r.metric:<14} {shown}")
    return EXIT_OK if any(r.error is None for r in results) else EXIT_UNMET


def _supply(n: Netlist) -> float:
    src = supply_source(n)
    dc = dict(list_sources(n)).get(src.id) if src is not None else None
    return 1.0 if dc is None else float(dc)


# ---------------------------------------------------------------- check


def _results_map(path: str) -> dict[str, float]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, list):
        data = {d["metric"]: d["value"] for d in data}
    elif "results" in data:
        data = data["results"]
    out = {}
    for k, v in data.items():
        if k not in METRICS:
            raise ConfigError(f"unknown metric {k!r} in {path}; valid: {', '.join(METRICS)}")
        out[k] = math.nan if v is None else float(v)
    return out


def cmd_check(cfg: RunConfig, spec: Spec | None) -> int:
    if cfg.golden:
        return _check_golden()
    spec = _require(spec, "--spec")
    results = _results_map(_require(cfg.results, "--results"))
    if not spec.targets:
        print("warning: spec has no targets; passing vacuously", file=sys.stderr)
    missing = [t.metric for t in spec.targets if t.metric not in results]
    if missing:
        raise ConfigError(f"results lack measured values for: {', '.join(missing)}")
    report = evaluate_success(check_spec(results, spec.targets), None)
    print(format_report(report))
    return EXIT_OK if report.succeed else EXIT_UNMET


def _check_golden() -> int:
    from .golden import GROUP_TARGETS, ROWS, mismatches
    bad = []
    for row in ROWS:
        flags = check_spec(row.results(), GROUP_TARGETS[row.group])
        row_bad = mismatches(row, flags)
        bad += row_bad
        print(f"{row.label:<22} {'ok' if not row_bad else 'MISMATCH'}")
    for m in bad:
        print(m)
    print(f"{len(ROWS)} rows, {len(bad)} mismatched cells")
    return EXIT_OK if not bad else EXIT_UNMET


# ---------------------------------------------------------------- vary / bench


def cmd_vary(cfg: RunConfig, spec: Spec) -> int:
    spec = _require(spec, "--spec")
    n = _load_netlist(_require(cfg.netlist, "--netlist"))
    v = VariationSpec(cfg.sigma_wl, cfg.sigma_vth, cfg.samples, cfg.seed)
    out = Path(cfg.out or "vary")
    _write_config(cfg, out)
    report = run_variation_study(n, spec.targets, v, spec.harness, _simulator(cfg), spec.constraints,
                                 jobs=cfg.jobs, workdir=out / "samples")
    write_variation(report, out)
    for m, s in report.metrics.items():
        print(f"{m:<14} mean {s.sample_mean:.6g}  std {s.sample_std:.6g}  pass rate {s.pass_rate:.0%}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    try:
        cases = load_suite(_require(cfg.suite, "--suite"))
    except FileNotFoundError as e:
        raise ConfigError(str(e)) from e
    if cfg.budget is not None:
        cases = [replace(c, budget=cfg.budget) for c in cases]

    def factory(case, attempt):
        return make_proposer(replace(cfg.backend, seed=cfg.backend.seed + attempt))

    try:
        make_proposer(cfg.backend)
    except (ProposerUnavailable, ValueError, OSError) as e:
        raise ConfigError(str(e)) from e
    hosted = cfg.backend.kind in ("openai_compatible", "gemini")
    out = Path(cfg.out or "bench")
    _write_config(cfg, out)
    summary = run_bench(cases, factory, cfg.attempts, _simulator(cfg), out, jobs=1 if hosted else cfg.jobs)
    write_summary(summary, out)
    for c in summary.cases:
        mean = "-" if c.mean is None else f"{c.mean:.1f}"
        print(f"{c.name:<14} {c.successes}/{c.attempts} succeeded, mean iterations {mean}")
    return EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sizeloop", description="Simulator-in-the-loop transistor sizing.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--netlist")
    common.add_argument("--spec")
    common.add_argument("--out")
    common.add_argument("--ngspice", help=f"simulator binary (default: ${ENV_BINARY})")
    common.add_argument("--models", action="append", help="directory searched for .include/.lib files")
    common.add_argument("--backend", choices=BACKENDS)
    common.add_argument("--model-name")
    common.add_argument("--script", help="JSON-lines proposals for the scripted backend")
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--seed", type=int)
    common.add_argument("--budget", type=int, help="iteration budget (default: spec max_iterations)")
    common.add_argument("--metrics", help="comma-separated metric names")
    common.add_argument("--sweep-dump", action="store_true", help="also write raw curves as CSV")
    common.add_argument("--results", help="measured values JSON for check")
    common.add_argument("--golden", action="store_true", help="check the reference result tables")
    common.add_argument("--samples", type=int, default=50)
    common.add_argument("--sigma-wl", type=float, default=5e-9)
    common.add_argument("--sigma-vth", type=float, default=10e-3)
    common.add_argument("--attempts", type=int, default=10)
    common.add_argument("--suite", help="suite name (basic6, opamp90) or manifest path")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("size", "run the sizing loop"), ("measure", "measure metrics of a netlist"),
                       ("check", "check measured values against a spec"), ("vary", "device variation study"),
                       ("bench", "repeated sizing attempts over a suite")]:
        sub.add_parser(name, parents=[common], help=text)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = _load_spec(_abs(args.spec))
        cfg = resolve_config(args, spec)
        if cfg.command == "size":
            return cmd_size(cfg, _require(spec, "--spec"))
        if cfg.command == "measure":
            return cmd_measure(cfg, spec)
        if cfg.command == "check":
            return cmd_check(cfg, spec)
        if cfg.command == "vary":
            return cmd_vary(cfg, spec)
        return cmd_bench(cfg)
    except (ConfigError, SpecError, UnknownMetric, NetlistError, SimulatorError, AgentError,
            json.JSONDecodeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
