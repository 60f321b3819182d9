"""Repeated sizing attempts over fixture suites, with success and iteration statistics."""

from __future__ import annotations

import csv
import json
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .agent.loop import run_sizing_loop
from .agent.proposers import Proposer
from .netlist import load_netlist
from .simulator import Simulator
from .spec import Spec, SpecTarget, parse_spec

log = logging.getLogger(__name__)

FIXTURES = Path(__file__).parent / "fixtures"


@dataclass(frozen=True)
class BenchCase:
    name: str
    netlist: Path
    spec_path: Path
    budget: int
    spec: Spec = field(compare=False, repr=False)

    @property
    def targets(self) -> tuple[SpecTarget, ...]:
        return self.spec.targets


def load_suite(name_or_path: str | Path) -> list[BenchCase]:
    """Cases from a manifest path or a shipped suite name (``basic6``, ``opamp90``)."""
    p = Path(name_or_path)
    if not p.exists():
        p = FIXTURES / "suites" / f"{name_or_path}.json"
    if not p.exists():
        shipped = sorted(x.stem for x in (FIXTURES / "suites").glob("*.json"))
        raise FileNotFoundError(f"no suite {name_or_path!r}; shipped suites: {', '.join(shipped)}")
    data = json.loads(p.read_text())
    cases = []
    for c in data["cases"]:
        spec_path = (p.parent / c["spec"]).resolve()
        spec = parse_spec(spec_path)
        cases.append(BenchCase(c["name"], (p.parent / c["netlist"]).resolve(), spec_path,
                               int(c.get("budget", spec.max_iterations)), spec))
    return cases


@dataclass(frozen=True)
class AttemptResult:
    case: str
    attempt: int
    succeed: bool
    iterations: int
    error: str = ""

    def to_dict(self) -> dict:
        return {"case": self.case, "attempt": self.attempt, "succeed": self.succeed,
                "iterations": self.iterations, "error": self.error}


@dataclass(frozen=True)
class CaseSummary:
    name: str
    attempts: int
    successes: int
    success_rate: float
    iterations: tuple[int, ...]  # successful attempts only
    failed_iterations: tuple[int, ...]
    mean: float | None
    min: int | None
    max: int | None

    def to_dict(self) -> dict:
        return {"name": self.name, "attempts": self.attempts, "successes": self.successes,
                "success_rate": self.success_rate, "iterations": list(self.iterations),
                "failed_iterations": list(self.failed_iterations),
                "mean": self.mean, "min": self.min, "max": self.max}


@dataclass(frozen=True)
class BenchSummary:
    cases: tuple[CaseSummary, ...]
    attempts: tuple[AttemptResult, ...]

    def case(self, name: str) -> CaseSummary:
        return next(c for c in self.cases if c.name == name)

    def to_dict(self) -> dict:
        return {"cases": [c.to_dict() for c in self.cases], "attempts": [a.to_dict() for a in self.attempts]}


def summarize(results: Sequence[AttemptResult]) -> BenchSummary:
    """Success rate over all attempts; iteration statistics over successes only."""
    names = list(dict.fromkeys(r.case for r in results))
    out = []
    for name in names:
        rs = [r for r in results if r.case == name]
        ok = [r.iterations for r in rs if r.succeed]
        bad = [r.iterations for r in rs if not r.succeed]
        out.append(CaseSummary(name, len(rs), len(ok), len(ok) / len(rs), tuple(ok), tuple(bad),
                               statistics.fmean(ok) if ok else None, min(ok) if ok else None,
                               max(ok) if ok else None))
    return BenchSummary(tuple(out), tuple(results))


def run_bench(cases: Sequence[BenchCase], proposer_factory: Callable[[BenchCase, int], Proposer], attempts: int,
              sim: Simulator | None = None, out_dir: str | Path | None = None, jobs: int = 1,
              evaluator_factory: Callable[[BenchCase], object] | None = None) -> BenchSummary:
    """``attempts`` independent sizing runs per case; errors count as failed attempts."""
    out = Path(out_dir) if out_dir else None
    jobs_list = [(c, a) for c in cases for a in range(1, attempts + 1)]

    def one(job) -> AttemptResult:
        case, a = job
        run_dir = out / case.name / f"attempt_{a:02d}" if out else None
        try:
            n = load_netlist(case.netlist)
            ev = evaluator_factory(case) if evaluator_factory else None
            report = run_sizing_loop(n, case.spec, proposer_factory(case, a), case.budget, ev, sim, run_dir)
            return AttemptResult(case.name, a, report.succeed, report.iterations_used)
        except Exception as e:  # one bad attempt must not end the batch
            log.warning("%s attempt %d failed: %s", case.name, a, e)
            return AttemptResult(case.name, a, False, 0, f"{type(e).__name__}: {e}")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, jobs_list))
    else:
        results = [one(j) for j in jobs_list]
    summary = summarize(results)
    if out is not None:
        write_summary(summary, out)
    return summary


def write_summary(summary: BenchSummary, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    js = out / "summary.json"
    js.write_text(json.dumps(summary.to_dict(), indent=2) + "\n")
    cs = out / "summary.csv"
    with cs.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "attempts", "successes", "success_rate", "mean_iterations", "min_iterations",
                    "max_iterations"])
        for c in summary.cases:
            w.writerow([c.name, c.attempts, c.successes, c.success_rate,
                        "" if c.mean is None else c.mean, "" if c.min is None else c.min,
                        "" if c.max is None else c.max])
    return js, cs


def summary_from_runs(out_dir: str | Path) -> BenchSummary:
    """Recompute a summary from the persisted run.json files of a bench directory."""
    out = Path(out_dir)
    results = []
    for case_dir in sorted(p for p in out.iterdir() if p.is_dir()):
        for run in sorted(case_dir.glob("attempt_*/run.json")):
            d = json.loads(run.read_text())
            a = int(run.parent.name.split("_")[1])
            results.append(AttemptResult(case_dir.name, a, bool(d["succeed"]), int(d["iterations_used"])))
    return summarize(results)
