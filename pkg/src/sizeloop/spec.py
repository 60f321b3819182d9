"""Target specifications, toleranced comparison and success evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .measure import METRICS, Harness, MetricResult, UnknownMetric
from .netlist import constraints_for
from .simulator import ALL_ON_MESSAGE, OverdriveReport
from .units import UnitError, parse_value

DIRECTIONS = ("at_least", "at_most")
RAIL_TO_RAIL = {"vdd-vss", "vdd - vss", "rail-to-rail", "rail_to_rail"}


class SpecError(ValueError):
    pass


class MissingDirection(SpecError):
    pass


class NonNumericTarget(SpecError):
    pass


@dataclass(frozen=True)
class SpecTarget:
    metric: str
    direction: str
    value: float
    tolerance: float = 0.05

    def __post_init__(self):
        if self.metric not in METRICS:
            raise UnknownMetric(f"unknown metric {self.metric!r}; valid: {', '.join(METRICS)}")
        if self.direction not in DIRECTIONS:
            raise MissingDirection(f"{self.metric}: direction must be at_least or at_most")
        if not math.isfinite(self.value):
            raise NonNumericTarget(f"{self.metric}: target must be finite")
        if not 0.0 <= self.tolerance <= 0.5:
            raise SpecError(f"{self.metric}: tolerance {self.tolerance} outside [0, 0.5]")

    @property
    def bound(self) -> float:
        slack = self.tolerance * abs(self.value)
        return self.value - slack if self.direction == "at_least" else self.value + slack

    def describe(self) -> str:
        op = ">=" if self.direction == "at_least" else "<="
        return f"{self.metric} {op} {self.value:g} {METRICS[self.metric]}"

    def to_dict(self) -> dict:
        return {"metric": self.metric, "direction": self.direction, "value": self.value,
                "tolerance": self.tolerance}


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "null"
    model: str = ""
    temperature: float | None = None
    max_tokens: int | None = None
    api_base: str | None = None
    script: str | None = None
    seed: int = 0


@dataclass(frozen=True)
class Spec:
    targets: tuple[SpecTarget, ...]
    harness: Harness
    technology: str
    supply: float
    max_iterations: int = 25
    tolerance: float = 0.05
    backend: BackendConfig = field(default_factory=BackendConfig)
    roles: Mapping[str, str] = field(default_factory=dict)
    check_regions: bool = True

    @property
    def metrics(self) -> list[str]:
        return [t.metric for t in self.targets]

    @property
    def constraints(self):
        return constraints_for(self.technology)


def _target_value(raw, supply: float, metric: str) -> float:
    if isinstance(raw, bool):
        raise NonNumericTarget(f"{metric}: boolean target")
    if isinstance(raw, (int, float)):
        return float(raw)
    if isinstance(raw, str):
        if raw.strip().lower() in RAIL_TO_RAIL:
            return float(supply)
        try:
            return parse_value(raw)
        except UnitError:
            pass
    raise NonNumericTarget(f"{metric}: target {raw!r} is not a number")


def parse_spec(source) -> Spec:
    """Load a spec from a path, JSON text or an already-decoded dict."""
    if isinstance(source, Mapping):
        data = dict(source)
    else:
        p = Path(source)
        data = json.loads(p.read_text() if p.exists() else str(source))
    tech = str(data.get("technology", "180nm"))
    c = constraints_for(tech)
    supply = float(data.get("supply", c.vsup))
    tol = float(data.get("tolerance", 0.05))
    targets = []
    for entry in data.get("targets", []) or []:
        metric = entry.get("metric")
        if metric not in METRICS:
            raise UnknownMetric(f"unknown metric {metric!r}; valid: {', '.join(METRICS)}")
        if "direction" not in entry:
            raise MissingDirection(f"{metric}: missing direction")
        if "value" not in entry:
            raise NonNumericTarget(f"{metric}: missing value")
        targets.append(SpecTarget(metric, entry["direction"], _target_value(entry["value"], supply, metric),
                                  float(entry.get("tolerance", tol))))
    load = data.get("load") or {}
    hdict = dict(data.get("harness") or {})
    hdict.setdefault("vsup", supply)
    if "cl" in load:
        hdict.setdefault("cl", load["cl"])
    if "rl" in load:
        hdict.setdefault("rl", load["rl"])
    if not load and "harness" not in data:
        hdict.setdefault("cl", None)
        hdict.setdefault("rl", None)
    b = dict(data.get("backend") or {})
    for key in ("model", "temperature", "max_tokens"):
        if key in data and key not in b:
            b[key] = data[key]
    backend = BackendConfig(**{k: v for k, v in b.items() if k in BackendConfig.__dataclass_fields__})
    return Spec(tuple(targets), Harness.from_dict(hdict), tech, supply,
                int(data.get("max_iterations", 25)), tol, backend, dict(data.get("roles") or {}),
                bool(data.get("check_regions", True)))


# ---------------------------------------------------------------- comparison


@dataclass(frozen=True)
class Flag:
    metric: str
    direction: str
    target: float
    bound: float
    measured: float
    passed: bool
    margin: float
    reason: str = ""

    def to_dict(self) -> dict:
        num = lambda x: None if isinstance(x, float) and math.isnan(x) else x
        return {"metric": self.metric, "direction": self.direction, "target": self.target,
                "bound": self.bound, "measured": num(self.measured), "pass": self.passed,
                "margin": num(self.margin), "reason": self.reason}


def compare(measured: float, t: SpecTarget) -> tuple[bool, float]:
    """Inclusive toleranced comparison; margin > 0 means inside the bound."""
    b = t.bound
    eps = 1e-9 * abs(b)
    if t.direction == "at_least":
        return measured >= b - eps, measured - b
    return measured <= b + eps, b - measured


def check_spec(results: Sequence[MetricResult] | Mapping[str, float], targets: Sequence[SpecTarget]) -> list[Flag]:
    if isinstance(results, Mapping):
        values = {k: float(v) if v is not None else math.nan for k, v in results.items()}
        errors = {}
    else:
        values = {r.metric: r.value for r in results}
        errors = {r.metric: r.error for r in results if r.error}
    flags = []
    for t in targets:
        v = values.get(t.metric, math.nan)
        if t.metric not in values or v is None or math.isnan(v):
            reason = "missing_measurement" + (f": {errors[t.metric]}" if errors.get(t.metric) else "")
            flags.append(Flag(t.metric, t.direction, t.value, t.bound, math.nan, False, math.nan, reason))
            continue
        ok, margin = compare(v, t)
        flags.append(Flag(t.metric, t.direction, t.value, t.bound, v, ok, margin))
    return flags


@dataclass(frozen=True)
class SpecCheckReport:
    flags: tuple[Flag, ...]
    overdrive: OverdriveReport | None
    succeed: bool

    @property
    def passed(self) -> int:
        return sum(f.passed for f in self.flags)

    @property
    def all_pass(self) -> bool:
        return all(f.passed for f in self.flags)

    def failing(self) -> list[str]:
        return [f.metric for f in self.flags if not f.passed]

    def to_dict(self) -> dict:
        return {"flags": [f.to_dict() for f in self.flags],
                "overdrive": self.overdrive.to_dict() if self.overdrive else None,
                "overdrive_evaluated": self.overdrive is not None,
                "succeed": self.succeed}


def evaluate_success(flags: Sequence[Flag], overdrive: OverdriveReport | None) -> SpecCheckReport:
    """Success needs every flag and the exact all-on message.

    ``overdrive=None`` means the guard was not evaluated (offline checks);
    success then rests on the flags alone and the report says so.
    """
    all_pass = all(f.passed for f in flags)
    on = True if overdrive is None else (overdrive.message == ALL_ON_MESSAGE)
    return SpecCheckReport(tuple(flags), overdrive, bool(all_pass and on))


def format_report(report: SpecCheckReport) -> str:
    lines = [f"{'metric':<14} {'dir':<9} {'target':>12} {'bound':>12} {'measured':>12} {'margin':>12}  result"]
    for f in report.flags:
        m = "-" if math.isnan(f.measured) else f"{f.measured:.6g}"
        g = "-" if math.isnan(f.margin) else f"{f.margin:+.4g}"
        res = "pass" if f.passed else "FAIL" + (f" ({f.reason})" if f.reason else "")
        lines.append(f"{f.metric:<14} {f.direction:<9} {f.target:>12.6g} {f.bound:>12.6g} {m:>12} {g:>12}  {res}")
    if report.overdrive is None:
        lines.append("sub-threshold guard: not evaluated")
    else:
        lines.append(f"sub-threshold guard: {report.overdrive.message}")
    lines.append("SUCCEED" if report.succeed else "NOT MET")
    return "\n".join(lines)
