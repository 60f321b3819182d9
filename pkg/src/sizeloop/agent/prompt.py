"""Chain-of-thought prompt assembly for one sizing step."""

from __future__ import annotations

import math
from typing import Sequence

from ..measure import METRICS
from ..netlist import NodeConstraints
from ..units import format_value
from .types import IterationRecord, TaskContext

SYSTEM = (
    "You are an experienced analog IC designer sizing transistors for a fixed circuit topology. "
    "Use device physics and design knowledge: square-law and short-channel behaviour, "
    "gm/Id trade-offs, output resistance versus channel length, pole placement and compensation, "
    "and headroom of stacked devices. Every design point you propose is simulated and the "
    "measured results are returned to you in the next step."
)

COT_STEPS = (
    "1. Verify transistor regions: check that every transistor is on and in the intended region, "
    "using the reported overdrive voltages.",
    "2. Identify performances needing improvement: list the metrics that miss their targets and by how much.",
    "3. Connect design parameters with performance metrics: state which widths, lengths and bias "
    "voltages move each failing metric, and in which direction.",
    "4. Propose optimization within constraints: choose new values that respect the ranges below "
    "and explain each change.",
)

SCHEMA = """Answer with your reasoning, then exactly one fenced JSON block of this form:

```json
{
  "devices": {"M1": {"W": "32u", "L": "0.85u"}},
  "sources": {"Vbias1": 0.65},
  "no_change": false
}
```

- "devices" maps a transistor id to new W and/or L as SPICE values with a unit suffix ("3.5u", "180n").
- "sources" maps a bias source id to its new DC value in volts.
- List only what changes. Set "no_change": true with empty maps to keep the current design."""


def _fmt(metric: str, v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    unit = METRICS.get(metric, "")
    if unit in ("dB", "degrees"):
        return f"{v:.2f} {unit}"
    return f"{format_value(v, 4)}{unit}"


def target_table(ctx: TaskContext) -> str:
    rows = ["| metric | requirement | tolerance |", "|---|---|---|"]
    for t in ctx.targets:
        op = ">=" if t.direction == "at_least" else "<="
        rows.append(f"| {t.metric} | {op} {_fmt(t.metric, t.value)} | {t.tolerance * 100:g}% |")
    return "\n".join(rows)


def _params(rec: IterationRecord) -> str:
    parts = []
    for dev, p, v in rec.parameters:
        parts.append(f"{dev}.{p}={format_value(v, 4) if p in ('W', 'L') else f'{v:.4g}'}")
    return ", ".join(parts) or "(none)"


def _metrics(rec: IterationRecord) -> str:
    out = []
    for f in rec.flags.flags:
        mark = "pass" if f.passed else "FAIL"
        out.append(f"{f.metric}={_fmt(f.metric, f.measured)} [{mark}]")
    return ", ".join(out) or "(no metrics)"


def summarize(rec: IterationRecord, label: str | None = None) -> str:
    head = label or f"iteration {rec.index}"
    lines = [f"- {head}: parameters {_params(rec)}", f"  results {_metrics(rec)}"]
    od = rec.flags.overdrive
    if od is not None:
        lines.append(f"  regions: {od.message}")
    if rec.clamp_log:
        lines.append(f"  clamped: {'; '.join(rec.clamp_log)}")
    return "\n".join(lines)


def current_block(rec: IterationRecord | None) -> str:
    if rec is None:
        return "no measurement available"
    lines = [summarize(rec, "current design" if rec.index == 0 else f"current design (iteration {rec.index})")]
    errors = [f"  {r.metric}: measurement failed ({r.error})" for r in rec.results if r.error]
    lines += errors
    od = rec.flags.overdrive
    if od is not None and od.devices:
        lines.append("  overdrive |vgs|-|vth| per device: " + ", ".join(
            f"{d}={o * 1e3:.0f}mV" for d, _, _, o in od.devices))
    return "\n".join(lines)


def build_cot_prompt(ctx: TaskContext, history: Sequence[IterationRecord], current: IterationRecord | None,
                     constraints: NodeConstraints, netlist_text: str | None = None) -> str:
    parts = ["## System", SYSTEM, "", "## Circuit", f"Circuit type: {ctx.circuit_type}"]
    if ctx.io_nodes:
        parts.append("I/O nodes: " + ", ".join(f"{k}={v}" for k, v in ctx.io_nodes.items()))
    if netlist_text:
        parts += ["", "```spice", netlist_text.rstrip(), "```"]
    parts += ["", "## Targets", target_table(ctx), "", "## History"]
    if history:
        parts += [summarize(r) for r in history]
    else:
        parts.append("none yet")
    parts += ["", "## Current results", current_block(current), "",
              "## Constraints", constraints.describe(),
              "Bias voltages must stay strictly inside the supply range.", "",
              "## Steps", *COT_STEPS, "", "## Output format", SCHEMA]
    return "\n".join(parts) + "\n"
