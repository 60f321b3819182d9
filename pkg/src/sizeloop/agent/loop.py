"""Task decomposition, proposal application and the measure/check/propose loop."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from ..measure import ANALYSIS_OF, CONFIG_OF, Harness, MetricResult, measure_suite
from ..netlist import (
    Netlist,
    NetlistError,
    NodeConstraints,
    bias_sources,
    find_source,
    list_mosfets,
    parameter_vector,
    set_device_param,
    set_source_value,
)
from ..simulator import ALL_ON_MESSAGE, OverdriveReport, Simulator, SimulatorError
from ..spec import Spec, check_spec, evaluate_success
from ..units import format_value
from .prompt import build_cot_prompt
from .proposers import Proposer
from .tools import metrics_of, select_functions
from .types import (
    DecompositionFailed,
    EmptyProposal,
    IterationRecord,
    Proposal,
    ProposerUnavailable,
    RunReport,
    TaskContext,
    Transcript,
    UnparseableProposal,
)

log = logging.getLogger(__name__)

ROLES = ("vdd", "vss", "vin+", "vin-", "vout")

_KEYWORDS = (
    (r"\bxor\b", "XOR gate (static CMOS logic)"),
    (r"\bnand\b", "NAND gate (static CMOS logic)"),
    (r"\binv(erter)?\b", "CMOS inverter"),
    (r"\b(ring\s*)?osc(illator)?\b", "ring oscillator"),
    (r"\bota\b", "operational transconductance amplifier"),
    (r"\bop\s*-?amp\b|\boperational amplifier\b", "operational amplifier"),
    (r"\bcommon[- ]source\b|\br[-_ ]?load\b", "common-source amplifier with resistive load"),
)


# ---------------------------------------------------------------- Tasks 1-4


def classify_circuit(n: Netlist) -> str:
    """Circuit type from title keywords, then from structure and node roles."""
    head = " ".join([n.title] + [c.raw for c in n.cards if c.kind == "comment"][:5]).lower()
    for pat, name in _KEYWORDS:
        if re.search(pat, head):
            return name
    mos = list_mosfets(n)
    roles = set(n.node_aliases)
    if {"vin+", "vin-", "vout"} <= roles:
        if len(mos) >= 10:
            return "operational amplifier (multi-stage, class-AB output)"
        return "operational transconductance amplifier"
    if "vin+" in roles and "vout" in roles:
        if len(mos) == 1:
            return "common-source amplifier with resistive load"
        return "amplifier"
    if "vout" in roles and "vin+" not in roles:
        return "oscillator"
    return f"circuit with {len(mos)} transistors"


def _valid_io(io, n: Netlist) -> dict[str, str] | None:
    if not isinstance(io, Mapping) or not io:
        return None
    nodes = n.nodes()
    out = {}
    for role, node in io.items():
        role = str(role).replace("−", "-").lower()
        if not isinstance(node, str) or node.lower() not in nodes:
            return None
        out[role] = node
    return out if "vout" in out else None


def decompose(n: Netlist, spec: Spec, proposer: Proposer | None = None) -> TaskContext:
    """Tasks 1-2 from the proposer (with sidecar fallback); Tasks 3-4 from the spec."""
    warnings = []
    answer = None
    if proposer is not None:
        try:
            answer = proposer.identify(n.text())
        except (ProposerUnavailable, UnparseableProposal) as e:
            warnings.append(f"circuit identification failed: {e}")
    circuit_type = classify_circuit(n)
    io = None
    if isinstance(answer, Mapping):
        if isinstance(answer.get("circuit_type"), str) and answer["circuit_type"].strip():
            circuit_type = answer["circuit_type"].strip()
        io = _valid_io(answer.get("io_nodes"), n)
        if io is None:
            warnings.append("proposer io nodes missing or not in netlist; using sidecar mapping")
    if io is None:
        io = _valid_io(dict(spec.roles) or dict(n.node_aliases), n)
    if io is None:
        raise DecompositionFailed("no valid io node mapping from proposer or sidecar (need at least vout)")
    for w in warnings:
        log.warning(w)
    plan = tuple((t.metric, CONFIG_OF[t.metric], ANALYSIS_OF[t.metric]) for t in spec.targets)
    return TaskContext(circuit_type, io, spec.targets, plan, tuple(warnings))


# ---------------------------------------------------------------- proposals


def apply_proposal(n: Netlist, p: Proposal, c: NodeConstraints) -> tuple[Netlist, list[str]]:
    """Apply every update with clamping; unknown ids are skipped and logged."""
    logs: list[str] = []
    applied = 0
    tunable = {s.lower() for s in bias_sources(n)}
    for dev, upd in p.device_updates.items():
        card = n.find(dev)
        if card is None or card.kind != "mosfet":
            logs.append(f"skipped {dev}: no such transistor")
            continue
        for param in ("W", "L"):
            if param not in upd:
                continue
            n, clamped = set_device_param(n, card.id, param, upd[param], c)
            applied += 1
            if clamped:
                logs.append(f"{card.id}.{param} {format_value(upd[param], 4)} clamped to "
                            f"{format_value(n.find(card.id).value(param), 4)}")
    for src, volts in p.source_updates.items():
        try:
            card = find_source(n, src)
        except NetlistError:
            logs.append(f"skipped {src}: no such source")
            continue
        if card.id.lower() not in tunable:
            logs.append(f"skipped {card.id}: supply or input source is not tunable")
            continue
        n, clamped = set_source_value(n, card.id, volts, c)
        applied += 1
        if clamped:
            logs.append(f"{card.id} {volts:g} V clamped to {n.find(card.id).value('dc'):g} V")
    if applied == 0 and not p.is_empty:
        raise EmptyProposal("no valid updates after filtering: " + "; ".join(logs))
    return n, logs


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class Evaluation:
    results: tuple[MetricResult, ...]
    overdrive: OverdriveReport | None


class Evaluator(Protocol):
    def evaluate(self, n: Netlist, metrics: Sequence[str], workdir: Path | None) -> Evaluation: ...


@dataclass
class SimulationEvaluator:
    """Measures through the simulator and runs the sub-threshold guard."""

    harness: Harness
    sim: Simulator
    check_regions: bool = True

    def evaluate(self, n, metrics, workdir=None):
        results = measure_suite(n, metrics, self.harness, self.sim, workdir / "measure" if workdir else None)
        od = None
        if self.check_regions:
            try:
                od = self.sim.check_overdrive(n, workdir / "op" if workdir else None)
            except (SimulatorError, NetlistError, KeyError) as e:
                od = OverdriveReport((), False, f"operating point failed: {e}")
        return Evaluation(tuple(results), od)


@dataclass
class AnalyticEvaluator:
    """Closed-form metrics of the netlist; for tests and dry runs without a simulator."""

    funcs: Mapping[str, Callable[[Netlist], float]]
    regions: Callable[[Netlist], OverdriveReport] | None = None
    calls: int = field(default=0, init=False)

    def evaluate(self, n, metrics, workdir=None):
        self.calls += 1
        out = []
        for m in metrics:
            if m not in self.funcs:
                out.append(MetricResult(m, math.nan, {}, f"no analytic model for {m}"))
                continue
            try:
                out.append(MetricResult(m, float(self.funcs[m](n))))
            except (ValueError, KeyError, ZeroDivisionError) as e:
                out.append(MetricResult(m, math.nan, {}, f"{type(e).__name__}: {e}"))
        od = self.regions(n) if self.regions else OverdriveReport((), True, ALL_ON_MESSAGE)
        return Evaluation(tuple(out), od)


# ---------------------------------------------------------------- loop


def _record(index: int, n: Netlist, ev: Evaluation, spec: Spec, **kw) -> IterationRecord:
    flags = check_spec(list(ev.results), spec.targets)
    report = evaluate_success(flags, ev.overdrive)
    return IterationRecord(index, n.digest(), tuple(parameter_vector(n)), ev.results, report, **kw)


def _write_iter(run_dir: Path | None, rec: IterationRecord, n: Netlist):
    if run_dir is None:
        return
    d = run_dir / f"iter_{rec.index:02d}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "netlist.sp").write_text(n.text())
    if rec.transcript is not None:
        (d / "prompt.txt").write_text(rec.transcript.prompt)
        (d / "response.txt").write_text(rec.transcript.response)
    (d / "record.json").write_text(json.dumps(rec.to_dict(), indent=2, default=str) + "\n")


def write_report(run_dir: Path, report: RunReport) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    p = run_dir / "run.json"
    p.write_text(json.dumps(report.to_dict(), indent=2, default=str) + "\n")
    return p


def _best(records: Sequence[IterationRecord]) -> IterationRecord:
    return max(records, key=lambda r: (r.flags.succeed, r.passed, r.index))


def run_sizing_loop(netlist: Netlist, spec: Spec, proposer: Proposer, budget: int | None = None,
                    evaluator: Evaluator | None = None, sim: Simulator | None = None,
                    run_dir: str | Path | None = None, show_netlist: bool = True) -> RunReport:
    """Measure, check, and on failure ask the proposer for a new design, up to ``budget`` times.

    The initial design is evaluated as a baseline that does not count as an
    iteration. Each iteration is propose, apply, measure, check. When the
    baseline already meets the spec the run ends at iteration 1 without
    calling the proposer.
    """
    budget = spec.max_iterations if budget is None else budget
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if evaluator is None:
        if sim is None:
            raise ValueError("need an evaluator or a simulator")
        evaluator = SimulationEvaluator(spec.harness, sim, spec.check_regions)
    run_dir = Path(run_dir) if run_dir else None
    c = spec.constraints
    ctx = decompose(netlist, spec, proposer)
    netlist = netlist.with_aliases({**netlist.node_aliases, **ctx.io_nodes})

    calls, sel_warn = select_functions(spec.targets, proposer, netlist.text())
    metrics = list(dict.fromkeys([t.metric for t in spec.targets] + metrics_of(calls)))
    if sel_warn:
        ctx = replace(ctx, warnings=ctx.warnings + tuple(sel_warn))

    cache: dict[str, Evaluation] = {}

    def evaluate(n: Netlist, index: int) -> tuple[Evaluation, tuple[str, ...]]:
        key = n.digest()
        if key in cache:
            return cache[key], (f"design unchanged; evaluation reused",)
        wd = run_dir / f"iter_{index:02d}" / "sim" if run_dir else None
        ev = evaluator.evaluate(n, metrics, wd)
        cache[key] = ev
        return ev, ()

    ev, _ = evaluate(netlist, 0)
    baseline = _record(0, netlist, ev, spec, rationale="initial design")
    _write_iter(run_dir, baseline, netlist)
    designs = {0: netlist}
    history: list[IterationRecord] = []

    if baseline.flags.succeed:
        rec = replace(baseline, index=1, rationale="initial design meets all targets",
                      notes=("no proposal needed",))
        history.append(rec)
        designs[1] = netlist
        _write_iter(run_dir, rec, netlist)
    else:
        current_n, current = netlist, baseline
        for k in range(1, budget + 1):
            prompt = build_cot_prompt(ctx, history, current, c, current_n.text() if show_netlist else None)
            notes: list[str] = []
            clamp_log: list[str] = []
            proposal = None
            transcript = Transcript(prompt, "")
            try:
                proposal, transcript = proposer.propose(prompt, current_n, c)
            except UnparseableProposal as e:
                notes.append(f"unparseable proposal: {e}")
                transcript = Transcript(prompt, e.raw)
            except ProposerUnavailable:
                if run_dir is not None:
                    partial = RunReport(False, len(history), current_n.text(), tuple(history), baseline,
                                        budget, ctx, current.index, None, proposer.calls)
                    write_report(run_dir, partial)
                raise
            new_n = current_n
            if proposal is not None and not proposal.is_empty:
                try:
                    new_n, clamp_log = apply_proposal(current_n, proposal, c)
                except EmptyProposal as e:
                    notes.append(str(e))
            elif proposal is not None:
                notes.append("no change proposed")
            ev, reuse = evaluate(new_n, k)
            rec = _record(k, new_n, ev, spec, rationale=proposal.rationale if proposal else "",
                          transcript=transcript, proposal=proposal, clamp_log=tuple(clamp_log),
                          notes=tuple(notes) + reuse)
            history.append(rec)
            designs[k] = new_n
            _write_iter(run_dir, rec, new_n)
            current_n, current = new_n, rec
            if rec.flags.succeed:
                break

    best = _best(history) if history else baseline
    succeed = bool(history) and history[-1].flags.succeed
    verified = None
    if succeed:
        # fresh measurement of the emitted design
        wd = run_dir / "verify" if run_dir else None
        again = evaluator.evaluate(designs[best.index], metrics, wd)
        verified = evaluate_success(check_spec(list(again.results), spec.targets), again.overdrive).succeed
        succeed = verified
    report = RunReport(succeed, len(history), designs[best.index].text(), tuple(history), baseline, budget, ctx,
                       best.index, verified, proposer.calls)
    if run_dir is not None:
        write_report(run_dir, report)
    return report
