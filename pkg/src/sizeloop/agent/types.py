"""Records exchanged between the sizing loop, the prompt builder and proposers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from ..measure import MetricResult
from ..spec import SpecCheckReport, SpecTarget


class AgentError(RuntimeError):
    pass


class DecompositionFailed(AgentError):
    pass


class EmptyProposal(AgentError):
    pass


class ProposerUnavailable(AgentError):
    pass


class UnparseableProposal(AgentError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class TransportError(ProposerUnavailable):
    pass


class RateLimited(TransportError):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


@dataclass(frozen=True)
class TaskContext:
    circuit_type: str
    io_nodes: Mapping[str, str]
    targets: tuple[SpecTarget, ...]
    metric_plan: tuple[tuple[str, str, str], ...]  # (metric, configuration, analysis)
    warnings: tuple[str, ...] = ()

    @property
    def metrics(self) -> list[str]:
        return [t.metric for t in self.targets]

    def to_dict(self) -> dict:
        return {
            "circuit_type": self.circuit_type,
            "io_nodes": dict(self.io_nodes),
            "targets": [t.to_dict() for t in self.targets],
            "metric_plan": [list(p) for p in self.metric_plan],
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class Proposal:
    """Requested sizing changes. W and L in metres, sources in volts."""

    device_updates: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    source_updates: Mapping[str, float] = field(default_factory=dict)
    rationale: str = ""
    no_change: bool = False
    raw: str = ""

    def __post_init__(self):
        for dev, upd in self.device_updates.items():
            for k, v in upd.items():
                if k not in ("W", "L"):
                    raise ValueError(f"{dev}: only W and L may be updated, got {k!r}")
                if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                    raise ValueError(f"{dev}.{k} must be a positive number, got {v!r}")
        for src, v in self.source_updates.items():
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{src} must be a positive voltage, got {v!r}")
        if not (self.device_updates or self.source_updates or self.no_change):
            raise ValueError("proposal has no updates and no no_change marker")

    @property
    def is_empty(self) -> bool:
        return not (self.device_updates or self.source_updates)

    def to_dict(self) -> dict:
        return {
            "devices": {d: dict(u) for d, u in self.device_updates.items()},
            "sources": dict(self.source_updates),
            "no_change": self.no_change,
            "rationale": self.rationale,
        }


@dataclass(frozen=True)
class Transcript:
    prompt: str
    response: str
    attempts: int = 1

    def to_dict(self) -> dict:
        return {"prompt": self.prompt, "response": self.response, "attempts": self.attempts}


@dataclass(frozen=True)
class IterationRecord:
    index: int
    netlist_hash: str
    parameters: tuple[tuple[str, str, float], ...]
    results: tuple[MetricResult, ...]
    flags: SpecCheckReport
    rationale: str = ""
    transcript: Transcript | None = None
    proposal: Proposal | None = None
    clamp_log: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> int:
        return self.flags.passed

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "netlist_hash": self.netlist_hash,
            "parameters": [list(p) for p in self.parameters],
            "results": [r.to_dict() for r in self.results],
            "check": self.flags.to_dict(),
            "rationale": self.rationale,
            "proposal": self.proposal.to_dict() if self.proposal else None,
            "clamp_log": list(self.clamp_log),
            "notes": list(self.notes),
            "transcript": self.transcript.to_dict() if self.transcript else None,
        }


@dataclass(frozen=True)
class RunReport:
    succeed: bool
    iterations_used: int
    final_netlist: str
    history: tuple[IterationRecord, ...]
    baseline: IterationRecord | None = None
    budget: int = 0
    context: TaskContext | None = None
    final_index: int = 0
    verified: bool | None = None
    proposer_calls: int = 0

    def to_dict(self) -> dict:
        return {
            "succeed": self.succeed,
            "iterations_used": self.iterations_used,
            "budget": self.budget,
            "proposer_calls": self.proposer_calls,
            "final_index": self.final_index,
            "verified": self.verified,
            "context": self.context.to_dict() if self.context else None,
            "baseline": self.baseline.to_dict() if self.baseline else None,
            "history": [r.to_dict() for r in self.history],
            "final_netlist": self.final_netlist,
        }
