"""Function declarations for tool-capable backends and validation of their calls."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import jsonschema

from ..measure import ANALYSIS_OF, CONFIG_KINDS, plan
from ..spec import SpecTarget
from .proposers import Proposer

log = logging.getLogger(__name__)

_CONFIG = {"type": "string", "enum": list(CONFIG_KINDS)}
_NODE = {"type": "string", "description": "output node name"}
_NUM = {"type": "number"}


def _fn(name: str, description: str, properties: dict, required=()) -> dict:
    return {
        "name": name,
        "description": description,
        "parameters": {"type": "object", "properties": properties, "required": list(required),
                       "additionalProperties": False},
    }


SIMULATIONS = (
    _fn("dc_simulation", "DC sweep of the input source: start value, step, end value and output node.",
        {"configuration": _CONFIG, "start": _NUM, "stop": _NUM, "step": _NUM, "output_node": _NODE},
        ["configuration"]),
    _fn("ac_simulation", "Small-signal AC sweep with points per decade, start and stop frequency.",
        {"configuration": _CONFIG, "points_per_decade": {"type": "integer", "minimum": 1},
         "f_start": _NUM, "f_stop": _NUM, "output_node": _NODE},
        ["configuration"]),
    _fn("transient_simulation", "Transient run with time step and stop time.",
        {"configuration": _CONFIG, "step": _NUM, "stop": _NUM, "output_node": _NODE},
        ["configuration"]),
)

# one analysis function per metric, named after the metric
_ANALYSIS_TEXT = {
    "dc_gain": "Small-signal voltage gain at low frequency (10 kHz).",
    "input_offset": "Output error with the input at half supply, unity-gain configuration.",
    "icmr": "Linear span of the closed-loop transfer curve.",
    "thd": "Total harmonic distortion across the output swing.",
    "output_swing": "Linear span of the open-loop transfer curve.",
    "bandwidth": "Frequency where gain drops by 3 dB.",
    "ugbw": "Frequency where gain crosses unity.",
    "phase_margin": "Distance of the phase from -180 degrees at unity gain.",
    "cmrr": "Minimum common-mode rejection across the common-mode range.",
    "power": "Average supply power from a transient run.",
    "delay": "Time from 50% input to 50% output.",
    "osc_frequency": "Oscillation frequency.",
}
ANALYSES = tuple(_fn(m, d, {"output_node": _NODE}) for m, d in _ANALYSIS_TEXT.items())

DECLARATIONS = SIMULATIONS + ANALYSES
_BY_NAME = {d["name"]: d for d in DECLARATIONS}
_SIM_OF = {"dc": "dc_simulation", "ac": "ac_simulation", "tran": "transient_simulation"}


@dataclass(frozen=True)
class FunctionCall:
    name: str
    arguments: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "arguments": dict(self.arguments)}


def validate_call(call: dict) -> FunctionCall | None:
    name = call.get("name") if isinstance(call, dict) else None
    decl = _BY_NAME.get(name)
    if decl is None:
        log.warning("dropping call to undeclared function %r", name)
        return None
    args = call.get("arguments") or {}
    try:
        jsonschema.validate(args, decl["parameters"])
    except jsonschema.ValidationError as e:
        log.warning("dropping call to %s: %s", name, e.message)
        return None
    return FunctionCall(name, dict(args))


def deterministic_plan(metrics: Sequence[str]) -> list[FunctionCall]:
    """Simulations needed by ``metrics`` followed by one analysis call per metric."""
    calls = [FunctionCall(_SIM_OF[a], {"configuration": c}) for c, a in plan(metrics)]
    return calls + [FunctionCall(m) for m in metrics]


def selection_prompt(targets: Sequence[SpecTarget], netlist_text: str = "") -> str:
    lines = ["Select the simulation and analysis functions needed to evaluate these targets:"]
    lines += [f"- {t.describe()}" for t in targets]
    if netlist_text:
        lines += ["", "```spice", netlist_text.rstrip(), "```"]
    lines.append("Call a simulation function before the analyses that use its data.")
    return "\n".join(lines)


def select_functions(targets: Sequence[SpecTarget], proposer: Proposer | None,
                     netlist_text: str = "") -> tuple[list[FunctionCall], list[str]]:
    """Validated calls from the backend, or the deterministic plan. Returns (calls, warnings)."""
    metrics = [t.metric for t in targets]
    warnings: list[str] = []
    if proposer is None or not proposer.supports_tools:
        return deterministic_plan(metrics), warnings
    raw = proposer.select_functions(selection_prompt(targets, netlist_text), DECLARATIONS) or []
    calls = []
    for c in raw:
        fc = validate_call(c)
        if fc is None:
            warnings.append(f"dropped invalid function call {c.get('name') if isinstance(c, dict) else c!r}")
        else:
            calls.append(fc)
    if not calls:
        warnings.append("no valid function calls; using deterministic plan")
        return deterministic_plan(metrics), warnings
    return calls, warnings


def metrics_of(calls: Sequence[FunctionCall]) -> list[str]:
    return [c.name for c in calls if c.name in ANALYSIS_OF]
