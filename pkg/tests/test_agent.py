import json
import math
from pathlib import Path

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from sizeloop.agent import (
    COT_STEPS, DECLARATIONS, AnalyticEvaluator, NullProposer, RandomProposer, ScriptedProposer, apply_proposal,
    build_cot_prompt, classify_circuit, decompose, deterministic_plan, make_proposer, parse_proposal,
    run_sizing_loop, select_functions,
)
from sizeloop.agent.proposers import GeminiProposer, OpenAICompatibleProposer, proposal_from_obj
from sizeloop.agent.tools import validate_call
from sizeloop.agent.types import (
    DecompositionFailed, EmptyProposal, Proposal, ProposerUnavailable, UnparseableProposal,
)
from sizeloop.netlist import constraints_for, load_netlist, parse_netlist
from sizeloop.simulator import overdrive_report
from sizeloop.spec import BackendConfig, parse_spec

C180 = constraints_for("180nm")
FIXTURES = Path(__file__).resolve().parents[1] / "src" / "sizeloop" / "fixtures"


@pytest.fixture
def rload(fixtures):
    return load_netlist(fixtures / "netlists" / "r_load.sp")


def gain_spec(target, budget=20):
    return parse_spec({"technology": "180nm", "max_iterations": budget, "targets": [
        {"metric": "dc_gain", "direction": "at_least", "value": target, "tolerance": 0}]})


def width_gain(n):
    # 6 dB per doubling of M1 width, 0 dB at 1 um
    return 20 * math.log10(n.find("M1").value("W") / 1e-6)


def evaluator():
    return AnalyticEvaluator({"dc_gain": width_gain})


SCRIPT3 = [json.dumps({"devices": {"M1": {"W": w}}, "rationale": f"widen to {w}"}) for w in ("2u", "4u", "8u")]


# ------------------------------------------------------------ loop properties

def test_three_step_script_takes_three_iterations(rload, tmp_path):
    reports, files = [], []
    for k in range(2):
        d = tmp_path / f"run{k}"
        reports.append(run_sizing_loop(rload, gain_spec(18), ScriptedProposer(lines=SCRIPT3), 20, evaluator(),
                                       run_dir=d))
        files.append({p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    r = reports[0]
    assert r.succeed and r.iterations_used == 3 and r.proposer_calls == 3 and r.verified
    assert json.dumps(reports[0].to_dict()) == json.dumps(reports[1].to_dict())
    assert files[0] == files[1]
    assert load_netlist_text(r.final_netlist).find("M1").value("W") == pytest.approx(8e-6)


def load_netlist_text(text):
    return parse_netlist(text)


@pytest.mark.parametrize("budget", [20, 25])
def test_null_proposer_exhausts_budget(rload, budget):
    ev = evaluator()
    r = run_sizing_loop(rload, gain_spec(18, budget), NullProposer(), None, ev)
    assert not r.succeed and r.iterations_used == budget and r.proposer_calls == budget
    assert len(r.history) == budget
    assert ev.calls == 1  # unchanged design is never re-simulated


def test_presatisfied_spec_stops_at_one(rload):
    p = ScriptedProposer(lines=SCRIPT3)
    r = run_sizing_loop(rload, gain_spec(0), p, 20, evaluator())
    assert r.succeed and r.iterations_used == 1 and r.proposer_calls == 0 and p.calls == 0


def test_guard_blocks_success(rload):
    ev = AnalyticEvaluator({"dc_gain": width_gain}, lambda n: overdrive_report([("M1", 0.0, 0.4)]))
    r = run_sizing_loop(rload, gain_spec(0), NullProposer(), 5, ev)
    assert not r.succeed and r.history[-1].flags.all_pass


def test_script_exhaustion_then_no_change(rload):
    r = run_sizing_loop(rload, gain_spec(30), ScriptedProposer(lines=SCRIPT3[:1]), 4, evaluator())
    assert not r.succeed and r.iterations_used == 4
    assert "script exhausted" in r.history[-1].rationale


def test_unparseable_and_empty_proposals_are_recorded(rload):
    lines = ["not json", json.dumps({"devices": {"M99": {"W": "2u"}}}), SCRIPT3[2]]
    r = run_sizing_loop(rload, gain_spec(18), ScriptedProposer(lines=lines), 5, evaluator())
    assert r.succeed and r.iterations_used == 3
    assert any("unparseable" in n for n in r.history[0].notes)
    assert any("no valid updates" in n for n in r.history[1].notes)


def test_final_netlist_is_best_when_failing(rload):
    lines = [SCRIPT3[2], json.dumps({"devices": {"M1": {"W": "1u"}}})]
    r = run_sizing_loop(rload, gain_spec(30), ScriptedProposer(lines=lines), 2, evaluator())
    assert not r.succeed and r.final_index == 2
    r = run_sizing_loop(rload, gain_spec(12), ScriptedProposer(lines=[SCRIPT3[0], SCRIPT3[1]]), 2, evaluator())
    assert r.succeed and r.final_index == 2


# ------------------------------------------------------------ decomposition and prompt

@pytest.mark.parametrize("name, words", [("r_load", "common-source"), ("ota5t", "transconductance"),
                                         ("osc", "oscillator"), ("inv", "inverter"), ("nand", "NAND"),
                                         ("xor", "XOR"), ("opamp20", "amplifier")])
def test_classify_fixtures(fixtures, name, words):
    assert words.lower() in classify_circuit(load_netlist(fixtures / "netlists" / f"{name}.sp")).lower()


def test_decompose_needs_vout():
    n = parse_netlist("t\nV1 a 0 1\nR1 a 0 1k\n.end\n")
    with pytest.raises(DecompositionFailed):
        decompose(n, gain_spec(1), NullProposer())


def test_prompt_sections(rload):
    ctx = decompose(rload, gain_spec(18), NullProposer())
    r = run_sizing_loop(rload, gain_spec(18), ScriptedProposer(lines=SCRIPT3), 20, evaluator())
    text = build_cot_prompt(ctx, list(r.history[:1]), r.history[0], C180, rload.text())
    order = [text.index(s) for s in ("Targets", "History", "Current results", "Constraints")]
    assert order == sorted(order)
    for step in COT_STEPS:
        assert step in text
    assert "```json" in text and "W ∈" in text


# ------------------------------------------------------------ proposals

def test_parse_proposal_units():
    p = parse_proposal('Widen it.\n```json\n{"devices": {"M1": {"W": "3.5u", "L": 0.18}}, '
                       '"sources": {"Vbias1": "650m"}}\n```')
    assert p.device_updates["M1"] == {"W": pytest.approx(3.5e-6), "L": pytest.approx(0.18e-6)}
    assert p.source_updates["Vbias1"] == pytest.approx(0.65)
    assert p.rationale == "Widen it."


def test_bare_metres_below_cutoff():
    p = proposal_from_obj({"devices": {"M1": {"W": 2e-6}}})
    assert p.device_updates["M1"]["W"] == pytest.approx(2e-6)


@pytest.mark.parametrize("text", ["no json here", "```json\n[1, 2]\n```",
                                  '```json\n{"devices": {"M1": {"X": 1}}}\n```',
                                  '```json\n{"devices": {"M1": {"W": -1}}}\n```'])
def test_parse_proposal_rejects(text):
    with pytest.raises(UnparseableProposal):
        parse_proposal(text)


def test_no_change_marker():
    assert parse_proposal('```json\n{"no_change": true}\n```').no_change


def test_apply_skips_supply_and_unknowns(rload):
    p = Proposal({"M1": {"W": 3e-6}, "M7": {"W": 1e-6}}, {"Vdd": 1.0, "Vbias1": 0.7})
    n, logs = apply_proposal(rload, p, C180)
    assert n.find("M1").value("W") == pytest.approx(3e-6)
    assert n.find("Vdd").value("dc") == pytest.approx(1.8)
    assert n.find("Vbias1").value("dc") == pytest.approx(0.7)
    assert any("M7" in x for x in logs) and any("Vdd" in x for x in logs)
    with pytest.raises(EmptyProposal):
        apply_proposal(rload, Proposal({"M7": {"W": 1e-6}}), C180)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_proposals_stay_in_range(seed):
    rload = load_netlist(FIXTURES / "netlists" / "r_load.sp")
    rp = RandomProposer(seed, fraction=1.0, spread=10.0)
    p, _ = rp.propose("", rload, C180)
    n, _ = apply_proposal(rload, p, C180)
    m = parse_netlist(n.text()).find("M1")
    assert C180.w_range[0] <= m.value("W") <= C180.w_range[1]
    assert C180.l_range[0] <= m.value("L") <= C180.l_range[1]


# ------------------------------------------------------------ function declarations

def test_declarations():
    names = [d["name"] for d in DECLARATIONS]
    assert len(names) == 15 and len(set(names)) == 15
    assert {"dc_simulation", "ac_simulation", "transient_simulation"} <= set(names)


def test_validate_call():
    assert validate_call({"name": "ac_simulation", "arguments": {"configuration": "amplifier_open_loop"}})
    assert validate_call({"name": "ac_simulation", "arguments": {"configuration": "bogus"}}) is None
    assert validate_call({"name": "rm_rf", "arguments": {}}) is None


def test_deterministic_plan_orders_simulations_first():
    calls = deterministic_plan(["dc_gain", "ugbw", "power"])
    assert [c.name for c in calls] == ["ac_simulation", "transient_simulation", "dc_gain", "ugbw", "power"]


# ------------------------------------------------------------ hosted backends over a mock transport

def openai_reply(text, tool_calls=None):
    msg = {"role": "assistant", "content": text}
    if tool_calls:
        msg["tool_calls"] = tool_calls
    return httpx.Response(200, json={"choices": [{"message": msg}]})


def scripted_transport(responses, seen):
    it = iter(responses)

    def handler(request):
        seen.append(request)
        r = next(it)
        return r() if callable(r) else r
    return httpx.Client(transport=httpx.MockTransport(handler))


GOOD = 'ok\n```json\n{"devices": {"M1": {"W": "2u"}}}\n```'


def test_retry_then_success():
    seen, sleeps = [], []
    client = scripted_transport([httpx.Response(500), httpx.Response(429, headers={"retry-after": "7"}),
                                 openai_reply(GOOD)], seen)
    p = OpenAICompatibleProposer(BackendConfig("openai_compatible", "m"), "k", client, sleep=sleeps.append)
    prop, tr = p.propose("prompt")
    assert prop.device_updates["M1"]["W"] == pytest.approx(2e-6)
    assert sleeps == [1.0, 7.0]
    assert seen[0].headers["authorization"] == "Bearer k"
    assert seen[0].url.path.endswith("/chat/completions")


def test_client_error_is_not_retried():
    seen = []
    client = scripted_transport([httpx.Response(401, text="bad key")], seen)
    p = OpenAICompatibleProposer(BackendConfig("openai_compatible", "m"), "k", client, sleep=lambda s: None)
    with pytest.raises(ProposerUnavailable, match="401"):
        p.propose("prompt")
    assert len(seen) == 1


def test_gives_up_after_retries():
    seen = []
    client = scripted_transport([httpx.Response(503)] * 4, seen)
    p = OpenAICompatibleProposer(BackendConfig("openai_compatible", "m"), "k", client, sleep=lambda s: None)
    with pytest.raises(ProposerUnavailable):
        p.propose("prompt")
    assert len(seen) == 4


def test_corrective_reprompt():
    seen = []
    client = scripted_transport([openai_reply("thinking..."), openai_reply(GOOD)], seen)
    p = OpenAICompatibleProposer(BackendConfig("openai_compatible", "m"), "k", client, sleep=lambda s: None)
    prop, tr = p.propose("prompt")
    assert tr.attempts == 2 and not prop.is_empty
    body = json.loads(seen[1].content)
    assert len(body["messages"]) == 3 and "fenced" in body["messages"][2]["content"]


def test_reprompts_exhausted():
    client = scripted_transport([openai_reply("nope")] * 3, [])
    p = OpenAICompatibleProposer(BackendConfig("openai_compatible", "m"), "k", client, sleep=lambda s: None)
    with pytest.raises(UnparseableProposal):
        p.propose("prompt")


def test_tool_selection_drops_invalid_calls():
    calls = [{"function": {"name": "ac_simulation", "arguments": '{"configuration": "amplifier_open_loop"}'}},
             {"function": {"name": "dc_gain", "arguments": "{}"}},
             {"function": {"name": "launch", "arguments": "{}"}}]
    client = scripted_transport([openai_reply("", calls)], [])
    p = OpenAICompatibleProposer(BackendConfig("openai_compatible", "m"), "k", client, sleep=lambda s: None)
    got, warnings = select_functions(gain_spec(1).targets, p)
    assert [c.name for c in got] == ["ac_simulation", "dc_gain"]
    assert len(warnings) == 1


def test_gemini_wire_format():
    seen = []
    reply = httpx.Response(200, json={"candidates": [{"content": {"parts": [{"text": GOOD}]}}]})
    client = scripted_transport([reply], seen)
    p = GeminiProposer(BackendConfig("gemini", "gem"), "gk", client, sleep=lambda s: None)
    prop, _ = p.propose("prompt")
    assert not prop.is_empty
    assert seen[0].headers["x-goog-api-key"] == "gk"
    assert seen[0].url.path.endswith("/models/gem:generateContent")


def test_make_proposer_needs_keys(monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    monkeypatch.delenv("GEMINI_API_KEY", raising=False)
    with pytest.raises(ProposerUnavailable, match="OPENAI_API_KEY"):
        make_proposer(BackendConfig("openai_compatible", "m"))
    with pytest.raises(ProposerUnavailable, match="GEMINI_API_KEY"):
        make_proposer(BackendConfig("gemini", "m"))
    assert isinstance(make_proposer(BackendConfig("null")), NullProposer)
