import csv
import json
import math

import pytest
from hypothesis import given, strategies as st

from sizeloop.agent import AnalyticEvaluator, NullProposer, ScriptedProposer
from sizeloop.bench import AttemptResult, load_suite, run_bench, summarize, summary_from_runs

# (metric, direction, value) per circuit, as in the reference target tables
TABLE_IV = {
    "r_load": [("dc_gain", "at_least", 20), ("bandwidth", "at_least", 1e6), ("phase_margin", "at_least", 60)],
    "ota5t": [("dc_gain", "at_least", 40), ("bandwidth", "at_least", 1e6), ("phase_margin", "at_least", 60)],
    "osc": [("osc_frequency", "at_least", 10e9)],
    "inv": [("delay", "at_most", 10e-12), ("power", "at_most", 5e-12)],
    "nand": [("delay", "at_most", 20e-12), ("power", "at_most", 5e-12)],
    "xor": [("delay", "at_most", 30e-12), ("power", "at_most", 5e-12)],
}
TABLE_VI = {
    "opamp20_g1": dict(dc_gain=65, ugbw=10e6, phase_margin=50, power=10e-3, cmrr=100, thd=-26,
                       input_offset=1e-3, output_swing=1.2, icmr=1.2),
    "opamp20_g2": dict(dc_gain=65, ugbw=5e6, phase_margin=45, power=5e-3, cmrr=100, thd=-26,
                       input_offset=1e-3, output_swing=1.2, icmr=1.2),
    "opamp20_g3": dict(dc_gain=65, ugbw=50e6, phase_margin=50, power=20e-3, cmrr=80, thd=-26,
                       input_offset=1e-3, output_swing=1.2, icmr=1.2),
}
TABLE_VI_LOAD = {"opamp20_g1": (10e-12, 1e3), "opamp20_g2": (50e-12, 100e3), "opamp20_g3": (10e-12, 1e3)}


def test_basic_suite_targets_are_table_exact():
    cases = load_suite("basic6")
    assert [c.name for c in cases] == list(TABLE_IV)
    for c in cases:
        got = [(t.metric, t.direction, t.value) for t in c.targets]
        assert got == [(m, d, pytest.approx(v, rel=1e-12)) for m, d, v in TABLE_IV[c.name]]
        assert c.budget == 20 and c.spec.technology == "180nm"
        assert all(t.tolerance == 0.05 for t in c.targets)


def test_opamp_suite_targets_are_table_exact():
    cases = load_suite("opamp90")
    assert [c.name for c in cases] == list(TABLE_VI)
    for c in cases:
        assert {t.metric: t.value for t in c.targets} == {k: pytest.approx(v) for k, v in TABLE_VI[c.name].items()}
        assert c.budget == 25 and c.spec.technology == "90nm"
        assert (c.spec.harness.cl, c.spec.harness.rl) == TABLE_VI_LOAD[c.name]


def test_initial_sizing_rule():
    for c in load_suite("basic6") + load_suite("opamp90"):
        from sizeloop.netlist import load_netlist
        lmin = c.spec.constraints.l_range[0]
        for m in load_netlist(c.netlist).devices("mosfet"):
            assert m.value("W") == pytest.approx(1e-6) and m.value("L") == pytest.approx(lmin)


def test_unknown_suite_lists_shipped():
    with pytest.raises(FileNotFoundError, match="basic6"):
        load_suite("nope")


@given(st.lists(st.tuples(st.sampled_from("abc"), st.booleans(), st.integers(1, 25)), min_size=1, max_size=60))
def test_summary_arithmetic(rows):
    results = [AttemptResult(c, i, ok, it) for i, (c, ok, it) in enumerate(rows)]
    s = summarize(results)
    for cs in s.cases:
        mine = [r for r in results if r.case == cs.name]
        ok = [r.iterations for r in mine if r.succeed]
        assert cs.attempts == len(mine) and cs.successes == len(ok)
        assert cs.success_rate == len(ok) / len(mine)
        assert list(cs.iterations) == ok
        if ok:
            assert cs.mean == pytest.approx(sum(ok) / len(ok)) and cs.min == min(ok) and cs.max == max(ok)
        else:
            assert cs.mean is None and cs.min is None


def width_gain(n):
    return 20 * math.log10(n.find("M1").value("W") / 1e-6)


@pytest.fixture
def gain_case(tmp_path, fixtures):
    spec = {"technology": "180nm", "max_iterations": 20,
            "targets": [{"metric": "dc_gain", "direction": "at_least", "value": 18, "tolerance": 0}]}
    (tmp_path / "g.json").write_text(json.dumps(spec))
    manifest = {"cases": [{"name": "gain", "netlist": str(fixtures / "netlists" / "r_load.sp"),
                           "spec": "g.json", "budget": 20}]}
    (tmp_path / "suite.json").write_text(json.dumps(manifest))
    return load_suite(tmp_path / "suite.json")


SCRIPT = [json.dumps({"devices": {"M1": {"W": w}}}) for w in ("2u", "4u", "8u")]


def test_scripted_bench_succeeds_with_script_length(gain_case, tmp_path):
    out = tmp_path / "out"
    s = run_bench(gain_case, lambda c, a: ScriptedProposer(lines=SCRIPT), 4, out_dir=out,
                  evaluator_factory=lambda c: AnalyticEvaluator({"dc_gain": width_gain}))
    cs = s.case("gain")
    assert cs.success_rate == 1.0 and cs.mean == 3 and cs.iterations == (3, 3, 3, 3)
    assert summary_from_runs(out).to_dict() == s.to_dict()
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert rows[0]["success_rate"] == "1.0"
    assert sorted(p.name for p in (out / "gain").iterdir()) == [f"attempt_{i:02d}" for i in range(1, 5)]


def test_null_bench_fails_everything(gain_case, tmp_path):
    s = run_bench(gain_case, lambda c, a: NullProposer(), 3, out_dir=tmp_path / "o", jobs=3,
                  evaluator_factory=lambda c: AnalyticEvaluator({"dc_gain": width_gain}))
    cs = s.case("gain")
    assert cs.success_rate == 0 and cs.iterations == () and cs.mean is None
    assert cs.failed_iterations == (20, 20, 20)
    assert summary_from_runs(tmp_path / "o").to_dict() == s.to_dict()


def test_attempt_errors_do_not_abort(gain_case):
    def factory(case, attempt):
        if attempt == 2:
            raise RuntimeError("backend down")
        return ScriptedProposer(lines=SCRIPT)
    s = run_bench(gain_case, factory, 3, evaluator_factory=lambda c: AnalyticEvaluator({"dc_gain": width_gain}))
    assert [a.succeed for a in s.attempts] == [True, False, True]
    assert "backend down" in s.attempts[1].error
