import pytest

from sizeloop.golden import COLUMNS, G12_BIAS, G12_SIZES, GROUP_TARGETS, ROWS, mismatches
from sizeloop.spec import check_spec, evaluate_success


def flags_for(label):
    row = next(r for r in ROWS if r.label == label)
    return row, check_spec(row.results(), GROUP_TARGETS[row.group])


def test_rows_complete():
    assert all(len(r.values) == len(COLUMNS) for r in ROWS)
    assert {r.group for r in ROWS} == set(GROUP_TARGETS)
    for r in ROWS:
        assert r.red <= set(COLUMNS)
        assert (r.iteration is not None) == (not r.red)


@pytest.mark.parametrize("label", ["180nm iter 13", "180nm iter 15", "130nm iter 22", "G1-1", "G1-2",
                                   "G2-1", "G3-1"])
def test_successful_rows_pass_everything(label):
    _, flags = flags_for(label)
    assert evaluate_success(flags, None).succeed


def test_power_boundary_130nm():
    _, f3 = flags_for("130nm fail 3")
    _, f4 = flags_for("130nm fail 4")
    power = lambda fl: next(f for f in fl if f.metric == "power").passed
    assert power(f3) and not power(f4)


def test_g1_5_fails_exactly():
    _, flags = flags_for("G1-5")
    assert {f.metric for f in flags if not f.passed} == {"dc_gain", "cmrr", "input_offset", "output_swing", "icmr"}


def test_g3_1_swing_passes_at_tolerance():
    _, flags = flags_for("G3-1")
    swing = next(f for f in flags if f.metric == "output_swing")
    assert swing.measured == pytest.approx(1.14) and swing.passed


def test_only_known_mismatches():
    found = []
    for r in ROWS:
        found += mismatches(r, check_spec(r.results(), GROUP_TARGETS[r.group]))
    # 1.15 V and 1.18 V are printed as failing a 1.2 V target at 5% tolerance, but clear the 1.14 V bound
    assert found == [
        "90nm fail 3: output_swing=1.15 printed fail, computed pass (bound 1.14)",
        "90nm fail 3: icmr=1.18 printed fail, computed pass (bound 1.14)",
    ]


def test_g12_sizes_cover_all_devices():
    devs = [d for group in G12_SIZES for d in group]
    assert sorted(devs, key=lambda d: int(d[1:])) == [f"M{i}" for i in range(1, 21)]
    assert set(G12_BIAS) == {f"Vbias{i}" for i in range(1, 7)}


def test_g12_fixture_matches_table(fixtures):
    from sizeloop.netlist import load_netlist
    n = load_netlist(fixtures / "netlists" / "opamp20_g12.sp")
    for group, (w, l) in G12_SIZES.items():
        for d in group:
            assert n.find(d).value("W") == pytest.approx(w * 1e-6)
            assert n.find(d).value("L") == pytest.approx(l * 1e-6)
    for s, v in G12_BIAS.items():
        assert n.find(s).value("dc") == pytest.approx(v)
