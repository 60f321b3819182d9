import os
import stat

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sizeloop.netlist import load_netlist, parse_netlist
from sizeloop.simulator import (
    ALL_ON_MESSAGE, AnalysisCard, HeaderMismatch, RawfileError, Simulator, SimulationFailed, SimulatorNotFound,
    TruncatedRawfile, UnknownProbe, overdrive_report, parse_rawfile, resolve_binary, vector_key,
)


def rawfile(names, rows, complex_=False, plot="AC Analysis"):
    kinds = ["frequency" if complex_ else "voltage"] + ["voltage"] * (len(names) - 1)
    out = ["Title: t", "Date: x", f"Plotname: {plot}", f"Flags: {'complex' if complex_ else 'real'}",
           f"No. Variables: {len(names)}", f"No. Points: {len(rows)}", "Variables:"]
    out += [f"\t{i}\t{n}\t{k}" for i, (n, k) in enumerate(zip(names, kinds))]
    out.append("Values:")
    for j, row in enumerate(rows):
        cells = [f"{complex(v).real!r},{complex(v).imag!r}" if complex_ else repr(float(v)) for v in row]
        out.append(f" {j}\t{cells[0]}")
        out += [f"\t{c}" for c in cells[1:]]
    return "\n".join(out) + "\n"


def test_parse_dc_sweep():
    raw = parse_rawfile(rawfile(["v(v-sweep)", "v(out)"], [(0.0, 1.0), (0.5, 0.7), (1.0, 0.2)], plot="DC"))
    assert raw.has_sweep
    assert np.allclose(raw.sweep, [0, 0.5, 1])
    assert np.allclose(raw.vector("out"), [1, 0.7, 0.2])
    assert np.allclose(raw.vector("V(OUT)"), raw.vector("v(out)"))


def test_parse_complex():
    raw = parse_rawfile(rawfile(["frequency", "v(out)"], [(1, 1 + 1j), (10, 0.5 - 0.5j)], complex_=True))
    assert raw.is_complex and raw.has_sweep
    assert raw.vector("out")[1] == pytest.approx(0.5 - 0.5j)


def test_operating_point_has_no_sweep():
    raw = parse_rawfile(rawfile(["v(out)", "@m1[vgs]"], [(0.6, 0.4)], plot="Operating Point"))
    assert not raw.has_sweep


@pytest.mark.parametrize("mangle, err", [
    (lambda t: t.replace("No. Points: 3", "No. Points: 2"), HeaderMismatch),
    (lambda t: t.replace("No. Points: 3", "No. Points: 4"), TruncatedRawfile),
    (lambda t: t.rsplit("\n", 2)[0] + "\n", TruncatedRawfile),
    (lambda t: t.replace("Values:", "Binary:"), RawfileError),
    (lambda t: t.replace("Plotname: DC\n", ""), HeaderMismatch),
])
def test_malformed_rawfiles(mangle, err):
    text = rawfile(["v(v-sweep)", "v(out)"], [(0.0, 1.0), (0.5, 0.7), (1.0, 0.2)], plot="DC")
    with pytest.raises(err):
        parse_rawfile(mangle(text))


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=40))
def test_rawfile_roundtrip(rows):
    raw = parse_rawfile(rawfile(["time", "v(a)"], rows, plot="Transient"))
    assert np.array_equal(raw.points, np.array(rows, dtype=float))


@pytest.mark.parametrize("a, b", [("v(out)", "out"), ("V(Out)", "out"), ("vdd#branch", "i(vdd)")])
def test_vector_key(a, b):
    assert vector_key(a) == vector_key(b)


def test_analysis_directives():
    assert AnalysisCard.dc_sweep("Vin", 0, 1.8, 0.001).directive() == ".dc Vin 0 1.8 0.001"
    assert AnalysisCard.ac_sweep(20, 1, 10e9).directive().startswith(".ac dec 20")
    with pytest.raises(ValueError):
        AnalysisCard.dc_sweep("Vin", 1, 0, 0.1)
    with pytest.raises(ValueError):
        AnalysisCard.transient(1e-6, 1e-9)


def test_deck_pins_ascii_and_drops_user_analyses():
    n = parse_netlist("t\nV1 a 0 DC 1\nR1 a 0 1k\n.tran 1n 10n\n.end\n")
    deck = Simulator("x").build_deck(n, AnalysisCard.op(), ["v(a)"])
    assert ".tran" not in deck and "set filetype=ascii" in deck and deck.count(".end\n") == 1
    with pytest.raises(UnknownProbe):
        Simulator("x").build_deck(n, AnalysisCard.op(), ["v(nowhere)"])


def test_missing_binary(monkeypatch, tmp_path):
    monkeypatch.delenv("EESIZER_NGSPICE", raising=False)
    monkeypatch.setenv("PATH", str(tmp_path))
    with pytest.raises(SimulatorNotFound, match="EESIZER_NGSPICE"):
        resolve_binary()
    f = tmp_path / "notexec"
    f.write_text("")
    with pytest.raises(SimulatorNotFound):
        resolve_binary(str(f))


def test_overdrive_report_messages():
    assert overdrive_report([("M1", 0.8, 0.4)]).message == ALL_ON_MESSAGE == "No values found where vgs-vth < 0"
    r = overdrive_report([("M1", 0.0, 0.35), ("M2", -0.9, -0.4)])
    assert not r.all_on and r.off_devices() == ["M1"]
    assert r.message == "Found values where vgs-vth < 0: M1 (-350.0 mV)"
    assert overdrive_report([]).all_on


@pytest.mark.requires_sim
def test_simulate_divider(sim):
    n = parse_netlist("divider\nV1 a 0 DC 1\nR1 a b 1k\nR2 b 0 3k\n.end\n")
    raw = sim.simulate(n, AnalysisCard.op(), ["v(b)"])
    assert float(np.real(raw.vector("b")[0])) == pytest.approx(0.75, rel=1e-9)


@pytest.mark.requires_sim
def test_simulation_failure_keeps_log(sim, tmp_path):
    n = parse_netlist("bad\n.include nowhere.lib\nM1 d g 0 0 NOPE W=1u L=1u\nV1 d 0 1\nV2 g 0 1\n.end\n")
    with pytest.raises(SimulationFailed):
        sim.simulate(n, AnalysisCard.op(), [], tmp_path / "ws")
    assert (tmp_path / "ws" / "sim.log").exists()


@pytest.mark.requires_sim
def test_overdrive_on_fixtures(sim, fixtures):
    off = sim.check_overdrive(load_netlist(fixtures / "netlists" / "vgs0.sp"))
    assert not off.all_on and off.off_devices() == ["M1"]
    on = sim.check_overdrive(load_netlist(fixtures / "netlists" / "r_load.sp"))
    assert on.all_on and on.message == ALL_ON_MESSAGE
