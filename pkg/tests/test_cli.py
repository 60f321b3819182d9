import json

import pytest

from sizeloop.cli import EXIT_CONFIG, EXIT_OK, EXIT_UNMET, build_parser, main, resolve_config
from sizeloop.golden import ROWS

from conftest import BINARY, MODELS


def results_file(tmp_path, label):
    row = next(r for r in ROWS if r.label == label)
    p = tmp_path / "results.json"
    p.write_text(json.dumps(row.results()))
    return p


def test_check_all_pass(tmp_path, fixtures, capsys):
    rc = main(["check", "--spec", str(fixtures / "specs" / "node_180nm.json"),
               "--results", str(results_file(tmp_path, "180nm iter 13"))])
    assert rc == EXIT_OK
    assert "SUCCEED" in capsys.readouterr().out


def test_check_g1_5(tmp_path, fixtures, capsys):
    rc = main(["check", "--spec", str(fixtures / "specs" / "g1.json"),
               "--results", str(results_file(tmp_path, "G1-5"))])
    assert rc == EXIT_UNMET
    lines = capsys.readouterr().out.splitlines()
    failing = {ln.split()[0] for ln in lines if ln.rstrip().endswith("FAIL")}
    assert failing == {"dc_gain", "cmrr", "input_offset", "output_swing", "icmr"}


def test_check_empty_targets_is_vacuous(tmp_path, capsys):
    spec = tmp_path / "empty.json"
    spec.write_text(json.dumps({"technology": "180nm", "targets": []}))
    res = tmp_path / "r.json"
    res.write_text("{}")
    assert main(["check", "--spec", str(spec), "--results", str(res)]) == EXIT_OK
    assert "vacuous" in capsys.readouterr().err


def test_check_rejects_unknown_metric(tmp_path, fixtures):
    res = tmp_path / "r.json"
    res.write_text(json.dumps({"gain": 3}))
    assert main(["check", "--spec", str(fixtures / "specs" / "g1.json"), "--results", str(res)]) == EXIT_CONFIG


def test_golden_reports_known_mismatches(capsys):
    assert main(["check", "--golden"]) == EXIT_UNMET
    out = capsys.readouterr().out
    assert "2 mismatched cells" in out and "90nm fail 3" in out


def test_missing_simulator_is_a_config_error(monkeypatch, tmp_path, fixtures, capsys):
    monkeypatch.delenv("EESIZER_NGSPICE", raising=False)
    monkeypatch.setenv("PATH", str(tmp_path))
    rc = main(["size", "--netlist", str(fixtures / "netlists" / "r_load.sp"),
               "--spec", str(fixtures / "specs" / "r_load.json"), "--backend", "null"])
    assert rc == EXIT_CONFIG
    assert "EESIZER_NGSPICE" in capsys.readouterr().err


def test_unknown_metric_lists_valid(capsys, fixtures):
    rc = main(["measure", "--netlist", str(fixtures / "netlists" / "r_load.sp"), "--metrics", "gain",
               "--ngspice", BINARY or "/bin/sh"])
    assert rc == EXIT_CONFIG
    assert "dc_gain" in capsys.readouterr().err


def test_hosted_backend_without_key(monkeypatch, fixtures, tmp_path):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    rc = main(["size", "--netlist", str(fixtures / "netlists" / "r_load.sp"), "--spec",
               str(fixtures / "specs" / "r_load.json"), "--backend", "openai_compatible", "--ngspice",
               BINARY or "/bin/sh", "--out", str(tmp_path)])
    assert rc == EXIT_CONFIG


def test_flag_precedence(monkeypatch, fixtures):
    from sizeloop.spec import parse_spec
    spec = parse_spec({"targets": [], "backend": {"kind": "random", "model": "from-file", "seed": 1}})
    monkeypatch.setenv("EESIZER_API_BASE", "http://env")
    args = build_parser().parse_args(["check", "--model-name", "from-flag"])
    cfg = resolve_config(args, spec)
    assert cfg.backend.kind == "random" and cfg.backend.model == "from-flag" and cfg.backend.api_base == "http://env"
    args = build_parser().parse_args(["check", "--backend", "null", "--seed", "5"])
    cfg = resolve_config(args, spec)
    assert cfg.backend.kind == "null" and cfg.backend.seed == 5 and cfg.backend.model == "from-file"


def sim_flags():
    return ["--ngspice", BINARY, "--models", str(MODELS)]


@pytest.mark.requires_sim
def test_measure_writes_json_and_csv(tmp_path, fixtures):
    out = tmp_path / "m"
    rc = main(["measure", "--netlist", str(fixtures / "netlists" / "rc_lowpass.sp"), "--metrics",
               "dc_gain,bandwidth", "--out", str(out), "--sweep-dump"] + sim_flags())
    assert rc == EXIT_OK
    data = json.loads((out / "results.json").read_text())
    assert [d["metric"] for d in data] == ["dc_gain", "bandwidth"]
    assert (out / "results.csv").exists() and (out / "open_loop_ac.csv").exists()
    assert json.loads((out / "config.json").read_text())["metrics"] == ["dc_gain", "bandwidth"]


@pytest.mark.requires_sim
def test_measure_icmr_dumps_transfer_curve(tmp_path, fixtures):
    out = tmp_path / "m"
    rc = main(["measure", "--netlist", str(fixtures / "netlists" / "opamp20_g12.sp"), "--spec",
               str(fixtures / "specs" / "g1.json"), "--metrics", "icmr", "--out", str(out), "--sweep-dump"]
              + sim_flags())
    assert rc == EXIT_OK
    header = (out / "unity_dc.csv").read_text().splitlines()[0]
    assert header == "v(v-sweep),v(out)"


@pytest.mark.requires_sim
def test_size_budget_exhausted(tmp_path, fixtures):
    out = tmp_path / "run"
    rc = main(["size", "--netlist", str(fixtures / "netlists" / "r_load.sp"), "--spec",
               str(fixtures / "specs" / "r_load.json"), "--backend", "null", "--budget", "2", "--out", str(out)]
              + sim_flags())
    assert rc == EXIT_UNMET
    run = json.loads((out / "run.json").read_text())
    assert run["succeed"] is False and len(run["history"]) == 2
    assert (out / "final.sp").exists() and (out / "rationale.md").read_text().startswith("# Reasons")


@pytest.mark.requires_sim
def test_vary_is_deterministic(tmp_path, fixtures):
    reports = []
    for k in range(2):
        out = tmp_path / f"v{k}"
        rc = main(["vary", "--netlist", str(fixtures / "netlists" / "r_load.sp"), "--spec",
                   str(fixtures / "specs" / "r_load.json"), "--samples", "3", "--seed", "42", "--out", str(out)]
                  + sim_flags())
        assert rc == EXIT_OK
        reports.append((out / "report.json").read_bytes())
    assert reports[0] == reports[1]


@pytest.mark.requires_sim
def test_bench_null_backend(tmp_path):
    out = tmp_path / "b"
    rc = main(["bench", "--suite", "basic6", "--attempts", "2", "--backend", "null", "--budget", "2",
               "--jobs", "4", "--out", str(out)] + sim_flags())
    assert rc == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["cases"]) == 6
    assert all(c["success_rate"] == 0 and c["mean"] is None for c in summary["cases"])
