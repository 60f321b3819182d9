"""Measure the shipped G1-2 opamp sizing against the G1 targets, then replay its 3-step script."""

import argparse
import sys
from pathlib import Path

from sizeloop.agent import ScriptedProposer, run_sizing_loop
from sizeloop.measure import measure_suite
from sizeloop.netlist import load_netlist
from sizeloop.simulator import Simulator, resolve_binary
from sizeloop.spec import check_spec, evaluate_success, format_report, parse_spec

ROOT = Path(__file__).resolve().parents[1]
FIX = ROOT / "src" / "sizeloop" / "fixtures"
TOOLS = ROOT / "tools" / "ngspice-wasm"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ngspice", default=str(TOOLS / "ngspice-wasm") if (TOOLS / "ngspice-wasm").exists() else None)
    ap.add_argument("--models", default=str(TOOLS / "models"))
    ap.add_argument("--out", default="runs/g12")
    ap.add_argument("--replay", action="store_true", help="also run the scripted sizing loop")
    args = ap.parse_args(argv)

    sim = Simulator(resolve_binary(args.ngspice), model_dirs=(args.models,))
    spec = parse_spec(FIX / "specs" / "g1.json")
    n = load_netlist(FIX / "netlists" / "opamp20_g12.sp")
    flags = check_spec(measure_suite(n, spec.metrics, spec.harness, sim), spec.targets)
    verdict = evaluate_success(flags, sim.check_overdrive(n))
    print(format_report(verdict))

    if args.replay:
        start = load_netlist(FIX / "netlists" / "opamp20.sp")
        r = run_sizing_loop(start, spec, ScriptedProposer(FIX / "scripts" / "g12.jsonl"), 3, sim=sim,
                            run_dir=args.out)
        print(f"replay: succeed={r.succeed} iterations={r.iterations_used} -> {args.out}")
    return 0 if verdict.succeed else 1


if __name__ == "__main__":
    sys.exit(main())
