"""Gaussian variation study of one netlist/spec pair; writes report.json and histogram.csv."""

import argparse
import sys

from sizeloop.netlist import load_netlist
from sizeloop.simulator import Simulator, resolve_binary
from sizeloop.spec import parse_spec
from sizeloop.variation import VariationSpec, run_variation_study, write_variation


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("netlist")
    ap.add_argument("spec")
    ap.add_argument("--samples", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sigma-wl", type=float, default=5e-9)
    ap.add_argument("--sigma-vth", type=float, default=10e-3)
    ap.add_argument("--jobs", type=int, default=4)
    ap.add_argument("--ngspice")
    ap.add_argument("--models", action="append", default=[])
    ap.add_argument("--out", default="runs/variation")
    args = ap.parse_args(argv)

    spec = parse_spec(args.spec)
    sim = Simulator(resolve_binary(args.ngspice), model_dirs=tuple(args.models))
    v = VariationSpec(args.sigma_wl, args.sigma_vth, args.samples, args.seed)
    rep = run_variation_study(load_netlist(args.netlist), spec.targets, v, spec.harness, sim, spec.constraints,
                              jobs=args.jobs, workdir=f"{args.out}/samples")
    write_variation(rep, args.out)
    for m, s in rep.metrics.items():
        print(f"{m:<14} mean={s.sample_mean:.5g} std={s.sample_std:.3g} pass={s.pass_rate:.0%}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
