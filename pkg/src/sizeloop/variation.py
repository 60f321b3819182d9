"""Gaussian device variation: perturbed W/L, gate-source threshold shifts, pass-rate statistics."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agent.loop import Evaluation, SimulationEvaluator
from .measure import Harness, _json_num
from .netlist import Netlist, NetlistError, NodeConstraints, _make_card, _replace_kv, _tokens, add_cards
from .simulator import Simulator
from .spec import SpecTarget, check_spec
from .units import format_plain, format_value

QUANTITY = {"w": 0, "l": 1, "vth": 2}


class GateInsertionConflict(NetlistError):
    pass


@dataclass(frozen=True)
class VariationSpec:
    sigma_wl: float = 5e-9
    sigma_vth: float = 10e-3
    samples: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.sigma_wl < 0 or self.sigma_vth < 0:
            raise ValueError("sigmas must be non-negative")
        if self.samples < 1:
            raise ValueError("need at least one sample")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _device_key(device_id: str) -> int:
    return int.from_bytes(hashlib.sha256(device_id.lower().encode()).digest()[:8], "little")


def draw(seed: int, sample: int, device_id: str, quantity: str, sigma: float) -> float:
    """One N(0, sigma) draw from a stream keyed by (seed, sample, device, quantity)."""
    if sigma == 0:
        return 0.0
    ss = np.random.SeedSequence([seed, sample, _device_key(device_id), QUANTITY[quantity]])
    return float(np.random.default_rng(ss).normal(0.0, sigma))


@dataclass(frozen=True)
class Perturbation:
    device: str
    dw: float
    dl: float
    dvth: float
    w: float
    l: float

    def to_dict(self) -> dict:
        return {"device": self.device, "dW": self.dw, "dL": self.dl, "dVth": self.dvth, "W": self.w, "L": self.l}


def perturbations(n: Netlist, v: VariationSpec, sample_idx: int, c: NodeConstraints) -> list[Perturbation]:
    out = []
    for card in n.devices("mosfet"):
        dw = draw(v.seed, sample_idx, card.id, "w", v.sigma_wl)
        dl = draw(v.seed, sample_idx, card.id, "l", v.sigma_wl)
        dv = draw(v.seed, sample_idx, card.id, "vth", v.sigma_vth)
        w = max(card.value("W") + dw, c.w_range[0])
        l_ = max(card.value("L") + dl, c.l_range[0])
        out.append(Perturbation(card.id, dw, dl, dv, w, l_))
    return out


def gate_node(device_id: str, gate: str) -> str:
    return f"{gate}_vth_{device_id}"


def sample_perturbed(n: Netlist, v: VariationSpec, sample_idx: int, c: NodeConstraints) -> Netlist:
    """Shift every W and L (lower-clamped at the node minimum) and split each gate with a series source."""
    return apply_perturbations(n, perturbations(n, v, sample_idx, c))


def apply_perturbations(n: Netlist, perts: Sequence[Perturbation]) -> Netlist:
    cards = list(n.cards)
    extra = []
    existing = {card.id.lower() for card in cards if card.id}
    for p in perts:
        idx = n.index_of(p.device)
        card = cards[idx]
        gate = card.nodes[1]
        src = f"Vvth_{card.id}"
        if "_vth_" in gate.lower() or src.lower() in existing:
            raise GateInsertionConflict(f"{card.id}: gate already split ({gate})")
        toks = _tokens(card.raw)
        toks[2] = gate_node(card.id, gate)
        toks = _replace_kv(toks, "W", format_value(p.w))
        toks = _replace_kv(toks, "L", format_value(p.l))
        cards[idx] = _make_card(" ".join(toks), 0)
        # V(gate) - V(new) = dvth, so the device sees its gate lowered by dvth
        extra.append(f"{src} {gate} {gate_node(card.id, gate)} DC {format_plain(p.dvth)}")
    return add_cards(n.with_cards(cards), extra)


# ---------------------------------------------------------------- study


@dataclass
class MetricStats:
    metric: str
    values: list[float]
    passes: list[bool]
    sample_mean: float
    sample_std: float
    fit_mu: float
    fit_sigma: float
    pass_rate: float
    bin_edges: list[float]
    counts: list[int]
    non_finite: int

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "values": [_json_num(x) for x in self.values],
            "passes": self.passes,
            "sample_mean": _json_num(self.sample_mean),
            "sample_std": _json_num(self.sample_std),
            "fit_mu": _json_num(self.fit_mu),
            "fit_sigma": _json_num(self.fit_sigma),
            "pass_rate": self.pass_rate,
            "histogram": {"edges": self.bin_edges, "counts": self.counts},
            "non_finite": self.non_finite,
        }


@dataclass
class VariationReport:
    spec: VariationSpec
    metrics: dict[str, MetricStats]
    perturbations: list[list[Perturbation]]
    errors: list[list[str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "variation": {"sigma_wl": self.spec.sigma_wl, "sigma_vth": self.spec.sigma_vth,
                          "samples": self.spec.samples, "seed": self.spec.seed},
            "metrics": {m: s.to_dict() for m, s in self.metrics.items()},
            "samples": [
                {"index": i, "perturbations": [p.to_dict() for p in ps], "errors": self.errors[i]}
                for i, ps in enumerate(self.perturbations)
            ],
        }


def histogram(values: Sequence[float], min_bins: int = 10) -> tuple[list[float], list[int]]:
    """Freedman-Diaconis bins with a floor of ``min_bins``."""
    x = np.asarray([v for v in values if math.isfinite(v)], dtype=float)
    if x.size == 0:
        return [], []
    fd = len(np.histogram_bin_edges(x, bins="fd")) - 1 if x.size > 1 and np.ptp(x) > 0 else 1
    counts, edges = np.histogram(x, bins=max(min_bins, fd))
    return [float(e) for e in edges], [int(c) for c in counts]


def stats_for(metric: str, values: Sequence[float], passes: Sequence[bool]) -> MetricStats:
    finite = [float(v) for v in values if math.isfinite(v)]
    # statistics works in exact arithmetic, so identical samples give a std of exactly 0
    mean = statistics.fmean(finite) if finite else math.nan
    std = statistics.stdev(finite) if len(finite) > 1 else (0.0 if finite else math.nan)
    edges, counts = histogram(values)
    return MetricStats(metric, list(values), list(passes), mean, std, mean, std,
                       sum(passes) / len(passes), edges, counts, len(values) - len(finite))


def run_variation_study(n: Netlist, targets: Sequence[SpecTarget], v: VariationSpec, harness: Harness | None = None,
                        sim: Simulator | None = None, constraints: NodeConstraints | None = None, jobs: int = 1,
                        evaluator=None, workdir: str | Path | None = None) -> VariationReport:
    """Perturb, measure and check each sample; results are folded in sample order."""
    if constraints is None:
        raise ValueError("constraints are required for the lower clamp")
    if evaluator is None:
        if sim is None or harness is None:
            raise ValueError("need an evaluator or a simulator with a harness")
        evaluator = SimulationEvaluator(harness, sim, check_regions=False)
    metrics = [t.metric for t in targets]
    workdir = Path(workdir) if workdir else None

    def one(i: int):
        perts = perturbations(n, v, i, constraints)
        pn = apply_perturbations(n, perts)
        wd = workdir / f"sample_{i:03d}" if workdir else None
        ev: Evaluation = evaluator.evaluate(pn, metrics, wd)
        flags = check_spec(list(ev.results), targets)
        return perts, ev, flags

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, range(v.samples)))
    else:
        outcomes = [one(i) for i in range(v.samples)]

    per_metric = {}
    for t in targets:
        vals, oks = [], []
        for _, ev, flags in outcomes:
            r = next(r for r in ev.results if r.metric == t.metric)
            f = next(f for f in flags if f.metric == t.metric)
            vals.append(float(r.value))
            oks.append(bool(f.passed))
        per_metric[t.metric] = stats_for(t.metric, vals, oks)
    errors = [[f"{r.metric}: {r.error}" for r in ev.results if r.error] for _, ev, _ in outcomes]
    return VariationReport(v, per_metric, [p for p, _, _ in outcomes], errors)


def _normal_pdf(x: float, mu: float, sigma: float) -> float:
    if not (sigma > 0 and math.isfinite(mu)):
        return math.nan
    return math.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def write_variation(report: VariationReport, out_dir: str | Path) -> list[Path]:
    """report.json, one CSV of per-sample values per metric, and a plot-ready histogram.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json"]
    paths[0].write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    for m, s in report.metrics.items():
        p = out / f"{m}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "value", "pass"])
            for i, (val, ok) in enumerate(zip(s.values, s.passes)):
                w.writerow([i, repr(val), int(ok)])
        paths.append(p)
    p = out / "histogram.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "bin_lo", "bin_hi", "count", "density", "fit_pdf"])
        for m, s in report.metrics.items():
            total = sum(s.counts)
            for lo, hi, c in zip(s.bin_edges[:-1], s.bin_edges[1:], s.counts):
                dens = c / (total * (hi - lo)) if total and hi > lo else math.nan
                w.writerow([m, repr(lo), repr(hi), c, repr(dens), repr(_normal_pdf((lo + hi) / 2, s.fit_mu, s.fit_sigma))])
    paths.append(p)
    return paths
