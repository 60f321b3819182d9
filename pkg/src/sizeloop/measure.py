"""Measurement configurations, run planning and metric extraction."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .netlist import (
    Netlist,
    NetlistError,
    _tokens,
    add_cards,
    find_source,
    parse_netlist,
    remove_cards,
    replace_card,
)
from .simulator import AnalysisCard, RawData, Simulator, SimulatorError
from .units import format_plain, format_value, parse_value

METRICS = {
    "dc_gain": "dB",
    "bandwidth": "Hz",
    "ugbw": "Hz",
    "phase_margin": "degrees",
    "cmrr": "dB",
    "thd": "dB",
    "input_offset": "V",
    "icmr": "V",
    "output_swing": "V",
    "power": "W",
    "delay": "s",
    "osc_frequency": "Hz",
}

CONFIG_OF = {
    "dc_gain": "amplifier_open_loop",
    "bandwidth": "amplifier_open_loop",
    "ugbw": "amplifier_open_loop",
    "phase_margin": "amplifier_open_loop",
    "cmrr": "cmrr_harness",
    "input_offset": "unity_gain",
    "icmr": "unity_gain",
    "thd": "unity_gain",
    "output_swing": "open_loop_swing",
    "power": "original",
    "delay": "original",
    "osc_frequency": "original",
}

ANALYSIS_OF = {
    "dc_gain": "ac",
    "bandwidth": "ac",
    "ugbw": "ac",
    "phase_margin": "ac",
    "cmrr": "ac",
    "input_offset": "dc",
    "icmr": "dc",
    "thd": "tran",
    "output_swing": "dc",
    "power": "tran",
    "delay": "tran",
    "osc_frequency": "tran",
}

CONFIG_KINDS = ("amplifier_open_loop", "unity_gain", "open_loop_swing", "cmrr_harness", "original")


class MeasureError(ValueError):
    pass


class FrequencyOutOfRange(MeasureError):
    pass


class NoCrossing(MeasureError):
    pass


class NoLinearRegion(MeasureError):
    pass


class InsufficientPeriods(MeasureError):
    pass


class ClippedBeyondRange(MeasureError):
    pass


class NotOscillating(MeasureError):
    pass


class MissingNodeRole(MeasureError):
    def __init__(self, role: str):
        super().__init__(f"netlist has no node mapped to role {role!r}")
        self.role = role


class UnknownMetric(MeasureError):
    pass


@dataclass(frozen=True)
class Harness:
    """Measurement parameters shared by every configuration."""

    vsup: float
    cl: float | None = 10e-12
    rl: float | None = 1e3
    vcm: float | None = None
    ac_points: int = 20
    f_start: float = 1.0
    f_stop: float = 10e9
    ref_freq: float = 10e3
    dc_step: float = 1e-3
    swing_points: int = 4000
    icmr_tol: float = 0.01
    swing_frac: float = 0.10
    thd_f0: float = 1e3
    thd_periods: int = 10
    thd_settle: int = 2
    thd_samples: int = 4096
    thd_harmonics: int = 9
    thd_amplitude: float | None = None
    cmrr_points: int = 11
    tran_step: float = 1e-9
    tran_stop: float = 1e-6
    fb_inductance: float = 1e9
    fb_capacitance: float = 1.0

    @property
    def mid(self) -> float:
        return self.vsup / 2 if self.vcm is None else self.vcm

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "Harness":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class MeasurementConfig:
    kind: str
    harness: Harness

    def __post_init__(self):
        if self.kind not in CONFIG_KINDS:
            raise MeasureError(f"unknown configuration {self.kind!r}")


@dataclass(frozen=True)
class MetricResult:
    metric: str
    value: float
    aux: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and not math.isnan(self.value)

    def to_dict(self) -> dict:
        return {"metric": self.metric, "unit": METRICS.get(self.metric, ""), "value": _json_num(self.value),
                "aux": {k: _json_num(v) if isinstance(v, float) else v for k, v in self.aux.items()},
                "error": self.error}


def _json_num(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


# ---------------------------------------------------------------- configurations

_HARNESS_ID = re.compile(r"^[a-z]h_", re.IGNORECASE)


def _need(n: Netlist, role: str) -> str:
    node = n.role(role)
    if not node:
        raise MissingNodeRole(role)
    return node


def _touching(n: Netlist, nodes: set[str]) -> list[str]:
    out = []
    for c in n.cards:
        if c.kind in ("vsource", "isource", "resistor", "capacitor") or (c.passthrough and c.id):
            if any(x.lower() in nodes for x in c.nodes):
                out.append(c.id)
    return out


def input_source(n: Netlist, role: str = "vin+"):
    node = n.role(role)
    if not node:
        return None
    for c in n.cards:
        if c.kind == "vsource" and c.nodes and c.nodes[0].lower() == node.lower():
            return c
    return None


def supply_source(n: Netlist):
    node = n.role("vdd")
    for c in n.cards:
        if c.kind == "vsource" and node and c.nodes[0].lower() == node.lower():
            return c
    for c in n.cards:
        if c.kind == "vsource" and c.id.lower() in ("vdd", "vsup", "vcc"):
            return c
    return None


def _strip_harness(n: Netlist) -> Netlist:
    return remove_cards(n, [c.id for c in n.cards if c.id and _HARNESS_ID.match(c.id)])


def apply_config(n: Netlist, cfg: MeasurementConfig, stimulus: str | None = None) -> Netlist:
    """Rewire a copy of ``n`` into a measurement configuration.

    ``stimulus`` optionally replaces the value field of the driven input source
    (e.g. a SIN(...) for the transient unity-gain run).
    """
    if cfg.kind == "original":
        return n
    h = cfg.harness
    out = _need(n, "vout")
    vinp = _need(n, "vin+")
    vinn = n.role("vin-")
    base = _strip_harness(n)
    mid = format_plain(h.mid)
    load = []
    if h.rl:
        load += [f"Rh_load {out} h_mid {format_value(h.rl)}", f"Vh_mid h_mid 0 DC {format_plain(h.vsup / 2)}"]
    if h.cl:
        load.append(f"Ch_load {out} 0 {format_value(h.cl)}")
    if cfg.kind in ("amplifier_open_loop", "cmrr_harness") and not vinn:
        # single-ended amplifier: keep the user's bias source and add the AC drive
        src = input_source(base)
        if src is None:
            return add_cards(base, [f"Vh_inp {vinp} 0 DC {mid} AC 1"] + load)
        raw = " ".join(_tokens(src.raw))
        if " ac " not in f" {raw.lower()} ":
            raw += " AC 1"
        return add_cards(replace_card(base, src.id, raw), load)

    if not vinn:
        raise MissingNodeRole("vin-")
    base = remove_cards(base, _touching(base, {vinp.lower(), vinn.lower()}))
    if cfg.kind in ("amplifier_open_loop", "cmrr_harness"):
        cards = [
            f"Vh_inp {vinp} 0 DC {mid} AC 1",
            f"Lh_fb {out} {vinn} {format_value(h.fb_inductance)}",
            f"Ch_fb {vinn} h_ref {format_value(h.fb_capacitance)}",
            "Vh_ref h_ref 0 DC 0",
        ]
    elif cfg.kind == "unity_gain":
        drive = stimulus or f"DC {mid}"
        cards = [f"Vh_inp {vinp} 0 {drive}", f"Vh_fb {out} {vinn} DC 0"]
    else:  # open_loop_swing
        half = format_plain(h.vsup / 2)
        cards = [f"Vh_inp {vinp} 0 DC {half}", f"Vh_inn {vinn} 0 DC {half}"]
    return add_cards(base, cards + load)


# ---------------------------------------------------------------- helpers


def _logf_interp(f: np.ndarray, y: np.ndarray, f0: float) -> float:
    if not (f[0] <= f0 <= f[-1]):
        raise FrequencyOutOfRange(f"{f0:g} Hz outside sweep [{f[0]:g}, {f[-1]:g}] Hz")
    return float(np.interp(math.log10(f0), np.log10(f), y))


def _crossing_down(f: np.ndarray, m: np.ndarray, level: float) -> float | None:
    """First frequency where m falls from >= level to < level, log-linear."""
    for i in range(1, len(m)):
        if m[i - 1] >= level > m[i]:
            lf0, lf1 = math.log10(f[i - 1]), math.log10(f[i])
            t = (m[i - 1] - level) / (m[i - 1] - m[i])
            return float(10 ** (lf0 + t * (lf1 - lf0)))
    return None


def bode(raw: RawData, out_node: str, in_node: str | None = None):
    f = np.real(raw.sweep)
    h = raw.vector(out_node)
    if in_node:
        h = h / raw.vector(in_node)
    mag = 20 * np.log10(np.maximum(np.abs(h), 1e-300))
    ph = np.degrees(np.unwrap(np.angle(h)))
    ph = ph - 180.0 * round(ph[0] / 180.0)
    return f, mag, ph


# ---------------------------------------------------------------- extractors


def extract_dc_gain(raw: RawData, out_node: str = "out", in_node: str | None = None,
                    ref_freq: float = 10e3) -> MetricResult:
    f, mag, _ = bode(raw, out_node, in_node)
    g = _logf_interp(f, mag, ref_freq)
    return MetricResult("dc_gain", g, {"ref_freq": ref_freq})


def extract_bandwidth(raw: RawData, out_node: str = "out", in_node: str | None = None) -> MetricResult:
    f, mag, _ = bode(raw, out_node, in_node)
    ref = float(mag[0])
    fc = _crossing_down(f, mag, ref - 3.0)
    if fc is None:
        raise NoCrossing("gain never falls 3 dB below its low-frequency value")
    return MetricResult("bandwidth", fc, {"ref_gain_db": ref, "ref_freq": float(f[0])})


def extract_ugbw(raw: RawData, out_node: str = "out", in_node: str | None = None) -> MetricResult:
    f, mag, _ = bode(raw, out_node, in_node)
    if abs(mag[0]) <= 1e-9:
        return MetricResult("ugbw", float(f[0]), {"degenerate": True})
    fu = _crossing_down(f, mag, 0.0)
    if fu is None:
        raise NoCrossing("magnitude never crosses 0 dB")
    return MetricResult("ugbw", fu, {"degenerate": False})


def extract_phase_margin(raw: RawData, out_node: str = "out", in_node: str | None = None) -> MetricResult:
    f, mag, ph = bode(raw, out_node, in_node)
    fu = extract_ugbw(raw, out_node, in_node).value
    phi = float(np.interp(math.log10(fu), np.log10(f), ph))
    return MetricResult("phase_margin", 180.0 + phi, {"ugbw_freq": fu, "phase_at_ugbw": phi})


def _gain_at(raw: RawData, vec: str, f0: float) -> complex:
    f = np.real(raw.sweep)
    h = raw.vector(vec)
    lf = np.log10(f)
    x = math.log10(f0)
    if not (lf[0] <= x <= lf[-1]):
        raise FrequencyOutOfRange(f"{f0:g} Hz outside sweep")
    return complex(np.interp(x, lf, h.real), np.interp(x, lf, h.imag))


def extract_cmrr(grid: Sequence[tuple], out_node: str = "out", ref_freq: float = 10e3) -> MetricResult:
    """Minimum CMRR over a common-mode grid.

    Each grid entry is ``(vcm, dm_raw, cm_raw)`` or
    ``(vcm, dm_raw, cm_raw, dm_vector, cm_vector)``.
    """
    if len(grid) < 3:
        raise MeasureError("cmrr needs at least 3 common-mode points")
    curve = []
    flagged = False
    for item in grid:
        vcm, dm, cm = item[:3]
        dv = item[3] if len(item) > 3 else out_node
        cv = item[4] if len(item) > 4 else out_node
        adm = abs(_gain_at(dm, dv, ref_freq))
        acm = abs(_gain_at(cm, cv, ref_freq))
        if acm == 0:
            flagged = True
            curve.append((float(vcm), math.inf))
        else:
            curve.append((float(vcm), 20 * math.log10(adm / acm) if adm > 0 else -math.inf))
    worst = min(v for _, v in curve)
    return MetricResult("cmrr", worst, {"curve": curve, "zero_common_mode_gain": flagged,
                                        "method": "two-run ratio"})


def extract_input_offset(raw: RawData, vsup: float, out_node: str = "out") -> MetricResult:
    vout = np.real(raw.vector(out_node))
    if raw.has_sweep and len(vout) > 1:
        x = np.real(raw.sweep)
        v = float(np.interp(vsup / 2, x, vout))
    else:
        v = float(vout[0])
    return MetricResult("input_offset", abs(v - vsup / 2), {"vout": v, "signed": v - vsup / 2})


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    out, start = [], None
    for i, m in enumerate(mask):
        if m and start is None:
            start = i
        elif not m and start is not None:
            out.append((start, i - 1))
            start = None
    if start is not None:
        out.append((start, len(mask) - 1))
    return out


def extract_icmr(raw: RawData, out_node: str = "out", tol: float = 0.01) -> MetricResult:
    vin = np.real(raw.sweep)
    vout = np.real(raw.vector(out_node))
    slope = np.gradient(vout, vin)
    mask = np.abs(slope - 1.0) <= tol
    best = None
    for a, b in _runs(mask):
        length = vin[b] - vin[a]
        if b > a and (best is None or length > best[0]):
            best = (length, a, b)
    if best is None:
        raise NoLinearRegion("closed-loop transfer never tracks its input")
    length, a, b = best
    return MetricResult("icmr", float(length), {"low": float(vin[a]), "high": float(vin[b]), "tol": tol})


def extract_output_swing(raw: RawData, out_node: str = "out", frac: float = 0.10) -> MetricResult:
    vin = np.real(raw.sweep)
    vout = np.real(raw.vector(out_node))
    slope = np.abs(np.gradient(vout, vin))
    peak = float(slope.max()) if len(slope) else 0.0
    if not peak > 0:
        raise NoLinearRegion("open-loop transfer curve is flat")
    k = int(np.argmax(slope))
    mask = slope >= frac * peak
    a = b = k
    while a > 0 and mask[a - 1]:
        a -= 1
    while b < len(mask) - 1 and mask[b + 1]:
        b += 1
    seg = vout[a:b + 1]
    lo, hi = float(seg.min()), float(seg.max())
    return MetricResult("output_swing", hi - lo, {"vout_low": lo, "vout_high": hi, "peak_gain": peak,
                                                  "vin_low": float(vin[a]), "vin_high": float(vin[b])})


def uniform_window(t: np.ndarray, y: np.ndarray, f0: float, periods: int, samples: int):
    """Resample the last ``periods`` whole periods onto a uniform grid."""
    period = 1.0 / f0
    t_end = float(t[-1])
    t_start = t_end - periods * period
    if t_start < t[0] - 1e-15 * max(1.0, abs(t_end)):
        raise InsufficientPeriods(f"need {periods} periods of {period:g} s, have {t_end - t[0]:g} s")
    grid = t_start + np.arange(periods * samples) * (period / samples)
    return grid, np.interp(grid, t, y)


def thd_from_samples(y: np.ndarray, periods: int, n_harmonics: int = 9, floor_db: float = -120.0) -> tuple[float, list]:
    spec = np.abs(np.fft.rfft(y)) / len(y)
    h1 = spec[periods]
    if h1 == 0:
        raise MeasureError("no fundamental component")
    harm = [float(spec[k * periods]) for k in range(2, n_harmonics + 1) if k * periods < len(spec)]
    ratio = math.sqrt(sum(h * h for h in harm)) / h1
    db = 20 * math.log10(ratio) if ratio > 0 else -math.inf
    return max(db, floor_db), [float(h1)] + harm


def extract_thd(raw: RawData, f0: float, n_harmonics: int = 9, out_node: str = "out",
                periods: int = 10, samples: int = 4096, floor_db: float = -120.0) -> MetricResult:
    t = np.real(raw.sweep)
    y = np.real(raw.vector(out_node))
    if not np.all(np.isfinite(y)):
        raise ClippedBeyondRange("non-finite samples in transient output")
    _, yw = uniform_window(t, y, f0, periods, samples)
    db, mags = thd_from_samples(yw - yw.mean(), periods, n_harmonics, floor_db)
    return MetricResult("thd", db, {"f0": f0, "harmonics": mags, "floor_db": floor_db,
                                    "at_floor": db <= floor_db})


def _time_mean(t: np.ndarray, y: np.ndarray) -> float:
    if len(t) < 2 or t[-1] == t[0]:
        return float(y.mean()) if len(y) else 0.0
    return float(np.trapezoid(y, t) / (t[-1] - t[0]))


def extract_power(raw: RawData, vsup: float, supply: str = "vdd") -> MetricResult:
    t = np.real(raw.sweep)
    i = np.real(raw.vector(f"i({supply})"))
    keep = t >= t[0] + 0.2 * (t[-1] - t[0])
    p = _time_mean(t[keep], vsup * np.abs(i[keep]))
    return MetricResult("power", p, {"supply": supply, "window": [float(t[keep][0]), float(t[-1])]})


def _crossings(t: np.ndarray, y: np.ndarray, level: float) -> list[tuple[float, int]]:
    """All crossings of ``level``: (time, +1 rising / -1 falling), linear interpolation."""
    out = []
    s = y - level
    for k in range(1, len(s)):
        a, b = s[k - 1], s[k]
        if a < 0 <= b or a >= 0 > b:
            if b == a:
                tc = t[k]
            else:
                tc = t[k - 1] + (t[k] - t[k - 1]) * (-a) / (b - a)
            out.append((float(tc), 1 if b > a else -1))
    return out


def extract_delay(raw: RawData, in_node: str, out_node: str, vsup: float) -> MetricResult:
    t = np.real(raw.sweep)
    vin = np.real(raw.vector(in_node))
    vout = np.real(raw.vector(out_node))
    level = vsup / 2
    cin = _crossings(t, vin, level)
    cout = _crossings(t, vout, level)
    lh, hl = [], []
    j = 0
    for k, (ti, _) in enumerate(cin):
        t_next = cin[k + 1][0] if k + 1 < len(cin) else math.inf
        while j < len(cout) and cout[j][0] < ti:
            j += 1
        if j < len(cout) and cout[j][0] < t_next:
            d = cout[j][0] - ti
            (lh if cout[j][1] > 0 else hl).append(d)
            j += 1
    if not lh and not hl:
        raise NoCrossing("no output transition follows an input transition")
    tplh = float(np.mean(lh)) if lh else math.nan
    tphl = float(np.mean(hl)) if hl else math.nan
    both = [x for x in (tplh, tphl) if not math.isnan(x)]
    return MetricResult("delay", float(np.mean(both)), {"tplh": tplh, "tphl": tphl,
                                                       "n_lh": len(lh), "n_hl": len(hl)})


def extract_osc_frequency(raw: RawData, vsup: float, out_node: str = "out", min_crossings: int = 5) -> MetricResult:
    t = np.real(raw.sweep)
    y = np.real(raw.vector(out_node))
    keep = t >= t[0] + 0.2 * (t[-1] - t[0])
    t, y = t[keep], y[keep]
    if len(y) < 2 or (y.max() - y.min()) < 0.01 * vsup:
        raise NotOscillating("output amplitude below 1% of supply")
    rising = [tc for tc, d in _crossings(t, y, vsup / 2) if d > 0]
    if len(rising) < min_crossings:
        raise NotOscillating(f"only {len(rising)} rising crossings")
    f = (len(rising) - 1) / (rising[-1] - rising[0])
    return MetricResult("osc_frequency", f, {"crossings": len(rising), "amplitude": float(y.max() - y.min())})


# ---------------------------------------------------------------- replication (CMRR grid in one deck)

_NODE_COUNT = {"m": 4, "v": 2, "i": 2, "r": 2, "c": 2, "l": 2, "d": 2, "e": 4, "g": 4}
_GROUND = {"0", "gnd"}


def replicate(n: Netlist, tag: str) -> list[str]:
    """Device cards of ``n`` with every node and id suffixed by ``_tag``."""
    lines = []
    for c in n.cards:
        if not c.id:
            continue
        letter = c.id[0].lower()
        if letter not in _NODE_COUNT:
            raise NetlistError(f"cannot replicate card {c.id!r}")
        toks = _tokens(c.raw)
        k = _NODE_COUNT[letter]
        nodes = [x if x.lower() in _GROUND else f"{x}_{tag}" for x in toks[1:1 + k]]
        lines.append(" ".join([f"{toks[0]}_{tag}"] + nodes + toks[1 + k:]))
    return lines


def _shared_cards(n: Netlist) -> list[str]:
    return [c.raw for c in n.cards if c.kind in ("model_directive", "include_directive", "option")]


# ---------------------------------------------------------------- suite


def plan(metrics: Sequence[str]) -> list[tuple[str, str]]:
    """Unique (configuration, analysis) pairs needed for ``metrics``, dependencies included."""
    need: list[tuple[str, str]] = []

    def add(key):
        if key not in need:
            need.append(key)

    deps = {
        "cmrr": [("unity_gain", "dc")],
        "output_swing": [("amplifier_open_loop", "ac"), ("unity_gain", "dc")],
        "thd": [("amplifier_open_loop", "ac"), ("unity_gain", "dc"), ("open_loop_swing", "dc")],
    }
    for m in metrics:
        if m not in METRICS:
            raise UnknownMetric(f"unknown metric {m!r}; valid: {', '.join(METRICS)}")
        for d in deps.get(m, []):
            add(d)
        add((CONFIG_OF[m], ANALYSIS_OF[m]))
    order = ["amplifier_open_loop", "unity_gain", "open_loop_swing", "cmrr_harness", "original"]
    return sorted(need, key=lambda k: (order.index(k[0]), k[1]))


def _user_tran(n: Netlist, h: Harness) -> AnalysisCard:
    for c in n.cards:
        if c.kind == "analysis_directive":
            toks = _tokens(c.raw)
            if toks[0].lower() == ".tran" and len(toks) >= 3:
                step, stop = parse_value(toks[1]), parse_value(toks[2])
                start = parse_value(toks[3]) if len(toks) > 3 else 0.0
                mx = parse_value(toks[4]) if len(toks) > 4 else None
                return AnalysisCard.transient(step, stop, start, mx)
    return AnalysisCard.transient(h.tran_step, h.tran_stop)


class Measurer:
    """Lazily runs and caches the simulations behind a set of metrics."""

    def __init__(self, n: Netlist, harness: Harness, sim: Simulator, workdir: str | Path | None = None):
        self.n = n
        self.h = harness
        self.sim = sim
        self.workdir = Path(workdir) if workdir else None
        self.raws: dict[str, object] = {}
        self.errors: dict[str, Exception] = {}
        self.order: list[str] = []

    @property
    def out(self) -> str:
        return _need(self.n, "vout")

    def _ws(self, name: str):
        return None if self.workdir is None else self.workdir / name

    def run(self, name: str, fn: Callable[[], object]):
        if name in self.errors:
            raise self.errors[name]
        if name not in self.raws:
            try:
                self.order.append(name)
                self.raws[name] = fn()
            except (SimulatorError, MeasureError, NetlistError, KeyError) as e:
                self.errors[name] = e
                raise
        return self.raws[name]

    def _sim(self, n: Netlist, a: AnalysisCard, probes, name: str) -> RawData:
        return self.sim.simulate(n, a, probes, self._ws(name))

    # individual runs -------------------------------------------------
    def ac(self) -> RawData:
        def go():
            n = apply_config(self.n, MeasurementConfig("amplifier_open_loop", self.h))
            a = AnalysisCard.ac_sweep(self.h.ac_points, self.h.f_start, self.h.f_stop)
            return self._sim(n, a, [f"v({self.out})"], "open_loop_ac")
        return self.run("open_loop_ac", go)

    def unity_dc(self) -> RawData:
        def go():
            n = apply_config(self.n, MeasurementConfig("unity_gain", self.h))
            a = AnalysisCard.dc_sweep("Vh_inp", 0.0, self.h.vsup, self.h.dc_step)
            return self._sim(n, a, [f"v({self.out})"], "unity_dc")
        return self.run("unity_dc", go)

    def swing_dc(self) -> RawData:
        def go():
            center, half = self.h.vsup / 2, self.h.vsup / 2
            try:
                center += extract_input_offset(self.unity_dc(), self.h.vsup, self.out).aux["signed"]
            except (SimulatorError, MeasureError, NetlistError, KeyError):
                pass
            try:
                a0 = 10 ** (float(bode(self.ac(), self.out)[1][0]) / 20)
                half = min(max(2 * self.h.vsup / max(a0, 1e-9), 1e-3), self.h.vsup / 2)
            except (SimulatorError, MeasureError, NetlistError, KeyError):
                pass
            lo, hi = max(0.0, center - half), min(self.h.vsup, center + half)
            if hi - lo < 1e-3:
                lo, hi = max(0.0, hi - 1e-3), min(self.h.vsup, lo + 1e-3)
            step = (hi - lo) / self.h.swing_points
            n = apply_config(self.n, MeasurementConfig("open_loop_swing", self.h))
            a = AnalysisCard.dc_sweep("Vh_inn", lo, hi, step)
            return self._sim(n, a, [f"v({self.out})"], "open_loop_swing_dc")
        return self.run("open_loop_swing_dc", go)

    def thd_amplitude(self) -> float:
        if self.h.thd_amplitude is not None:
            return self.h.thd_amplitude
        try:
            sw = extract_output_swing(self.swing_dc(), self.out, self.h.swing_frac)
            return 0.5 * sw.value
        except (SimulatorError, MeasureError, NetlistError, KeyError):
            return 0.45 * self.h.vsup

    def unity_tran(self) -> RawData:
        def go():
            h = self.h
            amp = self.thd_amplitude()
            mid = format_plain(h.mid)
            stim = f"DC {mid} SIN({mid} {format_plain(round(amp, 9))} {format_plain(h.thd_f0)})"
            n = apply_config(self.n, MeasurementConfig("unity_gain", h), stimulus=stim)
            period = 1.0 / h.thd_f0
            step = period / h.thd_samples
            a = AnalysisCard.transient(step, (h.thd_settle + h.thd_periods) * period, 0.0, step)
            return self._sim(n, a, [f"v({self.out})"], "unity_tran")
        return self.run("unity_tran", go)

    def original_tran(self) -> RawData:
        def go():
            probes = []
            out = self.n.role("vout")
            if out:
                probes.append(f"v({out})")
            vin = self.n.role("vin+")
            if vin:
                probes.append(f"v({vin})")
            sup = supply_source(self.n)
            if sup is not None:
                probes.append(f"i({sup.id})")
            return self._sim(self.n, _user_tran(self.n, self.h), probes, "original_tran")
        return self.run("original_tran", go)

    def cmrr_grid(self):
        def go():
            try:
                icmr = extract_icmr(self.unity_dc(), self.out, self.h.icmr_tol)
                lo, hi = icmr.aux["low"], icmr.aux["high"]
                source = "icmr"
            except (SimulatorError, MeasureError, NetlistError, KeyError):
                lo, hi = 0.1 * self.h.vsup, 0.9 * self.h.vsup
                source = "fallback"
            if hi - lo < 1e-6:
                lo, hi = 0.1 * self.h.vsup, 0.9 * self.h.vsup
                source = "fallback"
            vcms = np.linspace(lo, hi, self.h.cmrr_points)
            lines = [f"cmrr grid for {self.n.title}"] + _shared_cards(self.n)
            for k, vcm in enumerate(vcms):
                h = replace(self.h, vcm=float(vcm))
                dm = apply_config(self.n, MeasurementConfig("cmrr_harness", h))
                cm = dm
                if self.n.role("vin-"):
                    cm = replace_card(dm, "Vh_ref", "Vh_ref h_ref 0 DC 0 AC 1")
                lines += replicate(dm, f"d{k}") + replicate(cm, f"c{k}")
            deck = parse_netlist("\n".join(lines) + "\n", base_dir=self.n.base_dir)
            a = AnalysisCard.ac_sweep(self.h.ac_points, self.h.f_start, self.h.f_stop)
            probes = []
            for k in range(len(vcms)):
                probes += [f"v({self.out}_d{k})", f"v({self.out}_c{k})"]
            raw = self._sim(deck, a, probes, "cmrr_ac")
            grid = [(float(v), raw, raw, f"v({self.out}_d{k})", f"v({self.out}_c{k})") for k, v in enumerate(vcms)]
            return grid, source
        return self.run("cmrr_ac", go)

    # metric dispatch ---------------------------------------------------
    def metric(self, m: str) -> MetricResult:
        h = self.h
        out = self.n.role("vout") if m in ("power", "delay", "osc_frequency") else self.out
        if m == "dc_gain":
            return extract_dc_gain(self.ac(), out, ref_freq=h.ref_freq)
        if m == "bandwidth":
            return extract_bandwidth(self.ac(), out)
        if m == "ugbw":
            return extract_ugbw(self.ac(), out)
        if m == "phase_margin":
            return extract_phase_margin(self.ac(), out)
        if m == "input_offset":
            return extract_input_offset(self.unity_dc(), h.vsup, out)
        if m == "icmr":
            return extract_icmr(self.unity_dc(), out, h.icmr_tol)
        if m == "output_swing":
            return extract_output_swing(self.swing_dc(), out, h.swing_frac)
        if m == "thd":
            r = extract_thd(self.unity_tran(), h.thd_f0, h.thd_harmonics, out, h.thd_periods, h.thd_samples)
            r.aux["amplitude"] = self.thd_amplitude()
            return r
        if m == "cmrr":
            grid, source = self.cmrr_grid()
            r = extract_cmrr(grid, out, h.ref_freq)
            r.aux["grid_source"] = source
            return r
        if m == "power":
            sup = supply_source(self.n)
            if sup is None:
                raise MissingNodeRole("vdd")
            return extract_power(self.original_tran(), h.vsup, sup.id)
        if m == "delay":
            vin = _need(self.n, "vin+")
            return extract_delay(self.original_tran(), vin, _need(self.n, "vout"), h.vsup)
        if m == "osc_frequency":
            return extract_osc_frequency(self.original_tran(), h.vsup, _need(self.n, "vout"))
        raise UnknownMetric(m)


def measure_suite(n: Netlist, metrics: Sequence[str], harness: Harness, sim: Simulator,
                  workdir: str | Path | None = None, measurer: Measurer | None = None) -> list[MetricResult]:
    """One MetricResult per requested metric; failures carry ``error`` and a NaN value."""
    plan(metrics)  # validates names
    me = measurer or Measurer(n, harness, sim, workdir)
    results = []
    for m in metrics:
        try:
            results.append(me.metric(m))
        except (SimulatorError, MeasureError, NetlistError, KeyError) as e:
            results.append(MetricResult(m, math.nan, {}, f"{type(e).__name__}: {e}"))
    return results
