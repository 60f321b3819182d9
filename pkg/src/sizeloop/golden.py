"""Reference opamp results with their marked failures, used as golden check data.

Each row lists measured values in table units (gain dB, UGBW MHz, PM degrees,
power mW, CMRR dB, THD dB, offset mV, swing V, ICMR V) and the set of cells
printed as failing. ``iteration`` is the success iteration or None for a
failed attempt.
"""

from __future__ import annotations

from dataclasses import dataclass

from .spec import SpecTarget

COLUMNS = ("dc_gain", "ugbw", "phase_margin", "power", "cmrr", "thd", "input_offset", "output_swing", "icmr")
SCALE = {"ugbw": 1e6, "power": 1e-3, "input_offset": 1e-3}


@dataclass(frozen=True)
class GoldenRow:
    group: str
    label: str
    iteration: int | None
    values: tuple[float, ...]
    red: frozenset

    def results(self) -> dict[str, float]:
        """Measured values in SI units keyed by metric."""
        return {m: v * SCALE.get(m, 1.0) for m, v in zip(COLUMNS, self.values)}


def targets(gain=65, ugbw=10, pm=50, power=10, cmrr=100, thd=-26, offset=1, rail=1.8, tol=0.05):
    return [
        SpecTarget("dc_gain", "at_least", gain, tol),
        SpecTarget("ugbw", "at_least", ugbw * 1e6, tol),
        SpecTarget("phase_margin", "at_least", pm, tol),
        SpecTarget("power", "at_most", power * 1e-3, tol),
        SpecTarget("cmrr", "at_least", cmrr, tol),
        SpecTarget("thd", "at_most", thd, tol),
        SpecTarget("input_offset", "at_most", offset * 1e-3, tol),
        SpecTarget("output_swing", "at_least", rail, tol),
        SpecTarget("icmr", "at_least", rail, tol),
    ]


GROUP_TARGETS = {
    "180nm": targets(rail=1.8),
    "130nm": targets(rail=1.8),
    "90nm": targets(rail=1.2),
    "G1": targets(rail=1.2),
    "G2": targets(ugbw=5, pm=45, power=5, rail=1.2),
    "G3": targets(ugbw=50, pm=50, power=20, cmrr=80, rail=1.2),
}

GROUP_LOAD = {
    "180nm": (10e-12, 1e3), "130nm": (10e-12, 1e3), "90nm": (10e-12, 1e3),
    "G1": (10e-12, 1e3), "G2": (50e-12, 100e3), "G3": (10e-12, 1e3),
}


def _r(*names):
    return frozenset(names)


ROWS = (
    # technology sweep, one model, five attempts per node
    GoldenRow("180nm", "180nm iter 13", 13, (63.99, 12.59, 53.55, 9.73, 127.09, -26.04, 0.16, 1.72, 1.75), _r()),
    GoldenRow("180nm", "180nm iter 15", 15, (62.53, 50.12, 49.53, 5.10, 120.67, -27.29, 0.46, 1.71, 1.72), _r()),
    GoldenRow("180nm", "180nm fail 1", None, (28.05, 0.4, 86.02, 4.12, 100.09, -25.95, 0.09, 1.76, 1.79),
              _r("dc_gain", "ugbw")),
    GoldenRow("180nm", "180nm fail 2", None, (65.05, 10.00, 42.19, 1.7, 141.53, -25.13, 6.32, 1.42, 1.42),
              _r("phase_margin", "input_offset", "output_swing", "icmr")),
    GoldenRow("180nm", "180nm fail 3", None, (62.41, 15.01, 50.27, 0.94, 113.23, -26.21, 0.22, 1.60, 1.63),
              _r("output_swing", "icmr")),
    GoldenRow("130nm", "130nm iter 22", 22, (62.52, 10.00, 47.68, 3.90, 139.00, -24.76, 0.03, 1.72, 1.75), _r()),
    GoldenRow("130nm", "130nm fail 1", None, (74.06, 39.81, 68.86, 14.66, 132.13, -24.61, 0.07, 1.76, 1.79),
              _r("power", "thd")),
    GoldenRow("130nm", "130nm fail 2", None, (65.67, 39.81, 36.19, 2.96, 105.67, -29.76, 0.13, 1.34, 1.37),
              _r("phase_margin", "output_swing", "icmr")),
    GoldenRow("130nm", "130nm fail 3", None, (73.80, 100.00, 63.89, 10.46, 105.84, -18.25, 0.008, 1.60, 1.63),
              _r("thd", "output_swing", "icmr")),
    GoldenRow("130nm", "130nm fail 4", None, (34.06, 39.81, 35.60, 12.33, 50.72, -29.31, 5.43, 1.63, 1.21),
              _r("dc_gain", "phase_margin", "power", "cmrr", "input_offset", "output_swing", "icmr")),
    GoldenRow("90nm", "90nm fail 1", None, (38.64, 79.43, 30.61, 7.91, 79.09, -40.28, 1.96, 1.06, 1.10),
              _r("dc_gain", "phase_margin", "cmrr", "input_offset", "output_swing", "icmr")),
    GoldenRow("90nm", "90nm fail 2", None, (82.07, 125.89, 31.38, 2.70, 137.86, -2.94, 0.01, 1.17, 1.19),
              _r("phase_margin", "thd")),
    GoldenRow("90nm", "90nm fail 3", None, (68.10, 63.10, 55.29, 2.99, 134.84, -10.47, 0.03, 1.15, 1.18),
              _r("thd", "output_swing", "icmr")),
    GoldenRow("90nm", "90nm fail 4", None, (78.57, 251.19, 76.79, 10.8, 126.52, -9.55, 0.02, 1.15, 1.17),
              _r("power", "thd")),
    GoldenRow("90nm", "90nm fail 5", None, (55.02, 31.62, 63.49, 4.42, 102.12, -17.55, 0.26, 1.17, 1.19),
              _r("dc_gain", "thd")),
    # target groups on the 90 nm node
    GoldenRow("G1", "G1-1", 16, (69.74, 25.12, 70.74, 6.08, 102.36, -36.35, 0.03, 1.15, 1.19), _r()),
    GoldenRow("G1", "G1-2", 20, (69.14, 19.95, 77.01, 6.11, 112.00, -36.82, 0.02, 1.16, 1.19), _r()),
    GoldenRow("G1", "G1-3", None, (59.21, 79.43, 76.57, 0.61, 23.17, -27.95, 0.52, 0.95, 1.02),
              _r("dc_gain", "cmrr", "output_swing", "icmr")),
    GoldenRow("G1", "G1-4", None, (53.60, 39.81, 79.82, 4.66, 36.28, -25.52, 0.18, 1.15, 1.19),
              _r("dc_gain", "cmrr")),
    GoldenRow("G1", "G1-5", None, (34.09, 10.00, 61.97, 1.74, 70.17, -42.05, 11.34, 0.85, 0.97),
              _r("dc_gain", "cmrr", "input_offset", "output_swing", "icmr")),
    GoldenRow("G2", "G2-1", 20, (65.83, 12.59, 61.26, 1.50, 115.15, -25.77, 0.01, 1.19, 1.19), _r()),
    GoldenRow("G2", "G2-2", None, (66.36, 1.99, 48.06, 0.40, 107.62, -31.71, 0.06, 1.04, 1.15),
              _r("ugbw", "output_swing")),
    GoldenRow("G2", "G2-3", None, (47.04, 2.51, 36.19, 0.40, 84.85, -26.03, 0.48, 1.18, 1.19),
              _r("dc_gain", "ugbw", "phase_margin", "cmrr")),
    GoldenRow("G2", "G2-4", None, (53.87, 5.01, 42.23, 1.52, 98.18, -25.62, 0.12, 1.19, 1.19),
              _r("dc_gain", "phase_margin")),
    GoldenRow("G2", "G2-5", None, (57.23, 6.31, 25.68, 0.50, 46.76, -23.41, 0.14, 1.19, 1.19),
              _r("dc_gain", "phase_margin", "cmrr", "thd")),
    GoldenRow("G3", "G3-1", 16, (64.51, 125.89, 68.75, 6.58, 103.68, -32.60, 0.24, 1.14, 1.17), _r()),
    GoldenRow("G3", "G3-2", None, (66.67, 39.81, 37.09, 4.23, 103.50, -21.05, 0.69, 1.13, 1.18),
              _r("ugbw", "phase_margin", "thd", "output_swing")),
    GoldenRow("G3", "G3-3", None, (75.34, 125.89, 33.74, 13.72, 126.24, -20.15, 0.06, 1.17, 1.19),
              _r("phase_margin", "thd")),
    GoldenRow("G3", "G3-4", None, (67.68, 63.09, 51.55, 3.69, 120.84, -18.39, 0.09, 1.11, 1.14),
              _r("thd", "output_swing")),
    GoldenRow("G3", "G3-5", None, (66.67, 37.08, 39.81, 4, 103.51, -21.08, 0.07, 1.14, 1.18),
              _r("ugbw", "phase_margin", "thd")),
)

# Sizing and bias of the G1-2 solution (W/L in micrometres, bias in volts).
G12_SIZES = {
    ("M1", "M2"): (32, 0.85), ("M3", "M4"): (72, 0.85), ("M5",): (3.5, 0.50), ("M6",): (10, 0.80),
    ("M7", "M8"): (6, 0.18), ("M9", "M10"): (6, 0.18), ("M11", "M12"): (3.5, 1.20), ("M13", "M14"): (2, 1.20),
    ("M15", "M17"): (3, 0.22), ("M16", "M18"): (10, 1.4), ("M19",): (280, 0.38), ("M20",): (140, 0.38),
}
G12_BIAS = {"Vbias1": 0.65, "Vbias2": 0.80, "Vbias3": 0.65, "Vbias4": 0.80, "Vbias5": 1.07, "Vbias6": 0.075}


def mismatches(row: GoldenRow, flags) -> list[str]:
    """Cells whose computed pass/fail differs from the printed marking."""
    out = []
    for f in flags:
        expected_fail = f.metric in row.red
        if expected_fail == f.passed:
            out.append(f"{row.label}: {f.metric}={f.measured:g} printed {'fail' if expected_fail else 'pass'}, "
                       f"computed {'pass' if f.passed else 'fail'} (bound {f.bound:g})")
    return out
