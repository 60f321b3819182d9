"""SPICE engineering-notation values."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

SUFFIXES = {
    "t": 1e12,
    "g": 1e9,
    "meg": 1e6,
    "k": 1e3,
    "mil": 25.4e-6,
    "m": 1e-3,
    "u": 1e-6,
    "n": 1e-9,
    "p": 1e-12,
    "f": 1e-15,
}

# printing order; "mil" is parse-only
_PRINT = [("t", 12), ("g", 9), ("meg", 6), ("k", 3), ("", 0), ("m", -3), ("u", -6), ("n", -9), ("p", -12), ("f", -15)]

_NUMBER = re.compile(
    r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(meg|mil|[tgkmunpf])?([a-z]*)\s*$",
    re.IGNORECASE,
)

UNITS = ("m", "V", "A", "Ohm", "F", "s", "Hz", "dimensionless")


class UnitError(ValueError):
    pass


def parse_value(text: str) -> float:
    """Parse a SPICE number such as ``180n``, ``1.5MEG`` or ``10pF``.

    Suffixes are case-insensitive and ``m`` is milli. Trailing unit letters
    after the scale suffix are ignored, as SPICE does.
    """
    if isinstance(text, (int, float)):
        return float(text)
    m = _NUMBER.match(text)
    if not m:
        raise UnitError(f"not a SPICE number: {text!r}")
    mag = float(m.group(1))
    suffix = (m.group(2) or "").lower()
    # "1mF" style: a unit letter directly after the number is still a scale suffix
    return mag * SUFFIXES.get(suffix, 1.0)


def format_value(x: float, digits: int = 12) -> str:
    """Engineering notation using the largest suffix whose mantissa lies in [1, 1000)."""
    if x == 0:
        return "0"
    if not math.isfinite(x):
        raise UnitError(f"cannot print non-finite value {x}")
    ax = abs(x)
    for suffix, exp in _PRINT:
        mant = ax / 10.0**exp
        if mant >= 1.0 - 1e-12:
            break
    else:
        suffix, exp = "f", -15
        mant = ax / 1e-15
    if mant >= 1000 and exp == 12:
        return f"{x:.{digits}g}"
    text = f"{mant:.{digits}g}"
    if "e" in text:
        return f"{x:.{digits}g}"
    return ("-" if x < 0 else "") + text + suffix


def format_plain(x: float, digits: int = 12) -> str:
    """Plain decimal, used for source voltages (``DC 0.65``)."""
    text = f"{x:.{digits}g}"
    return "0" if text in ("-0", "0") else text


@dataclass(frozen=True)
class PhysicalValue:
    magnitude: float
    unit: str = "dimensionless"

    def __post_init__(self):
        if self.unit not in UNITS:
            raise UnitError(f"unknown unit {self.unit!r}")

    @classmethod
    def parse(cls, text: str, unit: str = "dimensionless") -> "PhysicalValue":
        return cls(parse_value(text), unit)

    def __str__(self) -> str:
        return format_value(self.magnitude)
