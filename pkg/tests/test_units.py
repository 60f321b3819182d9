import math

import pytest
from hypothesis import given, strategies as st

from sizeloop.units import PhysicalValue, UnitError, format_plain, format_value, parse_value


@pytest.mark.parametrize("text, value", [
    ("180n", 180e-9), ("1.5MEG", 1.5e6), ("10pF", 10e-12), ("1m", 1e-3), ("2mil", 50.8e-6),
    ("3k", 3e3), ("0.5u", 0.5e-6), ("1e-6", 1e-6), ("4.7uF", 4.7e-6), ("-2.5", -2.5), (".5", 0.5),
])
def test_parse_examples(text, value):
    assert parse_value(text) == pytest.approx(value, rel=1e-12)


def test_m_is_milli_not_mega():
    assert parse_value("1M") == pytest.approx(1e-3)
    assert parse_value("1Meg") == pytest.approx(1e6)


@pytest.mark.parametrize("bad", ["", "abc", "1..2", "u5"])
def test_parse_rejects(bad):
    with pytest.raises(UnitError):
        parse_value(bad)


@pytest.mark.parametrize("x, text", [(180e-9, "180n"), (1e-6, "1u"), (2.5e6, "2.5meg"), (0, "0"), (1.2, "1.2")])
def test_format_examples(x, text):
    assert format_value(x) == text


@given(st.floats(min_value=1e-16, max_value=1e14, allow_nan=False, allow_infinity=False), st.booleans())
def test_format_parse_roundtrip(x, neg):
    x = -x if neg else x
    assert parse_value(format_value(x)) == pytest.approx(x, rel=1e-11)


@given(st.floats(min_value=-10, max_value=10, allow_nan=False))
def test_plain_roundtrip(x):
    assert float(format_plain(x)) == pytest.approx(x, rel=1e-11, abs=1e-15)


def test_format_rejects_non_finite():
    with pytest.raises(UnitError):
        format_value(math.inf)


def test_physical_value_units():
    assert str(PhysicalValue.parse("180n", "m")) == "180n"
    with pytest.raises(UnitError):
        PhysicalValue(1.0, "furlong")
