"""Integer fixed-point arithmetic checks."""

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from transactive.fixedpoint import (
    SCALE,
    div_round_half_even,
    from_fixed,
    mul_fixed,
    to_fixed,
    vec_from_fixed,
    vec_to_fixed,
)


def test_half_even_ties():
    assert div_round_half_even(1, 2) == 0
    assert div_round_half_even(3, 2) == 2
    assert div_round_half_even(5, 2) == 2
    assert div_round_half_even(7, 2) == 4
    assert div_round_half_even(-1, 2) == 0
    assert div_round_half_even(-3, 2) == -2
    assert div_round_half_even(-5, 2) == -2


def test_exact_division_untouched():
    assert div_round_half_even(6, 3) == 2
    assert div_round_half_even(-6, 3) == -2
    assert div_round_half_even(0, 7) == 0


def test_negative_denominator_normalized():
    assert div_round_half_even(3, -2) == -2
    assert div_round_half_even(-3, -2) == 2
    assert div_round_half_even(1, -2) == 0


def test_zero_denominator_raises():
    with pytest.raises(ZeroDivisionError):
        div_round_half_even(1, 0)


@given(st.integers(-10**15, 10**15), st.integers(-10**9, 10**9).filter(lambda d: d != 0))
def test_matches_fraction_rounding(num, den):
    # round() on Fraction is round-half-even, which is the contract here.
    assert div_round_half_even(num, den) == round(Fraction(num, den))


@given(st.integers(-10**15, 10**15), st.integers(1, 10**9))
def test_odd_under_negation(num, den):
    assert div_round_half_even(-num, den) == -div_round_half_even(num, den)


def test_to_fixed_exact_binary_values():
    assert to_fixed(0.0) == 0
    assert to_fixed(1.0) == SCALE
    assert to_fixed(0.5) == SCALE // 2
    assert to_fixed(0.25) == SCALE // 4
    assert to_fixed(-2.0) == -2 * SCALE
    assert to_fixed(3.5) == 3 * SCALE + SCALE // 2


def test_mantissa_roundtrip():
    for m in (0, 1, -1, 999, -1000, 7 * SCALE + 3, -(12 * SCALE + 345678901)):
        assert to_fixed(from_fixed(m)) == m


@given(st.floats(min_value=-20.0, max_value=20.0, allow_nan=False))
def test_quantization_error_bounded(x):
    assert abs(from_fixed(to_fixed(x)) - x) <= 0.5 / SCALE + 1e-15


def test_mul_fixed():
    assert mul_fixed(to_fixed(1.5), to_fixed(2.0)) == to_fixed(3.0)
    assert mul_fixed(to_fixed(-1.5), to_fixed(2.0)) == to_fixed(-3.0)
    assert mul_fixed(to_fixed(0.1), to_fixed(0.1)) == to_fixed(0.01)
    assert mul_fixed(0, to_fixed(123.0)) == 0


def test_vector_helpers_roundtrip():
    values = [0.0, 1.25, -3.5, 10.0]
    mantissas = vec_to_fixed(values)
    assert mantissas == [to_fixed(v) for v in values]
    assert vec_from_fixed(mantissas) == values
