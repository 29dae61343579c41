"""Integer fixed-point arithmetic with a global 1e-9 scale.

The coordination state machine replicated across ledger nodes must compute
bit-identical results on every node, so it works on integer mantissas only.
Python ints are arbitrary precision; intermediate products cannot overflow.
Conversions round half to even.
"""
from __future__ import annotations

DECIMALS = 9
SCALE = 10**DECIMALS


def to_fixed(value: float) -> int:
    """Quantize a real value to an integer mantissa (round half to even)."""
    return round(float(value) * SCALE)


def from_fixed(mantissa: int) -> float:
    return mantissa / SCALE


def div_round_half_even(num: int, den: int) -> int:
    """Integer division rounding half to even, exact for any magnitudes."""
    if den == 0:
        raise ZeroDivisionError("fixed-point division by zero")
    if den < 0:
        num, den = -num, -den
    q, r = divmod(num, den)
    twice = 2 * r
    if twice > den or (twice == den and q % 2 != 0):
        q += 1
    return q


def mul_fixed(a: int, b: int) -> int:
    """Product of two mantissas, rescaled back to one mantissa."""
    return div_round_half_even(a * b, SCALE)


def vec_to_fixed(values) -> list[int]:
    return [to_fixed(v) for v in values]


def vec_from_fixed(mantissas) -> list[float]:
    return [from_fixed(m) for m in mantissas]
