"""Exact rational parsing and formatting shared by the file format, CLI and SMT layers."""
from __future__ import annotations

import re
from fractions import Fraction

_RATIONAL = re.compile(r"^\s*[+-]?(\d+(/\d+)?|\d*\.\d+|\d+\.\d*)\s*$")


def parse_rational(text) -> Fraction:
    """Parse ``n``, ``a/b`` or a plain decimal into an exact Fraction.

    Ints and Fractions pass through unchanged. Floats are promoted via their
    shortest decimal representation (``0.1`` becomes ``1/10``).
    """
    if isinstance(text, Fraction):
        return text
    if isinstance(text, bool):
        raise ValueError(f"not a rational: {text!r}")
    if isinstance(text, int):
        return Fraction(text)
    if isinstance(text, float):
        return Fraction(repr(text))
    if not isinstance(text, str) or not _RATIONAL.match(text):
        raise ValueError(f"not a rational: {text!r}")
    try:
        return Fraction(text.strip())
    except ZeroDivisionError:
        raise ValueError(f"zero denominator: {text!r}") from None


def format_rational(value: Fraction) -> str:
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def smt_real(value) -> str:
    """Render a rational as an SMT-LIB Real term, exactly."""
    value = Fraction(value)
    num, den = abs(value.numerator), value.denominator
    body = f"{num}.0" if den == 1 else f"(/ {num}.0 {den}.0)"
    return f"(- {body})" if value < 0 else body
