"""Unit algebra with exact rational exponents over named base dimensions.

A unit is a product of base-dimension symbols raised to rational powers,
e.g. kg*m^2*s^-2. Units form an abelian group under multiplication; roots
and integer powers scale every exponent by a rational factor without loss.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .errors import DescsearchError

# Reason codes carried by UnitError.
MISMATCHED_ADDITION = "mismatched_addition"
REQUIRES_DIMENSIONLESS = "requires_dimensionless"


class UnitError(DescsearchError):
    """An operator was applied to operands with incompatible units."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class UnitParseError(DescsearchError):
    """A unit annotation string could not be parsed."""


@dataclass(frozen=True)
class Unit:
    """Immutable unit value. exponents is sorted by symbol, zeros dropped."""

    exponents: tuple[tuple[str, Fraction], ...] = ()

    @staticmethod
    def from_pairs(pairs) -> "Unit":
        acc: dict[str, Fraction] = {}
        for name, exp in pairs:
            acc[name] = acc.get(name, Fraction(0)) + Fraction(exp)
        items = tuple(sorted((n, e) for n, e in acc.items() if e != 0))
        return Unit(items)

    @staticmethod
    def of(**powers) -> "Unit":
        return Unit.from_pairs(powers.items())

    @property
    def is_dimensionless(self) -> bool:
        return not self.exponents

    def __mul__(self, other: "Unit") -> "Unit":
        return Unit.from_pairs(self.exponents + other.exponents)

    def __truediv__(self, other: "Unit") -> "Unit":
        inv = tuple((n, -e) for n, e in other.exponents)
        return Unit.from_pairs(self.exponents + inv)

    def scaled(self, factor) -> "Unit":
        f = Fraction(factor)
        return Unit.from_pairs((n, e * f) for n, e in self.exponents)

    def __str__(self) -> str:
        return format_unit(self)


DIMENSIONLESS = Unit()

_TOKEN_RE = re.compile(
    r"^(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"(?:\^(?P<num>-?\d+)(?:/(?P<den>\d+))?)?$"
)


def parse_unit(text: str) -> Unit:
    """Parse "kg*m^2*s^-2" or "m^1/2" style annotations. "" is dimensionless."""
    text = text.strip()
    if not text or text == "1":
        return DIMENSIONLESS
    pairs = []
    for token in text.split("*"):
        m = _TOKEN_RE.match(token.strip())
        if m is None:
            raise UnitParseError(f"bad unit token {token.strip()!r} in {text!r}")
        num = m.group("num")
        den = m.group("den")
        exp = Fraction(1) if num is None else Fraction(int(num), int(den or 1))
        pairs.append((m.group("name"), exp))
    return Unit.from_pairs(pairs)


def format_unit(unit: Unit) -> str:
    """Inverse of parse_unit. The dimensionless unit formats as ""."""
    parts = []
    for name, exp in unit.exponents:
        if exp == 1:
            parts.append(name)
        elif exp.denominator == 1:
            parts.append(f"{name}^{exp.numerator}")
        else:
            parts.append(f"{name}^{exp.numerator}/{exp.denominator}")
    return "*".join(parts)
