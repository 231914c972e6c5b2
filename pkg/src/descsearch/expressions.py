"""Expression trees over primary features and a fixed operator vocabulary.

Every node carries its unit, its rung (tree depth in applied-operator
layers), and a canonical key string. Two trees that differ only by the
argument order of commutative operators share one canonical key, which is
what feature deduplication works on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DescsearchError
from .units import (
    MISMATCHED_ADDITION,
    REQUIRES_DIMENSIONLESS,
    Unit,
    UnitError,
)


class ExpressionParseError(DescsearchError):
    """A rendered expression string could not be parsed back."""


@dataclass(frozen=True)
class Operator:
    kind: str
    arity: int
    commutative: bool = False
    symbol: str = ""


# The operator vocabulary. Binary: add, sub, mul, div and the absolute
# difference |a - b|; commutative ones are exactly add, mul, abs_diff.
# Unary: roots and integer powers act on any unit by scaling exponents,
# inv negates them, abs passes them through, while log, exp, neg_exp,
# sin, cos accept dimensionless input only.
OPERATORS: dict[str, Operator] = {
    op.kind: op
    for op in [
        Operator("add", 2, commutative=True, symbol="+"),
        Operator("sub", 2, symbol="-"),
        Operator("mul", 2, commutative=True, symbol="*"),
        Operator("div", 2, symbol="/"),
        Operator("abs_diff", 2, commutative=True),
        Operator("sqrt", 1),
        Operator("cbrt", 1),
        Operator("sq", 1),
        Operator("cb", 1),
        Operator("six_pow", 1),
        Operator("inv", 1),
        Operator("log", 1),
        Operator("exp", 1),
        Operator("neg_exp", 1),
        Operator("abs", 1),
        Operator("sin", 1),
        Operator("cos", 1),
    ]
}

_SAME_UNIT = frozenset({"add", "sub", "abs_diff"})
_DIMENSIONLESS_ONLY = frozenset({"log", "exp", "neg_exp", "sin", "cos"})
_EXPONENT_SCALE = {
    "sqrt": "1/2",
    "cbrt": "1/3",
    "sq": 2,
    "cb": 3,
    "six_pow": 6,
    "inv": -1,
}


def get_operator(kind: str) -> Operator:
    try:
        return OPERATORS[kind]
    except KeyError:
        valid = ", ".join(sorted(OPERATORS))
        raise ValueError(f"unknown operator {kind!r}; valid kinds: {valid}") from None


def unit_of(op: Operator, child_units: list[Unit]) -> Unit:
    """Resulting unit of applying op, or UnitError when the rules forbid it."""
    if op.kind in _SAME_UNIT:
        a, b = child_units
        if a != b:
            raise UnitError(MISMATCHED_ADDITION, f"{op.kind} over {a} and {b}")
        return a
    if op.kind == "mul":
        return child_units[0] * child_units[1]
    if op.kind == "div":
        return child_units[0] / child_units[1]
    if op.kind in _DIMENSIONLESS_ONLY:
        (u,) = child_units
        if not u.is_dimensionless:
            raise UnitError(REQUIRES_DIMENSIONLESS, f"{op.kind} over {u}")
        return u
    if op.kind in _EXPONENT_SCALE:
        (u,) = child_units
        return u.scaled(_EXPONENT_SCALE[op.kind])
    if op.kind == "abs":
        return child_units[0]
    raise ValueError(f"unhandled operator kind {op.kind!r}")


def check_unit(op: Operator, child_units) -> Unit | None:
    """Non-raising variant of unit_of for hot enumeration loops."""
    try:
        return unit_of(op, list(child_units))
    except UnitError:
        return None


@dataclass(frozen=True, eq=False)
class Expression:
    """One node of an analytical feature. Compare and hash by canonical key."""

    op: Operator | None
    children: tuple["Expression", ...]
    index: int
    name: str
    rung: int
    unit: Unit
    key: str

    def __eq__(self, other):
        return isinstance(other, Expression) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    @property
    def is_primary(self) -> bool:
        return self.op is None

    def __repr__(self):
        return f"Expression({render(self)!r})"


def primary(index: int, name: str, unit: Unit) -> Expression:
    return Expression(None, (), index, name, 0, unit, name)


def apply(op: Operator, *children: Expression) -> Expression:
    """Build an operator node; raises UnitError on incompatible child units."""
    if len(children) != op.arity:
        raise ValueError(f"{op.kind} takes {op.arity} children, got {len(children)}")
    unit = unit_of(op, [c.unit for c in children])
    rung = 1 + max(c.rung for c in children)
    if op.arity == 1:
        key = f"{op.kind}({children[0].key})"
    else:
        a, b = children[0].key, children[1].key
        if op.commutative:
            ab, ba = a + "," + b, b + "," + a
            inner = ab if ab <= ba else ba
        else:
            inner = a + "," + b
        key = f"{op.kind}({inner})"
    return Expression(op, tuple(children), -1, "", rung, unit, key)


# Value semantics per operator. Applied under errstate(all="ignore"):
# domain violations produce non-finite entries that the validity filter
# rejects downstream instead of raising here.
_VALUE_FUNCS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "abs_diff": lambda a, b: np.abs(a - b),
    "sqrt": np.sqrt,
    "cbrt": np.cbrt,
    "sq": lambda a: a * a,
    "cb": lambda a: a * a * a,
    "six_pow": lambda a: a ** 6,
    "inv": lambda a: 1.0 / a,
    "log": np.log,
    "exp": np.exp,
    "neg_exp": lambda a: np.exp(-a),
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
}


def apply_operator_values(kind: str, *child_values: np.ndarray) -> np.ndarray:
    """Elementwise value of one operator; dtype of the children is kept."""
    with np.errstate(all="ignore"):
        return _VALUE_FUNCS[kind](*child_values)


def evaluate(expr: Expression, primary_values: np.ndarray, precision: str = "fp64") -> np.ndarray:
    """Evaluate a tree on a (samples, primaries) matrix.

    The matrix is cast to the requested precision once; every intermediate
    stays in that dtype. Non-finite intermediates propagate silently.
    """
    dtype = np.float32 if precision == "fp32" else np.float64
    x = np.asarray(primary_values, dtype=dtype)
    if x.ndim != 2:
        raise ValueError("primary_values must be 2-d (samples, primaries)")
    with np.errstate(all="ignore"):
        return _eval(expr, x)


def _eval(expr: Expression, x: np.ndarray) -> np.ndarray:
    if expr.op is None:
        return np.ascontiguousarray(x[:, expr.index])
    args = [_eval(c, x) for c in expr.children]
    return _VALUE_FUNCS[expr.op.kind](*args)


def render(expr: Expression) -> str:
    """Human-readable infix form; parse_expression inverts it exactly."""
    if expr.op is None:
        return expr.name
    kind = expr.op.kind
    if kind == "abs_diff":
        a, b = expr.children
        return f"|{render(a)} - {render(b)}|"
    if expr.op.arity == 2:
        a, b = expr.children
        return f"({render(a)} {expr.op.symbol} {render(b)})"
    return f"{kind}({render(expr.children[0])})"


_UNARY_KINDS = frozenset(op.kind for op in OPERATORS.values() if op.arity == 1)
_SYMBOL_TO_BINARY = {"+": "add", "-": "sub", "*": "mul", "/": "div"}


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "()|+-*/":
            tokens.append(ch)
            i += 1
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(text[i:j])
            i = j
            continue
        raise ExpressionParseError(f"unexpected character {ch!r} at offset {i}")
    return tokens


class _Parser:
    def __init__(self, tokens, primaries):
        self.tokens = tokens
        self.pos = 0
        self.primaries = primaries

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, expected=None):
        tok = self.peek()
        if tok is None:
            raise ExpressionParseError("unexpected end of expression")
        if expected is not None and tok != expected:
            raise ExpressionParseError(f"expected {expected!r}, got {tok!r}")
        self.pos += 1
        return tok

    def parse(self) -> Expression:
        tok = self.peek()
        if tok == "(":
            self.take()
            left = self.parse()
            sym = self.take()
            if sym not in _SYMBOL_TO_BINARY:
                raise ExpressionParseError(f"expected binary operator, got {sym!r}")
            right = self.parse()
            self.take(")")
            return apply(OPERATORS[_SYMBOL_TO_BINARY[sym]], left, right)
        if tok == "|":
            self.take()
            left = self.parse()
            self.take("-")
            right = self.parse()
            self.take("|")
            return apply(OPERATORS["abs_diff"], left, right)
        if tok is None:
            raise ExpressionParseError("unexpected end of expression")
        if not (tok[0].isalpha() or tok[0] == "_"):
            raise ExpressionParseError(f"unexpected token {tok!r}")
        self.take()
        if tok in _UNARY_KINDS and self.peek() == "(":
            self.take("(")
            child = self.parse()
            self.take(")")
            return apply(OPERATORS[tok], child)
        if tok not in self.primaries:
            raise ExpressionParseError(f"unknown primary feature {tok!r}")
        return self.primaries[tok]


def parse_expression(text: str, primaries: dict[str, Expression]) -> Expression:
    """Parse the output of render back into a tree.

    primaries maps primary names to their Expression leaves; the rebuilt
    tree recomputes units, rungs, and canonical keys from scratch.
    """
    parser = _Parser(_tokenize(text), primaries)
    expr = parser.parse()
    if parser.peek() is not None:
        raise ExpressionParseError(f"trailing tokens after expression: {parser.tokens[parser.pos:]}")
    return expr
