"""Exact-rational math expression evaluator for the calculator tool.

Grammar: decimal literals, binary + - * / ^, unary minus, parentheses.
Precedence ^ > unary minus > * / > + -, with ^ right-associative, so
-2^2 evaluates to -4 and 2^-3 to 1/8. All arithmetic is over exact
rationals; no binary floating point touches a value.

Rendered output: plain integer when integral, shortest terminating
decimal when the reduced denominator is of the form 2^a*5^b, otherwise
"p/q" in lowest terms with a parenthesized 6-significant-digit
approximation, e.g. "1/3 (0.333333)".
"""
from __future__ import annotations

import math
import re
from fractions import Fraction

__all__ = ["CalcError", "calc_eval", "evaluate", "render"]

# Magnitude cap on every intermediate result; bit cap bounds the exact
# representation a power is allowed to produce (x^n with x near 1 can
# have a tame magnitude but an astronomically large numerator).
_MAGNITUDE_LIMIT = 10 ** 100
_POW_BIT_LIMIT = 200_000


class CalcError(ValueError):
    """Evaluation failure surfaced to the agent as a tool error."""


_TOKEN_RE = re.compile(r"\s+|(?P<num>\d+\.?\d*|\.\d+)|(?P<op>[-+*/^()])")


def _tokenize(expression: str) -> list[tuple[str, str, int]]:
    """Return (kind, text, 1-based column) triples."""
    tokens = []
    pos = 0
    while pos < len(expression):
        m = _TOKEN_RE.match(expression, pos)
        if m is None:
            raise CalcError(f"syntax error at column {pos + 1}: unexpected character {expression[pos]!r}")
        if m.lastgroup == "num":
            tokens.append(("num", m.group(), pos + 1))
        elif m.lastgroup == "op":
            tokens.append(("op", m.group(), pos + 1))
        pos = m.end()
    tokens.append(("end", "", len(expression) + 1))
    return tokens


def _checked(value: Fraction) -> Fraction:
    if value.numerator != 0 and abs(value) > _MAGNITUDE_LIMIT:
        raise CalcError("overflow")
    return value


def _power(base: Fraction, exponent: Fraction) -> Fraction:
    if exponent.denominator != 1:
        raise CalcError("non-integer exponent unsupported")
    n = exponent.numerator
    if n == 0:
        return Fraction(1)
    if base == 0:
        if n < 0:
            raise CalcError("division by zero")
        return Fraction(0)
    p, q = abs(base.numerator), base.denominator
    if n < 0:
        p, q = q, p
    # (p/q)^|n| certainly exceeds 10^100 once |n|*log2(p/q) clears the
    # cap with a wide margin; float error cannot bridge ~70 bits.
    estimate = abs(n) * (math.log2(p) - math.log2(q))
    if estimate > 450:
        raise CalcError("overflow")
    if abs(n) * max(p.bit_length(), q.bit_length()) > _POW_BIT_LIMIT:
        raise CalcError("overflow")
    return _checked(base ** n)


class _Parser:
    def __init__(self, tokens: list[tuple[str, str, int]]):
        self.tokens = tokens
        self.index = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.index]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.index]
        self.index += 1
        return tok

    def expect_end(self) -> None:
        kind, text, col = self.peek()
        if kind != "end":
            raise CalcError(f"syntax error at column {col}: unexpected {text!r}")

    def expr(self) -> Fraction:
        value = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            _, op, _ = self.advance()
            rhs = self.term()
            value = _checked(value + rhs if op == "+" else value - rhs)
        return value

    def term(self) -> Fraction:
        value = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            _, op, col = self.advance()
            rhs = self.unary()
            if op == "/":
                if rhs == 0:
                    raise CalcError("division by zero")
                value = _checked(value / rhs)
            else:
                value = _checked(value * rhs)
        return value

    def unary(self) -> Fraction:
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            return -self.unary()
        return self.power()

    def power(self) -> Fraction:
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.advance()
            exponent = self.unary()  # right-associative; sign allowed in exponent
            return _power(base, exponent)
        return base

    def atom(self) -> Fraction:
        kind, text, col = self.advance()
        if kind == "num":
            return Fraction(text)
        if (kind, text) == ("op", "("):
            value = self.expr()
            kind, text, col = self.advance()
            if (kind, text) != ("op", ")"):
                raise CalcError(f"syntax error at column {col}: expected ')'")
            return value
        shown = text if text else "end of expression"
        raise CalcError(f"syntax error at column {col}: unexpected {shown!r}")


def evaluate(expression: str) -> Fraction:
    """Evaluate to an exact rational; raises CalcError on any failure."""
    parser = _Parser(_tokenize(expression))
    value = parser.expr()
    parser.expect_end()
    return value


def render(value: Fraction) -> str:
    """Render exactly: integer, terminating decimal, or p/q with approximation."""
    if value.denominator == 1:
        return str(value.numerator)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den == 1:
        scale = max(twos, fives)
        scaled = abs(value.numerator) * 10 ** scale // value.denominator
        digits = str(scaled).rjust(scale + 1, "0")
        sign = "-" if value.numerator < 0 else ""
        return f"{sign}{digits[:-scale]}.{digits[-scale:]}"
    return f"{value.numerator}/{value.denominator} ({float(value):.6g})"


def calc_eval(expression: str) -> str:
    """Evaluate a math expression and render the exact result."""
    return render(evaluate(expression))
