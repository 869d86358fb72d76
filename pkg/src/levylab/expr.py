"""Tiny arithmetic expression language for coefficient fields.

Grammar (hand-written recursive descent):

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := ('+' | '-') factor | power
    power  := atom ('**' factor)?
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Names are the coordinates x1..xd; functions are exp, log, abs, min, max.
Compiled expressions evaluate vectorized over an (m, d) array of points.
"""

from __future__ import annotations

import re
from typing import Callable

import numpy as np

from .errors import ExpressionError

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?|(\*\*|[()+\-*/,])|([A-Za-z_][A-Za-z_0-9]*))")

_FUNCTIONS: dict[str, Callable] = {
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
}
_MULTI_ARG = {"min", "max"}


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise ExpressionError(f"unexpected character {text[pos]!r} at position {pos}")
        token = m.group(0).strip()
        # Re-attach exponent suffixes the regex captured as one blob.
        tokens.append(token)
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[str], dim: int):
        self.tokens = tokens
        self.pos = 0
        self.dim = dim

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ExpressionError("unexpected end of expression")
        self.pos += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.take()
        if got != tok:
            raise ExpressionError(f"expected {tok!r}, got {got!r}")

    def parse(self):
        node = self.expr()
        if self.peek() is not None:
            raise ExpressionError(f"trailing input starting at {self.peek()!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            rhs = self.term()
            node = (np.add if op == "+" else np.subtract, node, rhs)
        return node

    def term(self):
        node = self.factor()
        while self.peek() in ("*", "/"):
            op = self.take()
            rhs = self.factor()
            node = (np.multiply if op == "*" else np.divide, node, rhs)
        return node

    def factor(self):
        tok = self.peek()
        if tok in ("+", "-"):
            self.take()
            inner = self.factor()
            return inner if tok == "+" else (np.negative, inner)
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == "**":
            self.take()
            exponent = self.factor()
            return (np.power, base, exponent)
        return base

    def atom(self):
        tok = self.take()
        if tok == "(":
            node = self.expr()
            self.expect(")")
            return node
        if re.fullmatch(r"(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?", tok):
            return ("const", float(tok))
        if re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", tok):
            if tok in _FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.peek() == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if tok in _MULTI_ARG:
                    if len(args) < 2:
                        raise ExpressionError(f"{tok} needs at least two arguments")
                    node = args[0]
                    for extra in args[1:]:
                        node = (_FUNCTIONS[tok], node, extra)
                    return node
                if len(args) != 1:
                    raise ExpressionError(f"{tok} takes exactly one argument")
                return (_FUNCTIONS[tok], args[0])
            m = re.fullmatch(r"x(\d+)", tok)
            if m:
                axis = int(m.group(1))
                if not (1 <= axis <= self.dim):
                    raise ExpressionError(
                        f"coordinate {tok} outside the dimension ({self.dim})"
                    )
                return ("coord", axis - 1)
            raise ExpressionError(f"unknown name {tok!r}")
        raise ExpressionError(f"unexpected token {tok!r}")


def _evaluate(node, points: np.ndarray):
    if node[0] == "const":
        return np.full(points.shape[0], node[1])
    if node[0] == "coord":
        return points[:, node[1]]
    fn = node[0]
    args = [_evaluate(child, points) for child in node[1:]]
    with np.errstate(divide="ignore", invalid="ignore"):
        return fn(*args)


def compile_expression(text: str, dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """Compile ``text`` into a vectorized function of an (m, dim) point array."""
    if not text.strip():
        raise ExpressionError("empty expression")
    tree = _Parser(_tokenize(text), dim).parse()

    def fn(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray(_evaluate(tree, pts), dtype=float)

    return fn
