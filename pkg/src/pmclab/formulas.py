"""Arithmetic formula strings for scenario configuration.

Grammar: ``+ - * / ^`` (``**`` accepted for ``^``), parentheses, unary
minus, one-argument functions ``sin cos exp ln``, constants ``pi`` and
``e``, and whatever coordinate names the caller declares.  ``^`` is
right-associative; unary minus binds between ``*`` and ``^`` so that
``-x^2`` means ``-(x^2)``.  Parsing is strict: an unknown name or a
stray character reports its character position, so config errors point
at the offending spot rather than surfacing later as evaluation noise.

The special initial-data form ``random(seed, amplitude)`` is not part of
the expression grammar; :func:`parse_random_spec` recognizes it whole.
"""

from __future__ import annotations

import math
import re

import numpy as np


class FormulaError(ValueError):
    """Raised for syntax errors and unknown names, with a position."""


_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "ln": np.log,
}

_CONSTANTS = {
    "pi": math.pi,
    "π": math.pi,
    "e": math.e,
}

_TOKEN_RE = re.compile(
    r"""
    (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[^\W\d]\w*)
  | (?P<op>\*\*|[-+*/^()])
  | (?P<ws>\s+)
  | (?P<bad>.)
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        if kind == "ws":
            continue
        if kind == "bad":
            raise FormulaError(f"unexpected character {m.group()!r} at position {m.start()}")
        tokens.append((kind, m.group(), m.start()))
    tokens.append(("end", "", len(text)))
    return tokens


_BINARY_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30, "**": 30}
_UNARY_BP = 25


class _Parser:
    def __init__(self, text: str, names: frozenset[str]):
        self.text = text
        self.names = names
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, value, at = self.advance()
        if kind != "op" or value != op:
            raise FormulaError(f"expected {op!r} at position {at}")

    def parse(self):
        node = self.expression(0)
        kind, value, at = self.peek()
        if kind != "end":
            raise FormulaError(f"unexpected {value!r} at position {at}")
        return node

    def expression(self, min_bp: int):
        node = self.prefix()
        while True:
            kind, value, _ = self.peek()
            if kind != "op" or value not in _BINARY_BP:
                break
            bp = _BINARY_BP[value]
            if bp <= min_bp:
                break
            self.advance()
            # right-associative power re-enters at one below its own level
            right = self.expression(bp - 1 if value in ("^", "**") else bp)
            op = "^" if value == "**" else value
            node = ("bin", op, node, right)
        return node

    def prefix(self):
        kind, value, at = self.advance()
        if kind == "num":
            return ("num", float(value))
        if kind == "op" and value == "-":
            return ("neg", self.expression(_UNARY_BP))
        if kind == "op" and value == "+":
            return self.expression(_UNARY_BP)
        if kind == "op" and value == "(":
            node = self.expression(0)
            self.expect_op(")")
            return node
        if kind == "name":
            if value in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expression(0)
                self.expect_op(")")
                return ("call", value, arg)
            if value in _CONSTANTS:
                return ("num", _CONSTANTS[value])
            if value in self.names:
                return ("sym", value)
            raise FormulaError(f"unknown symbol {value!r} at position {at}")
        raise FormulaError(f"unexpected {value!r} at position {at}")


class Formula:
    """A parsed expression, evaluated over named coordinate arrays."""

    def __init__(self, text: str, coordinates) -> None:
        self.text = text
        self.names = frozenset(coordinates)
        self._ast = _Parser(text, self.names).parse()

    def evaluate(self, env: dict) -> np.ndarray | float:
        missing = self.names_used() - set(env)
        if missing:
            raise FormulaError(f"no value supplied for {sorted(missing)}")
        with np.errstate(all="ignore"):
            return self._eval(self._ast, env)

    def names_used(self) -> set[str]:
        out: set[str] = set()

        def walk(node):
            if node[0] == "sym":
                out.add(node[1])
            elif node[0] == "neg":
                walk(node[1])
            elif node[0] == "call":
                walk(node[2])
            elif node[0] == "bin":
                walk(node[2])
                walk(node[3])

        walk(self._ast)
        return out

    def _eval(self, node, env):
        tag = node[0]
        if tag == "num":
            return node[1]
        if tag == "sym":
            return env[node[1]]
        if tag == "neg":
            return -self._eval(node[1], env)
        if tag == "call":
            return _FUNCTIONS[node[1]](self._eval(node[2], env))
        op, a, b = node[1], self._eval(node[2], env), self._eval(node[3], env)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return a / b
        return np.power(a, b)


def evaluate_formula(text: str, env: dict) -> np.ndarray | float:
    """Parse against the environment's names and evaluate in one step."""
    return Formula(text, env.keys()).evaluate(env)


_RANDOM_RE = re.compile(
    r"^\s*random\s*\(\s*(\d+)\s*,\s*((?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)\s*\)\s*$"
)


def parse_random_spec(text: str) -> tuple[int, float] | None:
    """Recognize ``random(seed, amplitude)``; None when the text is not one.

    Seeded data are drawn uniformly from ``[-amplitude, amplitude]`` with
    numpy's PCG64 generator, so a seed pins the field bit-for-bit across
    platforms.
    """
    m = _RANDOM_RE.match(text)
    if m is None:
        return None
    return int(m.group(1)), float(m.group(2))


def random_field_values(shape, seed: int, amplitude: float) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-amplitude, amplitude, size=shape)
