"""Closed-form expressions in x1, x2, x3 and t.

Used to write exact solutions, forcings and boundary/initial data in config
files.  The grammar, from loosest to tightest binding::

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') unary)*
    unary := '-' unary | '+' unary | power
    power := atom ('^' unary)?          # right associative
    atom  := number | 'pi' | variable | func '(' expr ')' | '(' expr ')'

Variables are ``x1 x2 x3 t``; functions are ``sin cos exp tanh log``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .errors import NonFinite, ParseError
from .grid import GridSpec, ScalarField

VARIABLES = ("x1", "x2", "x3", "t")

_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "log": np.log,
}

_CONSTANTS = {"pi": math.pi}

_MAX_DEPTH = 100


class Expr:
    """Base class of the expression tree.  Nodes are immutable and hashable."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True, eq=True)
class Num(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Call(Expr):
    func: str
    arg: Expr


ZERO = Num(0.0)
ONE = Num(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float)):
        return Num(float(value))
    if isinstance(value, str):
        return parse(value)
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


# --- parsing -----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num, name, op, end
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError("unexpected character", pos, text[pos])
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.depth = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind != "op":
            what = "end of input" if self.tok.kind == "end" else "token"
            raise ParseError(f"expected {text!r}, found {what}", self.tok.offset, self.tok.text)
        self.advance()

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            raise ParseError("unexpected trailing input", self.tok.offset, self.tok.text)
        return e

    # Each operator in a left-associative chain deepens the tree by one, so
    # the chain length counts against the nesting limit too.
    def expr(self) -> Expr:
        start = self.depth
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            self._enter()
            e = BinOp(op, e, self.term())
        self.depth = start
        return e

    def term(self) -> Expr:
        start = self.depth
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            self._enter()
            e = BinOp(op, e, self.unary())
        self.depth = start
        return e

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            self._enter()
            arg = self.unary()
            self.depth -= 1
            return Neg(arg) if op == "-" else arg
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            self._enter()
            exponent = self.unary()
            self.depth -= 1
            return BinOp("^", base, exponent)
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            value = float(tok.text)
            if not math.isfinite(value):
                raise ParseError("numeric literal out of range", tok.offset, tok.text)
            return Num(value)
        if tok.kind == "name":
            self.advance()
            name = tok.text
            if name in _FUNCS:
                self.expect("(")
                self._enter()
                arg = self.expr()
                self.depth -= 1
                self.expect(")")
                return Call(name, arg)
            if name in VARIABLES:
                return Var(name)
            if name in _CONSTANTS:
                return Num(_CONSTANTS[name])
            raise ParseError("unknown symbol", tok.offset, name)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            self._enter()
            e = self.expr()
            self.depth -= 1
            self.expect(")")
            return e
        what = "end of input" if tok.kind == "end" else "token"
        raise ParseError(f"expected an operand, found {what}", tok.offset, tok.text)

    def _enter(self) -> None:
        self.depth += 1
        if self.depth > _MAX_DEPTH:
            raise ParseError("expression nested too deeply", self.tok.offset, self.tok.text)


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree; raises :class:`ParseError`."""
    if not isinstance(text, str):
        raise TypeError("expression text must be a string")
    return _Parser(text).parse()


# --- printing ----------------------------------------------------------------


def to_string(e: Expr) -> str:
    """Fully parenthesised text that parses back to an equal-valued tree."""
    if isinstance(e, Num):
        s = repr(e.value)
        return f"({s})" if e.value < 0 or s.startswith("-") else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_string(e.arg)})"
    if isinstance(e, BinOp):
        return f"({to_string(e.left)}{e.op}{to_string(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({to_string(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


def free_variables(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, (Neg, Call)):
        return free_variables(e.arg)
    return free_variables(e.left) | free_variables(e.right)


# --- smart constructors (constant folding of 0 and 1 only) -------------------


def _is(e: Expr, value: float) -> bool:
    return isinstance(e, Num) and e.value == value


def add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return ONE
    if _is(b, 1.0):
        return a
    return BinOp("^", a, b)


def call(func: str, arg: Expr) -> Expr:
    return Call(func, arg)


# --- differentiation ---------------------------------------------------------


def differentiate(e: Expr, v: str) -> Expr:
    """Symbolic derivative of ``e`` with respect to variable ``v``."""
    if v not in VARIABLES:
        raise ValueError(f"cannot differentiate with respect to {v!r}; expected one of {VARIABLES}")
    return _diff(e, v)


def _diff(e: Expr, v: str) -> Expr:
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Neg):
        return neg(_diff(e.arg, v))
    if isinstance(e, Call):
        da = _diff(e.arg, v)
        if _is(da, 0.0):
            return ZERO
        a = e.arg
        if e.func == "sin":
            outer = call("cos", a)
        elif e.func == "cos":
            outer = neg(call("sin", a))
        elif e.func == "exp":
            outer = e
        elif e.func == "tanh":
            outer = sub(ONE, power(e, Num(2.0)))
        elif e.func == "log":
            outer = div(ONE, a)
        else:  # pragma: no cover - table and parser agree
            raise ValueError(f"no derivative rule for {e.func}")
        return mul(outer, da)
    assert isinstance(e, BinOp)
    a, b = e.left, e.right
    if e.op == "+":
        return add(_diff(a, v), _diff(b, v))
    if e.op == "-":
        return sub(_diff(a, v), _diff(b, v))
    if e.op == "*":
        return add(mul(_diff(a, v), b), mul(a, _diff(b, v)))
    if e.op == "/":
        da, db = _diff(a, v), _diff(b, v)
        if _is(db, 0.0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
    if e.op == "^":
        da, db = _diff(a, v), _diff(b, v)
        if isinstance(b, Num) and float(b.value).is_integer():
            k = b.value
            return mul(mul(Num(k), power(a, Num(k - 1.0))), da)
        # a^b = exp(b log a)
        dlog = add(mul(db, call("log", a)), mul(b, div(da, a)))
        return mul(e, dlog)
    raise TypeError(f"unknown operator {e.op!r}")


# --- evaluation --------------------------------------------------------------


def _eval(e: Expr, env: Mapping[str, np.ndarray | float]):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, Call):
        return _FUNCS[e.func](_eval(e.arg, env))
    a = _eval(e.left, env)
    b = _eval(e.right, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        return np.divide(a, b)
    return np.power(a, b)


def eval_point(e: Expr, x1: float = 0.0, x2: float = 0.0, x3: float = 0.0, t: float = 0.0) -> float:
    env = {"x1": np.float64(x1), "x2": np.float64(x2), "x3": np.float64(x3), "t": np.float64(t)}
    with np.errstate(all="ignore"):
        value = float(_eval(e, env))
    if not math.isfinite(value):
        raise NonFinite(f"expression {to_string(e)} is not finite at ({x1}, {x2}, {x3}, {t})")
    return value


def eval_array(e: Expr, x1, x2, x3, t) -> np.ndarray:
    """Vectorised evaluation on broadcastable coordinate arrays (no finiteness check)."""
    env = {"x1": np.asarray(x1, float), "x2": np.asarray(x2, float), "x3": np.asarray(x3, float), "t": np.asarray(t, float)}
    with np.errstate(all="ignore"):
        out = _eval(e, env)
    shape = np.broadcast_shapes(*(np.shape(v) for v in env.values()))
    return np.array(np.broadcast_to(out, shape), dtype=float)


def eval_on_grid(e: Expr, g: GridSpec) -> ScalarField:
    """Evaluate at every node; :class:`NonFinite` names the first bad node."""
    values = eval_array(e, *g.mesh())
    finite = np.isfinite(values)
    if not finite.all():
        flat = int(np.argmin(finite.reshape(-1)))
        index = tuple(int(i) for i in np.unravel_index(flat, g.shape))
        coords = g.node_coords(index)
        raise NonFinite(
            f"expression {to_string(e)} is not finite at node {index} (x1, x2, x3, t) = {coords}",
            index=index,
        )
    return ScalarField(g, values, check=False)


@lru_cache(maxsize=512)
def eval_cached(e: Expr, g: GridSpec) -> ScalarField:
    """Memoised :func:`eval_on_grid`; safe because fields are immutable."""
    return eval_on_grid(e, g)
