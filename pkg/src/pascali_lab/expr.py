"""A small expression language for complex functions of ``z``.

Scalars are built from decimal literals, the imaginary unit ``i``, the
variables ``z``, ``x`` (= Re z) and ``y`` (= Im z), the operators
``+ - * /`` and ``^`` with an integer literal exponent, and the functions
``exp sin cos conj re im abs``. A whole expression may instead be a vector
``[e1, e2]`` or a matrix ``[[e11, e12], [e21, e22]]`` of scalar entries.

The grammar lives in docs/grammar.md. Evaluation is vectorised: pass an
array of points and every leaf broadcasts over it.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

VARIABLES = ("z", "x", "y")
FUNCTIONS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "conj": np.conj,
    "re": lambda a: np.real(a) + 0j,
    "im": lambda a: np.imag(a) + 0j,
    "abs": lambda a: np.abs(a) + 0j,
}
CONSTANTS = {"i": 1j, "\U0001d55a": 1j, "pi": math.pi}
MAX_EXPONENT = 1000


class ParseError(ValueError):
    def __init__(self, message: str, offset: int, expected=()):
        self.offset = offset
        self.expected = tuple(sorted(set(expected)))
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at byte {offset}{detail}")


class EvalError(ArithmeticError):
    pass


# -- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: complex


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


@dataclass(frozen=True)
class Array:
    """Vector (tuple of scalars) or matrix (tuple of equal-length rows)."""

    rows: tuple

    @property
    def shape(self) -> tuple[int, ...]:
        if self.rows and isinstance(self.rows[0], tuple):
            return (len(self.rows), len(self.rows[0]))
        return (len(self.rows),)


Node = Union[Num, Var, Neg, BinOp, Pow, Call]
Expr = Union[Node, Array]


def shape_of(e: Expr) -> tuple[int, ...]:
    return e.shape if isinstance(e, Array) else ()


# -- lexer -----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*|\U0001d55a)
  | (?P<op>[-+*/^(),\[\]])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int  # UTF-8 byte offset


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    byte = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", byte)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            toks.append(_Tok(kind if kind != "op" else chunk, chunk, byte))
        byte += len(chunk.encode("utf-8", "surrogatepass"))
        pos = m.end()
    toks.append(_Tok("end", "", byte))
    return toks


# -- parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str) -> _Tok:
        if self.tok.kind != kind:
            self.fail([kind])
        return self.advance()

    def fail(self, expected):
        t = self.tok
        what = "end of input" if t.kind == "end" else repr(t.text)
        raise ParseError(f"unexpected {what}", t.offset, expected)

    def top(self) -> Expr:
        if self.tok.kind == "[":
            node = self.array()
        else:
            node = self.expr()
        if self.tok.kind != "end":
            self.fail(["end", "+", "-", "*", "/"])
        return node

    def array(self) -> Array:
        start = self.expect("[")
        if self.tok.kind == "[":
            rows = [self.vector()]
            while self.tok.kind == ",":
                self.advance()
                rows.append(self.vector())
            self.expect("]")
            widths = {len(r) for r in rows}
            if len(widths) != 1:
                raise ParseError(
                    f"matrix rows have different lengths {sorted(widths)}", start.offset
                )
            return Array(tuple(rows))
        self.i -= 1
        return Array(self.vector())

    def vector(self) -> tuple:
        self.expect("[")
        items = [self.expr()]
        while self.tok.kind == ",":
            self.advance()
            items.append(self.expr())
        self.expect("]")
        return tuple(items)

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind in ("+", "-"):
            op = self.advance().kind
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind in ("*", "/"):
            op = self.advance().kind
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "-":
            self.advance()
            return Neg(self.unary())
        if self.tok.kind == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "^":
            self.advance()
            sign = 1
            if self.tok.kind in ("-", "+"):
                sign = -1 if self.advance().kind == "-" else 1
            t = self.tok
            if t.kind != "num" or not t.text.isdigit():
                self.fail(["integer exponent"])
            self.advance()
            if len(t.text) > 4 or int(t.text) > MAX_EXPONENT:
                raise ParseError(f"exponent larger than {MAX_EXPONENT}", t.offset)
            return Pow(base, sign * int(t.text))
        return base

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            value = float(t.text)
            if not math.isfinite(value):
                raise ParseError("numeric literal overflows", t.offset)
            return Num(value)
        if t.kind == "name":
            self.advance()
            if t.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(t.text, arg)
            if t.text in VARIABLES:
                return Var(t.text)
            if t.text in CONSTANTS:
                return Num(CONSTANTS[t.text])
            raise ParseError(f"unknown name {t.text!r}", t.offset,
                             VARIABLES + tuple(FUNCTIONS) + ("i", "pi"))
        if t.kind == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        self.fail(["number", "name", "(", "-"])


def parse(text: str) -> Expr:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("input is not valid UTF-8", exc.start) from None
    try:
        return _Parser(text).top()
    except RecursionError:
        raise ParseError("expression nested too deeply", 0) from None


# -- printing --------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5


def _prec(node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC_NEG
    if isinstance(node, Pow):
        return _PREC_POW
    if isinstance(node, Num):
        v = complex(node.value)
        return _PREC_ATOM if (v.imag == 0 and v.real >= 0) or v == 1j else _PREC["+"]
    return _PREC_ATOM


def _fmt_num(v: complex) -> str:
    v = complex(v)
    if v == 1j:
        return "i"
    if v.imag == 0:
        r = repr(float(v.real))
        return r if v.real >= 0 else f"-{repr(-float(v.real))}"
    re_part = repr(abs(float(v.real)))
    im_part = repr(abs(float(v.imag)))
    sign = "-" if v.imag < 0 else "+"
    lead = "-" if v.real < 0 else ""
    return f"{lead}{re_part} {sign} {im_part}*i"


def to_text(e: Expr) -> str:
    """Canonical text of an expression; ``to_text(parse(to_text(e)))`` is stable."""
    if isinstance(e, Array):
        if e.rows and isinstance(e.rows[0], tuple):
            return "[" + ", ".join("[" + ", ".join(map(to_text, r)) + "]" for r in e.rows) + "]"
        return "[" + ", ".join(map(to_text, e.rows)) + "]"
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    if isinstance(e, Neg):
        inner = to_text(e.operand)
        if _prec(e.operand) < _PREC_POW:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Pow):
        base = to_text(e.base)
        if _prec(e.base) < _PREC_ATOM:
            base = f"({base})"
        return f"{base}^{e.exponent}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left = to_text(e.left)
        right = to_text(e.right)
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression node: {e!r}")


# -- evaluation ------------------------------------------------------------


def _where(z, mask) -> complex:
    z = np.asarray(z)
    if z.ndim == 0:
        return complex(z)
    return complex(z[np.unravel_index(int(np.argmax(mask)), mask.shape)])


def _ev(node, z):
    if isinstance(node, Num):
        return np.complex128(node.value)
    if isinstance(node, Var):
        if node.name == "z":
            return z
        return (z.real if node.name == "x" else z.imag) + 0j
    if isinstance(node, Neg):
        return -_ev(node.operand, z)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_ev(node.arg, z))
    if isinstance(node, Pow):
        base = _ev(node.base, z)
        if node.exponent < 0:
            zero = np.broadcast_to(base == 0, np.shape(z))
            if zero.any():
                raise EvalError(f"division by zero at z = {_where(z, zero)}")
        return base ** node.exponent
    if isinstance(node, BinOp):
        a = _ev(node.left, z)
        b = _ev(node.right, z)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        zero = np.broadcast_to(b == 0, np.shape(z))
        if zero.any():
            raise EvalError(f"division by zero at z = {_where(z, zero)}")
        return a / b
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(e: Expr, z):
    """Evaluate at a point or an array of points.

    Scalars give a complex number (or an array shaped like ``z``); vectors
    and matrices append their shape to that of ``z``.
    """
    scalar_input = np.ndim(z) == 0
    za = np.asarray(z, dtype=complex)
    with np.errstate(all="ignore"):
        if isinstance(e, Array):
            rows = e.rows if isinstance(e.rows[0], tuple) else (e.rows,)
            vals = [[np.broadcast_to(_ev(c, za), za.shape) for c in row] for row in rows]
            out = np.stack([np.stack(r, axis=-1) for r in vals], axis=-2)
            if not isinstance(e.rows[0], tuple):
                out = out[..., 0, :]
        else:
            out = np.broadcast_to(_ev(e, za), za.shape).astype(complex)
    bad = ~np.isfinite(out)
    if bad.any():
        loc = bad if bad.shape == za.shape else bad.reshape(za.shape + (-1,)).any(axis=-1)
        raise EvalError(f"non-finite value at z = {_where(za, loc)}")
    if scalar_input and out.ndim == 0:
        return complex(out)
    return np.array(out)

