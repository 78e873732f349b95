"""Expression language for transition intensities in calendar time ``t``
and duration ``u``.

Grammar (usual precedence, left associative)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | primary
    primary := NUMBER | "t" | "u" | FUNC "(" expr ")" | "(" expr ")"
    FUNC    := sin | cos | exp | log

Expressions evaluate elementwise on numpy arrays, which is what the
thinning simulator relies on.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "IntensitySyntaxError",
    "IntensityDomainError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "IntensityExpr",
    "parse_intensity",
    "to_text",
    "evaluate",
    "eval_intensity",
    "local_upper_bound",
    "sum_exprs",
    "scale_expr",
    "SAFETY_FACTOR",
    "SCAN_POINTS",
]

SAFETY_FACTOR = 1.2
# grid points per axis in local_upper_bound (64 steps)
SCAN_POINTS = 65

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log}
VARIABLES = ("t", "u")


class IntensitySyntaxError(ValueError):
    """Malformed expression text. ``offset`` is a byte offset into the UTF-8 text."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at offset {offset}")


class IntensityDomainError(ValueError):
    """Evaluation outside the admissible domain (negative or non-finite rate,
    missing duration)."""


# -- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


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
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]


def _walk(node: Node):
    yield node
    if isinstance(node, Neg):
        yield from _walk(node.operand)
    elif isinstance(node, BinOp):
        yield from _walk(node.left)
        yield from _walk(node.right)
    elif isinstance(node, Call):
        yield from _walk(node.arg)


@dataclass(frozen=True)
class IntensityExpr:
    """A parsed intensity expression.

    ``uses_duration`` is true iff some leaf references ``u``.  ``has_division``
    marks expressions whose finiteness depends on the domain; models check
    these at load time by grid scan.
    """

    ast: Node
    uses_duration: bool
    has_division: bool

    @classmethod
    def from_ast(cls, ast: Node) -> "IntensityExpr":
        nodes = list(_walk(ast))
        return cls(
            ast=ast,
            uses_duration=any(isinstance(n, Var) and n.name == "u" for n in nodes),
            has_division=any(isinstance(n, BinOp) and n.op == "/" for n in nodes),
        )

    def __str__(self) -> str:
        return to_text(self)

    def __call__(self, t, u=None):
        return evaluate(self, t, u)


# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/()])
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise IntensitySyntaxError(
                f"unexpected character {text[pos]!r}", _byte_offset(text, pos), text
            )
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), _byte_offset(text, pos)))
        pos = m.end()
    tokens.append(("end", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise IntensitySyntaxError(message, tok[2], self.text)

    def expect(self, value):
        tok = self.peek()
        if tok[1] != value or tok[0] not in ("op",):
            self.error(f"expected {value!r}")
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[:2] == ("op", "-"):
            self.advance()
            return Neg(self.unary())
        return self.primary()

    def primary(self) -> Node:
        kind, value, offset = self.peek()
        if kind == "num":
            self.advance()
            x = float(value)
            if not math.isfinite(x):
                self.error(f"numeric literal {value!r} overflows")
            return Num(x)
        if kind == "ident":
            self.advance()
            if value in VARIABLES:
                return Var(value)
            if value in FUNCTIONS:
                if self.peek()[:2] != ("op", "("):
                    self.error(f"expected '(' after {value}")
                self.advance()
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            raise IntensitySyntaxError(f"unknown identifier {value!r}", offset, self.text)
        if (kind, value) == ("op", "("):
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            self.error("unexpected end of input")
        self.error(f"unexpected token {value!r}")


def parse_intensity(text: str) -> IntensityExpr:
    """Parse ``text`` into an :class:`IntensityExpr`.

    >>> parse_intensity("0.1 + 0.002*t").uses_duration
    False
    """
    return IntensityExpr.from_ast(_Parser(text).parse())


# -- canonical printer -------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    return 4


def _fmt_num(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _print(node: Node) -> str:
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({_print(node.arg)})"
    if isinstance(node, Neg):
        inner = _print(node.operand)
        return f"-({inner})" if _prec(node.operand) < 3 else f"-{inner}"
    p = _PREC[node.op]
    left = _print(node.left)
    if _prec(node.left) < p:
        left = f"({left})"
    right = _print(node.right)
    # parse is left associative, so an equal-precedence right child needs parens
    if _prec(node.right) <= p:
        right = f"({right})"
    if node.op in "+-":
        return f"{left} {node.op} {right}"
    return f"{left}{node.op}{right}"


def to_text(expr: IntensityExpr | Node) -> str:
    """Canonical text with minimal parentheses."""
    return _print(expr.ast if isinstance(expr, IntensityExpr) else expr)


# -- evaluation --------------------------------------------------------------


def _eval(node: Node, t, u):
    if isinstance(node, Num):
        # numpy scalar, so that 1/0 gives inf instead of raising
        return np.float64(node.value)
    if isinstance(node, Var):
        return t if node.name == "t" else u
    if isinstance(node, Neg):
        return -_eval(node.operand, t, u)
    if isinstance(node, Call):
        return FUNCTIONS[node.func](_eval(node.arg, t, u))
    a = _eval(node.left, t, u)
    b = _eval(node.right, t, u)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    return a / b


def evaluate(expr: IntensityExpr, t, u=None):
    """Vectorized evaluation; returns an array broadcast against ``t``/``u``.

    No domain checks are performed here (see :func:`eval_intensity`).
    """
    if expr.uses_duration and u is None:
        raise IntensityDomainError("expression uses duration u but none was supplied")
    t = np.asarray(t, dtype=float)
    if u is not None:
        u = np.asarray(u, dtype=float)
    with np.errstate(all="ignore"):
        out = _eval(expr.ast, t, u)
    shape = np.broadcast(t, u).shape if u is not None else t.shape
    return np.broadcast_to(np.asarray(out, dtype=float), shape)


def eval_intensity(expr: IntensityExpr, t: float, u: float | None = None) -> float:
    """Evaluate at a single point, checking the domain.

    Raises :class:`IntensityDomainError` when ``u`` is required but absent,
    when ``u`` lies outside ``[0, t]``, or when the value is negative or
    non-finite.
    """
    if expr.uses_duration and u is None:
        raise IntensityDomainError("expression uses duration u but none was supplied")
    if t < 0:
        raise IntensityDomainError(f"negative time t={t}")
    if u is not None and not 0 <= u <= t:
        raise IntensityDomainError(f"duration u={u} outside [0, t={t}]")
    value = float(evaluate(expr, t, u if u is not None else 0.0))
    if not math.isfinite(value):
        raise IntensityDomainError(f"non-finite intensity {value} at t={t}, u={u}")
    if value < 0:
        raise IntensityDomainError(f"negative intensity {value} at t={t}, u={u}")
    return value


def local_upper_bound(
    expr: IntensityExpr,
    t_lo: float,
    t_hi: float,
    u_lo: float = 0.0,
    u_hi: float = 0.0,
) -> float:
    """Upper bound of ``expr`` over the box ``[t_lo, t_hi] x [u_lo, u_hi]``.

    Dense grid scan with 64 steps per axis, times :data:`SAFETY_FACTOR`.
    The duration axis is only scanned when the expression uses ``u``.
    """
    if not t_lo < t_hi:
        raise ValueError(f"empty time interval [{t_lo}, {t_hi}]")
    ts = np.linspace(t_lo, t_hi, SCAN_POINTS)
    if expr.uses_duration:
        if u_hi < u_lo:
            raise ValueError(f"empty duration interval [{u_lo}, {u_hi}]")
        us = np.linspace(u_lo, u_hi, SCAN_POINTS)
        values = evaluate(expr, ts[:, None], us[None, :])
    else:
        values = evaluate(expr, ts)
    if not np.all(np.isfinite(values)):
        raise IntensityDomainError(
            f"non-finite value while bounding {to_text(expr)} on "
            f"t in [{t_lo}, {t_hi}], u in [{u_lo}, {u_hi}]"
        )
    return SAFETY_FACTOR * max(float(values.max()), 0.0)


# -- composition helpers -----------------------------------------------------


def sum_exprs(exprs) -> IntensityExpr:
    """Sum of several expressions (the total exit intensity of a state)."""
    exprs = list(exprs)
    if not exprs:
        return IntensityExpr.from_ast(Num(0.0))
    node = exprs[0].ast
    for e in exprs[1:]:
        node = BinOp("+", node, e.ast)
    return IntensityExpr.from_ast(node)


def scale_expr(factor: float, expr: IntensityExpr) -> IntensityExpr:
    return IntensityExpr.from_ast(BinOp("*", Num(float(factor)), expr.ast))
