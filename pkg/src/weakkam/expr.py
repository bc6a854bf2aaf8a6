"""Scalar expressions for Hamiltonians and potentials.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | 'pi' | VAR | FUNC '(' args ')' | '(' expr ')'

Variables are ``x1..xd`` and ``p1..pd``.  Evaluation works on floats and on
numpy arrays alike; domain errors (division by zero, square root or
fractional power of a negative number) raise instead of producing NaN.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "abs": 1,
    "sqrt": 1,
    "min": 2,
    "max": 2,
}
CONSTANTS = {"pi": math.pi}
_VARIABLE = re.compile(r"^[xp][1-9][0-9]*$")


class ExpressionError(ValueError):
    pass


# Reported offsets are 1-based byte columns: the first character is at
# offset 1, and a missing token at the end of "abc" is reported at offset 4.


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, index: int):
        self.offset = index + 1
        super().__init__(f"{message} at offset {self.offset}")


class UnknownIdentifierError(ExpressionError):
    def __init__(self, name: str, index: int):
        self.name = name
        self.offset = index + 1
        super().__init__(f"unknown identifier {name!r} at offset {self.offset}")


class ArityError(ExpressionError):
    pass


class UnboundVariableError(ExpressionError):
    pass


class ExpressionDomainError(ExpressionError, ArithmeticError):
    pass


# --- AST ---------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str


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
    args: tuple


Node = Union[Num, Const, Var, Neg, BinOp, Call]


# --- tokenizer ---------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # 'num', 'name', 'op', 'end'
    text: str
    offset: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    raw = text.encode("utf-8")
    if len(raw) != len(text):
        # offsets are byte offsets; keep it simple and refuse non-ascii
        for i, ch in enumerate(text):
            if ord(ch) > 127:
                raise ExpressionSyntaxError(f"unexpected character {ch!r}", len(text[:i].encode()))
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        tokens.append(_Token(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Token:
        t = self.tok
        if t.kind != "op" or t.text != text:
            what = "end of input" if t.kind == "end" else repr(t.text)
            if text == ")":
                raise ExpressionSyntaxError(f"expected ')' (unclosed parenthesis), found {what}", t.offset)
            raise ExpressionSyntaxError(f"expected {text!r}, found {what}", t.offset)
        return self.advance()

    def parse(self) -> Node:
        if self.tok.kind == "end":
            raise ExpressionSyntaxError("empty expression", 0)
        node = self.expr()
        if self.tok.kind != "end":
            raise ExpressionSyntaxError(f"unexpected token {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Num(float(t.text))
        if t.kind == "name":
            self.advance()
            name = t.text
            if name in FUNCTIONS:
                self.expect("(")
                args = [self.expr()]
                while self.tok.kind == "op" and self.tok.text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[name]:
                    raise ArityError(
                        f"{name}() takes {FUNCTIONS[name]} argument(s), got {len(args)} (offset {t.offset + 1})"
                    )
                return Call(name, tuple(args))
            if name in CONSTANTS:
                return Const(name)
            if _VARIABLE.match(name):
                return Var(name)
            raise UnknownIdentifierError(name, t.offset)
        if t.kind == "op" and t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if t.kind == "end" else repr(t.text)
        raise ExpressionSyntaxError(f"unexpected {what}", t.offset)


def parse_expression(text: str) -> Node:
    """Parse ``text`` into an expression tree."""
    if not text or not text.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    return _Parser(text).parse()


def to_text(node: Node) -> str:
    """Fully parenthesised rendering; ``parse_expression(to_text(t)) == t``."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, (Const, Var)):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_text(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def free_variables(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return free_variables(node.operand)
    if isinstance(node, BinOp):
        return free_variables(node.left) | free_variables(node.right)
    if isinstance(node, Call):
        out: set[str] = set()
        for a in node.args:
            out |= free_variables(a)
        return out
    return set()


# --- evaluation --------------------------------------------------------


def _any(mask) -> bool:
    return bool(np.any(mask))


def _eval(node: Node, env: Mapping[str, object]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise UnboundVariableError(f"variable {node.name!r} is not bound") from None
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        op = node.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if _any(np.asarray(b) == 0):
                raise ExpressionDomainError("division by zero")
            return np.divide(a, b) if isinstance(a, np.ndarray) or isinstance(b, np.ndarray) else a / b
        if op == "^":
            return _power(a, b)
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        f = node.func
        if f == "sqrt":
            if _any(np.asarray(args[0]) < 0):
                raise ExpressionDomainError("square root of a negative number")
            return np.sqrt(args[0])
        if f == "min":
            return np.minimum(args[0], args[1])
        if f == "max":
            return np.maximum(args[0], args[1])
        return getattr(np, f)(args[0])
    raise TypeError(f"not an expression node: {node!r}")


def _power(a, b):
    aa = np.asarray(a, dtype=float)
    bb = np.asarray(b, dtype=float)
    bad = (aa < 0) & (bb != np.round(bb))
    if _any(bad):
        raise ExpressionDomainError("fractional power of a negative number")
    if _any((aa == 0) & (bb < 0)):
        raise ExpressionDomainError("division by zero (zero to a negative power)")
    # integral exponents go through repeated multiplication so p^2 is exact
    if bb.ndim == 0 and float(bb) == round(float(bb)) and abs(float(bb)) <= 16:
        k = int(round(float(bb)))
        out = np.ones_like(aa) if aa.ndim else 1.0
        base = a
        for _ in range(abs(k)):
            out = out * base
        if k < 0:
            out = 1.0 / out
        return out
    return np.power(aa, bb) if aa.ndim or bb.ndim else float(np.power(aa, bb))


def evaluate(expr: Node, bindings: Mapping[str, object]):
    """Evaluate ``expr``; returns a float for scalar bindings, else an array."""
    with np.errstate(over="raise", invalid="raise"):
        try:
            value = _eval(expr, bindings)
        except FloatingPointError as exc:
            raise ExpressionDomainError(str(exc)) from None
    if isinstance(value, np.ndarray) and value.ndim == 0:
        return float(value)
    if not isinstance(value, np.ndarray):
        return float(value)
    return value
