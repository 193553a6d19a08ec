"""Arithmetic expressions over x1..xN.

Grammar (whitespace is ignored)::

    expr    = term , { ("+" | "-") , term } ;
    term    = unary , { ("*" | "/") , unary } ;
    unary   = ("-" | "+") , unary | power ;
    power   = primary , [ "^" , unary ] ;          (* right associative *)
    primary = number | variable | call | "(" , expr , ")" ;
    call    = name , "(" , expr , { "," , expr } , ")" ;
    variable = "x" , digit , { digit } ;

``^`` binds tighter than unary minus, so ``-x1^2`` is ``-(x1^2)`` while
``2^-1`` is ``0.5``.  Functions: exp, ln, sin, cos, tan, sqrt, abs (one
argument) and pow (two).

A parsed program is kept as a postfix instruction tuple (the evaluation
plan).  Two programs with equal plans evaluate identically.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ArityError, ExpressionSyntaxError, UnknownIdentifier

FUNCTIONS = {
    "exp": 1,
    "ln": 1,
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "sqrt": 1,
    "abs": 1,
    "pow": 2,
}

_NUMBER = re.compile(rb"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_NAME = re.compile(rb"[A-Za-z_][A-Za-z_0-9]*")
_VAR = re.compile(r"x([1-9][0-9]*)")
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, name, op, end
    text: str
    offset: int


def _tokenize(src: bytes) -> list[_Tok]:
    toks, i = [], 0
    while i < len(src):
        ch = src[i : i + 1]
        if ch.isspace():
            i += 1
            continue
        m = _NUMBER.match(src, i)
        if m:
            toks.append(_Tok("num", m.group().decode(), i))
            i = m.end()
            continue
        m = _NAME.match(src, i)
        if m:
            toks.append(_Tok("name", m.group().decode(), i))
            i = m.end()
            continue
        if ch in b"+-*/^(),":
            toks.append(_Tok("op", ch.decode(), i))
            i += 1
            continue
        raise ExpressionSyntaxError(f"unexpected character {ch!r}", i)
    toks.append(_Tok("end", "", len(src)))
    return toks


class _Parser:
    def __init__(self, src: bytes, dim: int):
        self.toks = _tokenize(src)
        self.pos = 0
        self.dim = dim
        self.plan: list[tuple] = []
        self.variables: set[int] = set()

    def peek(self) -> _Tok:
        return self.toks[self.pos]

    def take(self) -> _Tok:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, text: str):
        t = self.take()
        if t.text != text or t.kind != "op":
            what = "end of input" if t.kind == "end" else repr(t.text)
            raise ExpressionSyntaxError(f"expected {text!r}, found {what}", t.offset)

    def parse(self):
        self.expr()
        t = self.peek()
        if t.kind != "end":
            raise ExpressionSyntaxError(f"unexpected {t.text!r}", t.offset)
        return tuple(self.plan)

    def expr(self):
        self.term()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = self.take().text
            self.term()
            self.plan.append(("bin", op))

    def term(self):
        self.unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = self.take().text
            self.unary()
            self.plan.append(("bin", op))

    def unary(self):
        t = self.peek()
        if t.kind == "op" and t.text in ("-", "+"):
            self.take()
            self.unary()
            if t.text == "-":
                self.plan.append(("neg",))
            return
        self.power()

    def power(self):
        self.primary()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            self.unary()
            self.plan.append(("bin", "^"))

    def primary(self):
        t = self.take()
        if t.kind == "num":
            self.plan.append(("num", float(t.text)))
        elif t.kind == "name":
            if self.peek().kind == "op" and self.peek().text == "(":
                self.call(t)
                return
            if t.text in FUNCTIONS:
                nxt = self.peek()
                what = "end of input" if nxt.kind == "end" else repr(nxt.text)
                raise ExpressionSyntaxError(f"expected '(' after {t.text}, found {what}", nxt.offset)
            m = _VAR.fullmatch(t.text)
            if not m or int(m.group(1)) > self.dim:
                raise UnknownIdentifier(f"unknown identifier {t.text!r} at offset {t.offset}")
            idx = int(m.group(1)) - 1
            self.variables.add(idx)
            self.plan.append(("var", idx))
        elif t.kind == "op" and t.text == "(":
            self.expr()
            self.expect(")")
        else:
            what = "end of input" if t.kind == "end" else repr(t.text)
            raise ExpressionSyntaxError(f"expected an operand, found {what}", t.offset)

    def call(self, name_tok: _Tok):
        name = name_tok.text
        if name not in FUNCTIONS:
            raise UnknownIdentifier(f"unknown function {name!r} at offset {name_tok.offset}")
        self.expect("(")
        nargs = 1
        self.expr()
        while self.peek().kind == "op" and self.peek().text == ",":
            self.take()
            self.expr()
            nargs += 1
        self.expect(")")
        if nargs != FUNCTIONS[name]:
            raise ArityError(f"{name} takes {FUNCTIONS[name]} argument(s), got {nargs}")
        self.plan.append(("call", name))


@dataclass(frozen=True)
class ExpressionProgram:
    source: str
    dim: int
    plan: tuple
    variables: tuple[int, ...]

    def pretty(self) -> str:
        """Canonical fully parenthesized source text."""
        stack: list[str] = []
        for ins in self.plan:
            op = ins[0]
            if op == "num":
                stack.append(repr(ins[1]))
            elif op == "var":
                stack.append(f"x{ins[1] + 1}")
            elif op == "neg":
                stack.append(f"(-{stack.pop()})")
            elif op == "bin":
                b, a = stack.pop(), stack.pop()
                stack.append(f"({a} {ins[1]} {b})")
            else:
                n = FUNCTIONS[ins[1]]
                args = stack[-n:]
                del stack[-n:]
                stack.append(f"{ins[1]}({', '.join(args)})")
        return stack[0]

    def evaluate(self, X) -> np.ndarray:
        """Evaluate on points ``X`` of shape ``(n, dim)`` (or one point).

        Domain violations produce NaN or infinities, never exceptions.
        """
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        stack = []
        with np.errstate(all="ignore"):
            for ins in self.plan:
                op = ins[0]
                if op == "num":
                    stack.append(np.full(X.shape[0], ins[1]))
                elif op == "var":
                    stack.append(X[:, ins[1]])
                elif op == "neg":
                    stack.append(-stack.pop())
                elif op == "bin":
                    b, a = stack.pop(), stack.pop()
                    stack.append(_NP_BIN[ins[1]](a, b))
                elif ins[1] == "pow":
                    b, a = stack.pop(), stack.pop()
                    stack.append(np.power(a, b))
                else:
                    stack.append(_NP_FUN[ins[1]](stack.pop()))
        out = stack[0]
        return out[0] if single else out

    def python_source(self, name: str = "_expr") -> str:
        stack: list[str] = []
        for ins in self.plan:
            op = ins[0]
            if op == "num":
                stack.append(repr(ins[1]))
            elif op == "var":
                stack.append(f"x[{ins[1]}]")
            elif op == "neg":
                stack.append(f"(-{stack.pop()})")
            elif op == "bin":
                b, a = stack.pop(), stack.pop()
                pyop = "**" if ins[1] == "^" else ins[1]
                stack.append(f"({a} {pyop} {b})")
            elif ins[1] == "pow":
                b, a = stack.pop(), stack.pop()
                stack.append(f"({a} ** {b})")
            else:
                fn = {"ln": "math.log", "abs": "abs"}.get(ins[1], "math." + ins[1])
                stack.append(f"{fn}({stack.pop()})")
        return f"def {name}(x):\n    return float({stack[0]})\n"

    def compile(self):
        """Numba-compiled scalar evaluator ``f(x) -> float``."""
        ns = {"math": math}
        exec(self.python_source(), ns)
        return njit(error_model="numpy")(ns["_expr"])


_NP_BIN = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide, "^": np.power}
_NP_FUN = {
    "exp": np.exp,
    "ln": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


def parse_expression(source: str, dim: int) -> ExpressionProgram:
    """Parse ``source`` into a program over the variables ``x1..x{dim}``.

    Raises
    ------
    ExpressionSyntaxError
        With the byte offset of the first offending token.
    UnknownIdentifier
        For names that are neither supported functions nor ``x1..x{dim}``.
    ArityError
        When a function receives the wrong number of arguments.
    """
    if not isinstance(source, str) or not source.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    if dim < 1:
        raise ValueError("dim must be positive")
    p = _Parser(source.encode("utf-8"), dim)
    plan = p.parse()
    return ExpressionProgram(source, dim, plan, tuple(sorted(p.variables)))
