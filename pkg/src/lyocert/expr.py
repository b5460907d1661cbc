"""Recursive-descent parser for right-hand sides and closed-form functions.

Grammar::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := ('-')? atom ('^' atom)?
    atom   := number | ident | func '(' expr (',' expr)* ')' | '(' expr ')'

Parsed expressions are constant-folded and compiled to numpy-backed Python
callables, so they accept scalars and arrays alike.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

FUNCTIONS: dict[str, tuple[int, int | None]] = {
    # name: (min arity, max arity); None means variadic
    "sin": (1, 1),
    "cos": (1, 1),
    "exp": (1, 1),
    "log": (1, 1),
    "abs": (1, 1),
    "sqrt": (1, 1),
    "tanh": (1, 1),
    "min": (2, None),
    "max": (2, None),
}

_NP_NAMES = {
    "sin": "np.sin",
    "cos": "np.cos",
    "exp": "np.exp",
    "log": "np.log",
    "abs": "np.abs",
    "sqrt": "np.sqrt",
    "tanh": "np.tanh",
}

_SCALAR_FUNCS: dict[str, Callable] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "abs": abs,
    "sqrt": math.sqrt,
    "tanh": math.tanh,
    "min": min,
    "max": max,
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


class ParseError(ValueError):
    """Syntax or name error, with 1-based line/column of the offending token."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind == "ws":
            for i, ch in enumerate(text):
                if ch == "\n":
                    line += 1
                    line_start = pos + i + 1
        else:
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("end", "", line, pos - line_start + 1))
    return tokens


# AST nodes. Kept as small frozen dataclasses so trees are hashable and
# comparable in tests.


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


class _Parser:
    def __init__(self, tokens: list[Token], variables: frozenset[str]):
        self.tokens = tokens
        self.pos = 0
        self.variables = variables

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise ParseError(f"expected {text!r}, found {found!r}", self.tok.line, self.tok.column)
        return self.advance()

    def parse(self):
        node = self.expr()
        if self.tok.kind != "end":
            raise ParseError(f"unexpected token {self.tok.text!r}", self.tok.line, self.tok.column)
        return node

    def expr(self):
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self):
        negate = False
        if self.tok.text == "-":
            self.advance()
            negate = True
        node = self.atom()
        if self.tok.text == "^":
            self.advance()
            node = BinOp("^", node, self.atom())
        return Neg(node) if negate else node

    def atom(self):
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text))
        if tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            self.advance()
            if self.tok.text == "(":
                return self.call(tok)
            if tok.text in FUNCTIONS:
                raise ParseError(f"function {tok.text!r} needs arguments", tok.line, tok.column)
            if tok.text not in self.variables:
                raise ParseError(f"unknown identifier {tok.text!r}", tok.line, tok.column)
            return Var(tok.text)
        found = tok.text or "end of input"
        raise ParseError(f"unexpected token {found!r}", tok.line, tok.column)

    def call(self, name_tok: Token):
        name = name_tok.text
        if name not in FUNCTIONS:
            raise ParseError(f"unknown function {name!r}", name_tok.line, name_tok.column)
        self.expect("(")
        args = [self.expr()]
        while self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        lo, hi = FUNCTIONS[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = f"{lo}" if hi == lo else f"at least {lo}"
            raise ParseError(
                f"{name}() takes {want} argument(s), got {len(args)}", name_tok.line, name_tok.column
            )
        return Call(name, tuple(args))


def _fold(node):
    """Constant folding, bottom-up."""
    if isinstance(node, Neg):
        inner = _fold(node.operand)
        if isinstance(inner, Num):
            return Num(-inner.value)
        return Neg(inner)
    if isinstance(node, BinOp):
        left, right = _fold(node.left), _fold(node.right)
        if isinstance(left, Num) and isinstance(right, Num):
            try:
                return Num(_apply_scalar(node.op, left.value, right.value))
            except (ZeroDivisionError, OverflowError, ValueError):
                pass
        return BinOp(node.op, left, right)
    if isinstance(node, Call):
        args = tuple(_fold(a) for a in node.args)
        if all(isinstance(a, Num) for a in args):
            try:
                return Num(float(_SCALAR_FUNCS[node.name](*(a.value for a in args))))
            except (OverflowError, ValueError):
                pass
        return Call(node.name, args)
    return node


def _apply_scalar(op: str, a: float, b: float) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    return float(a**b)


def _codegen(node, names: Mapping[str, str]) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return names[node.name]
    if isinstance(node, Neg):
        return f"(-{_codegen(node.operand, names)})"
    if isinstance(node, BinOp):
        left, right = _codegen(node.left, names), _codegen(node.right, names)
        if node.op == "^":
            return f"np.power({left}, {right})"
        return f"({left} {node.op} {right})"
    if isinstance(node, Call):
        args = [_codegen(a, names) for a in node.args]
        if node.name in ("min", "max"):
            fn = "np.minimum" if node.name == "min" else "np.maximum"
            out = args[-1]
            for a in reversed(args[:-1]):
                out = f"{fn}({a}, {out})"
            return out
        return f"{_NP_NAMES[node.name]}({args[0]})"
    raise TypeError(f"unknown node {node!r}")


def free_variables(node) -> set[str]:
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


@dataclass(frozen=True)
class Expression:
    source: str
    tree: object
    variables: tuple[str, ...]

    def compile(self, argnames: Iterable[str] | None = None, bindings: Mapping[str, str] | None = None):
        """Compile to a Python function.

        ``argnames`` are the positional parameters of the generated function;
        ``bindings`` maps expression variables to Python source fragments over
        those parameters (default: each variable is its own parameter).
        """
        argnames = tuple(argnames) if argnames is not None else self.variables
        names = {v: v for v in self.variables}
        if bindings:
            names.update(bindings)
        body = _codegen(self.tree, names)
        src = f"def _f({', '.join(argnames)}):\n    return {body}\n"
        ns: dict = {"np": np}
        exec(compile(src, f"<expr {self.source!r}>", "exec"), ns)
        return ns["_f"]

    def evaluate(self, **env):
        with np.errstate(all="ignore"):
            return self.compile(tuple(env))(**env)

    @property
    def is_constant(self) -> bool:
        return isinstance(self.tree, Num)


def parse_expression(source: str, variables: Iterable[str]) -> Expression:
    variables = tuple(variables)
    tree = _Parser(tokenize(source), frozenset(variables)).parse()
    return Expression(source, _fold(tree), variables)


def rhs_variables(dimension: int, disturbance_dim: int) -> tuple[str, ...]:
    return ("t",) + tuple(f"x{i}" for i in range(1, dimension + 1)) + tuple(
        f"d{j}" for j in range(1, disturbance_dim + 1)
    )


def parse_rhs(source: str, dimension: int, disturbance_dim: int) -> Expression:
    """Parse one coordinate of an ODE right-hand side over ``t, x1..xn, d1..dm``."""
    return parse_expression(source, rhs_variables(dimension, disturbance_dim))


def compile_vector_field(sources: list[str], dimension: int, disturbance_dim: int) -> Callable:
    """Compile a list of coordinate expressions into ``f(t, x, d) -> list``."""
    if len(sources) != dimension:
        raise ValueError(f"expected {dimension} right-hand side expressions, got {len(sources)}")
    exprs = [parse_rhs(s, dimension, disturbance_dim) for s in sources]
    bindings = {"t": "t"}
    for i in range(dimension):
        bindings[f"x{i + 1}"] = f"x[{i}]"
    for j in range(disturbance_dim):
        bindings[f"d{j + 1}"] = f"d[{j}]"
    bodies = [_codegen(e.tree, bindings) for e in exprs]
    src = "def _f(t, x, d):\n    return [" + ", ".join(bodies) + "]\n"
    ns: dict = {"np": np}
    exec(compile(src, "<rhs>", "exec"), ns)
    return ns["_f"]
