"""A small expression language for strong-form PDE residuals.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := number | identifier | func '(' expr ')' | '(' expr ')'

``^`` binds tighter than unary minus (``-x^2`` is ``-(x^2)``) and is right
associative.  Identifiers resolve to a domain dimension, the solution ``u``,
a derivative ``u_<dims>`` (e.g. ``u_xx``, ``u_xt``; order at most 2), a
declared parameter, or the constant ``pi``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ExprNode, Graph

FUNCS = ("tanh", "sin", "cos", "exp")
CONSTANTS = {"pi": math.pi}
MAX_ORDER = 2


class DSLError(Exception):
    def __init__(self, message: str, pos: int | None = None):
        self.pos = pos
        self.message = message
        where = f" at column {pos + 1}" if pos is not None else ""
        super().__init__(f"{message}{where}")


class DSLSyntaxError(DSLError):
    def __init__(self, message: str, pos: int, expected: Sequence[str] = ()):
        self.expected = tuple(expected)
        if expected:
            message = f"{message}; expected {', '.join(expected)}"
        super().__init__(message, pos)


class UnknownIdentifierError(DSLError):
    pass


class DerivativeOrderError(DSLError):
    pass


class UnknownDimensionError(DSLError):
    pass


class ExponentError(DSLError):
    pass


# -- AST -------------------------------------------------------------------------
@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Dim:
    name: str


@dataclass(frozen=True)
class U:
    pass


@dataclass(frozen=True)
class Deriv:
    dims: tuple[str, ...]


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    fn: str
    arg: object


# -- lexer -----------------------------------------------------------------------
_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    toks = []
    i = 0
    while i < len(text):
        m = _TOKEN.match(text, i)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {text[i]!r}", i)
        kind = m.lastgroup
        if kind != "ws":
            if kind == "num" and not math.isfinite(float(m.group())):
                raise DSLSyntaxError("numeric literal out of range", i)
            toks.append(Token(kind, m.group(), i))
        i = m.end()
    toks.append(Token("eof", "", len(text)))
    return toks


# -- parser ----------------------------------------------------------------------
class _Parser:
    def __init__(self, text, dims, params, allow_u):
        self.toks = tokenize(text)
        self.i = 0
        self.dims = list(dims)
        self.params = set(params)
        self.allow_u = allow_u

    def peek(self) -> Token:
        return self.toks[self.i]

    def take(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        t = self.peek()
        if t.text != text or t.kind != "op":
            raise DSLSyntaxError(f"unexpected {_describe(t)}", t.pos, [repr(text)])
        return self.take()

    def parse(self):
        if self.peek().kind == "eof":
            raise DSLSyntaxError("empty expression", 0, ["an expression"])
        node = self.expr()
        t = self.peek()
        if t.kind != "eof":
            raise DSLSyntaxError(f"unexpected {_describe(t)}", t.pos,
                                 ["an operator", "end of input"])
        return node

    def expr(self):
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            t = self.take()
            node = BinOp(t.text, node, self.term(), t.pos)
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            t = self.take()
            node = BinOp(t.text, node, self.unary(), t.pos)
        return node

    def unary(self):
        t = self.peek()
        if t.kind == "op" and t.text == "-":
            self.take()
            return Neg(self.unary(), t.pos)
        return self.power()

    def power(self):
        base = self.atom()
        t = self.peek()
        if t.kind == "op" and t.text == "^":
            self.take()
            return BinOp("^", base, self.unary(), t.pos)
        return base

    def atom(self):
        t = self.take()
        if t.kind == "num":
            return Num(float(t.text))
        if t.kind == "op" and t.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        if t.kind == "ident":
            if t.text in FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(t.text, arg)
            return self.resolve(t)
        raise DSLSyntaxError(f"unexpected {_describe(t)}", t.pos,
                             ["a number", "an identifier", "'('", "'-'"])

    def resolve(self, t: Token):
        name = t.text
        if name == "u" or name.startswith("u_"):
            if not self.allow_u:
                raise UnknownIdentifierError(
                    f"{name!r} is not allowed here (condition functions cannot reference u)", t.pos)
            if name == "u":
                return U()
            return Deriv(self.split_suffix(name[2:], t.pos))
        if name in self.dims:
            return Dim(name)
        if name in self.params:
            return Param(name)
        if name in CONSTANTS:
            return Const(name)
        raise UnknownIdentifierError(f"unknown identifier {name!r}", t.pos)

    def split_suffix(self, suffix: str, pos: int) -> tuple[str, ...]:
        # shortest way of writing ``suffix`` as dimension names, plus whether
        # more than one way exists
        n = len(suffix)
        best: list[tuple[str, ...] | None] = [None] * (n + 1)
        count = [0] * (n + 1)
        best[0], count[0] = (), 1
        for i in range(n):
            if best[i] is None:
                continue
            for d in self.dims:
                if suffix.startswith(d, i):
                    j = i + len(d)
                    cand = best[i] + (d,)
                    count[j] = min(2, count[j] + count[i])
                    if best[j] is None or len(cand) < len(best[j]):
                        best[j] = cand
        split = best[n]
        if split is None or not suffix:
            raise UnknownDimensionError(
                f"derivative suffix {suffix!r} does not name known dimensions {self.dims}", pos)
        if len(split) > MAX_ORDER:
            raise DerivativeOrderError(
                f"derivative u_{suffix} has order {len(split)}; at most {MAX_ORDER} is supported", pos)
        if count[n] > 1:
            raise UnknownDimensionError(f"ambiguous derivative suffix {suffix!r}", pos)
        return split


def _describe(t: Token) -> str:
    return "end of input" if t.kind == "eof" else repr(t.text)


@dataclass(frozen=True)
class ResidualExpr:
    ast: object
    text: str
    dims: tuple[str, ...]
    params: tuple[str, ...] = ()

    def pretty(self) -> str:
        return pretty(self.ast)


def parse(text: str, dims: Sequence[str], params: Sequence[str] = (),
          allow_u: bool = True) -> ResidualExpr:
    """Parse ``text`` against dimension names (or a Domain) and declared params."""
    if hasattr(dims, "names"):
        dims = dims.names
    if not isinstance(text, str):
        raise DSLSyntaxError("expression must be text", 0)
    ast = _Parser(text, dims, params, allow_u).parse()
    return ResidualExpr(ast, text, tuple(dims), tuple(params))


def free_parameters(expr: ResidualExpr | object) -> list[str]:
    root = expr.ast if isinstance(expr, ResidualExpr) else expr
    found = set()

    def walk(n):
        if isinstance(n, Param):
            found.add(n.name)
        elif isinstance(n, Neg):
            walk(n.operand)
        elif isinstance(n, BinOp):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Call):
            walk(n.arg)

    walk(root)
    return sorted(found)


def references(expr: ResidualExpr | object) -> set[str]:
    """Dimension names referenced directly (not through derivatives)."""
    root = expr.ast if isinstance(expr, ResidualExpr) else expr
    found = set()

    def walk(n):
        if isinstance(n, Dim):
            found.add(n.name)
        elif isinstance(n, Neg):
            walk(n.operand)
        elif isinstance(n, BinOp):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Call):
            walk(n.arg)

    walk(root)
    return found


# -- pretty printer ---------------------------------------------------------------
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(n) -> int:
    if isinstance(n, BinOp):
        return _PREC[n.op]
    if isinstance(n, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt_num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def pretty(n) -> str:
    if isinstance(n, ResidualExpr):
        n = n.ast
    if isinstance(n, Num):
        return _fmt_num(n.value)
    if isinstance(n, (Const, Dim, Param)):
        return n.name
    if isinstance(n, U):
        return "u"
    if isinstance(n, Deriv):
        return "u_" + "".join(n.dims)
    if isinstance(n, Call):
        return f"{n.fn}({pretty(n.arg)})"
    if isinstance(n, Neg):
        inner = pretty(n.operand)
        if _prec(n.operand) < _PREC["neg"]:
            inner = f"({inner})"
        return "-" + inner
    if isinstance(n, BinOp):
        p = _PREC[n.op]
        left, right = pretty(n.left), pretty(n.right)
        if n.op == "^":
            if _prec(n.left) < _PREC["atom"]:
                left = f"({left})"
            if _prec(n.right) < _PREC["neg"]:
                right = f"({right})"
            return f"{left}^{right}"
        if _prec(n.left) < p:
            left = f"({left})"
        if _prec(n.right) <= p:
            right = f"({right})"
        return f"{left} {n.op} {right}"
    raise TypeError(f"not an AST node: {n!r}")


# -- numeric evaluation (u-free expressions) -------------------------------------
_NP_FUNCS = {"tanh": np.tanh, "sin": np.sin, "cos": np.cos, "exp": np.exp}


def eval_numpy(n, env: Mapping[str, object]):
    """Evaluate an AST without ``u`` against named values (floats or arrays)."""
    if isinstance(n, ResidualExpr):
        n = n.ast
    if isinstance(n, Num):
        return n.value
    if isinstance(n, Const):
        return CONSTANTS[n.name]
    if isinstance(n, (Dim, Param)):
        return env[n.name]
    if isinstance(n, (U, Deriv)):
        raise DSLError("cannot evaluate u numerically")
    if isinstance(n, Neg):
        return -eval_numpy(n.operand, env)
    if isinstance(n, Call):
        return _NP_FUNCS[n.fn](eval_numpy(n.arg, env))
    a, b = eval_numpy(n.left, env), eval_numpy(n.right, env)
    if n.op == "+":
        return a + b
    if n.op == "-":
        return a - b
    if n.op == "*":
        return a * b
    if n.op == "/":
        return a / b
    return np.power(a, b)


def _constant_value(n):
    """Numeric value of a subtree built only from literals and named constants."""
    if isinstance(n, (Num, Const)):
        return eval_numpy(n, {})
    if isinstance(n, Neg):
        v = _constant_value(n.operand)
        return None if v is None else -v
    if isinstance(n, Call):
        v = _constant_value(n.arg)
        return None if v is None else float(_NP_FUNCS[n.fn](v))
    if isinstance(n, BinOp):
        a, b = _constant_value(n.left), _constant_value(n.right)
        if a is None or b is None:
            return None
        return float(eval_numpy(BinOp(n.op, Num(a), Num(b)), {}))
    return None


# -- compilation to graph nodes ----------------------------------------------------
@dataclass
class ParamSet:
    names: list[str]
    values: np.ndarray
    trainable: list[bool]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(set(self.names)) != len(self.names):
            raise ValueError("parameter names must be unique")
        if not (len(self.names) == len(self.values) == len(self.trainable)):
            raise ValueError("names, values and trainable flags must have equal length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter values must be finite")

    @classmethod
    def empty(cls) -> "ParamSet":
        return cls([], np.zeros(0), [])

    @property
    def trainable_names(self) -> list[str]:
        return [n for n, t in zip(self.names, self.trainable) if t]

    def value(self, name: str) -> float:
        return float(self.values[self.names.index(name)])


def param_key(name: str) -> tuple:
    return ("param", name)


def compile_expr(expr: ResidualExpr, params: ParamSet | None,
                 u_forward: Callable[[Sequence[ExprNode]], ExprNode] | None,
                 graph: Graph, point_vars: Sequence[ExprNode] | Mapping[str, ExprNode]) -> ExprNode:
    """Lower ``expr`` to a graph node at the given point variables.

    ``u`` becomes ``u_forward(point_vars)``; ``u_<dims>`` becomes nested
    ``derive`` calls in suffix order; trainable parameters become graph
    variables keyed ``("param", name)`` and fixed ones become constants.
    """
    if isinstance(point_vars, Mapping):
        pv = dict(point_vars)
        ordered = [pv[d] for d in expr.dims]
    else:
        ordered = list(point_vars)
        pv = dict(zip(expr.dims, ordered))
    params = params or ParamSet.empty()
    cache: dict = {}

    def solution(dims: tuple[str, ...]) -> ExprNode:
        if dims in cache:
            return cache[dims]
        if not dims:
            if u_forward is None:
                raise DSLError("expression references u but no solution was supplied")
            node = u_forward(ordered)
        else:
            (node,) = ad.derive(graph, solution(dims[:-1]), [pv[dims[-1]]])
        cache[dims] = node
        return node

    def param(name: str) -> ExprNode:
        i = params.names.index(name) if name in params.names else -1
        if i < 0:
            raise UnknownIdentifierError(f"no value supplied for parameter {name!r}")
        if not params.trainable[i]:
            return graph.const(params.values[i])
        key = param_key(name)
        if graph.has_var(key):
            return graph.lookup(key)
        return graph.var(key, float(params.values[i]))

    def lower(n) -> ExprNode:
        if isinstance(n, Num):
            return graph.const(n.value)
        if isinstance(n, Const):
            return graph.const(CONSTANTS[n.name])
        if isinstance(n, Dim):
            return pv[n.name]
        if isinstance(n, U):
            return solution(())
        if isinstance(n, Deriv):
            return solution(n.dims)
        if isinstance(n, Param):
            return param(n.name)
        if isinstance(n, Neg):
            return -lower(n.operand)
        if isinstance(n, Call):
            return getattr(ad, n.fn)(lower(n.arg))
        if n.op == "^":
            return lower_pow(n)
        a, b = lower(n.left), lower(n.right)
        return {"+": a.__add__, "-": a.__sub__, "*": a.__mul__, "/": a.__truediv__}[n.op](b)

    def lower_pow(n: BinOp) -> ExprNode:
        e = _constant_value(n.right)
        if e is None:
            raise ExponentError("exponent must be a constant expression", n.pos)
        base_const = _constant_value(n.left)
        if base_const is not None:
            return graph.const(float(np.power(base_const, e)))
        base = lower(n.left)
        if float(e).is_integer():
            k = int(e)
            if 0 <= k <= 4:
                if k == 0:
                    return graph.const(1.0)
                if k == 4:
                    sq = base * base
                    return sq * sq
                out = base
                for _ in range(k - 1):
                    out = out * base
                return out
            return graph.pow_const(base, float(k))
        raise ExponentError(f"non-integer exponent {e!r} on a non-constant base", n.pos)

    return lower(expr.ast)

