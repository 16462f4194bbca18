"""Scalar expression graphs with symbolic reverse-mode differentiation.

Every quantity in a PINN problem (network output, residual, loss term) is an
``ExprNode`` living in an append-only ``Graph``.  ``derive`` returns new graph
nodes rather than numbers, so derivatives can themselves be differentiated:
the residual needs input-derivatives of the network and training needs the
weight-gradient of that residual.

Values bound to variables may be floats or 1-d numpy arrays; an array binding
evaluates the same scalar graph independently at every entry.
"""
from __future__ import annotations

import math
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

CONST, VAR, ADD, SUB, MUL, DIV, NEG, POW, TANH, SIN, COS, EXP = range(12)

OP_NAMES = {
    "const": CONST, "var": VAR, "add": ADD, "sub": SUB, "mul": MUL, "div": DIV,
    "neg": NEG, "pow_const": POW, "tanh": TANH, "sin": SIN, "cos": COS, "exp": EXP,
}
ARITY = {CONST: 0, VAR: 0, ADD: 2, SUB: 2, MUL: 2, DIV: 2, NEG: 1, POW: 1,
         TANH: 1, SIN: 1, COS: 1, EXP: 1}
_COMMUTATIVE = (ADD, MUL)


class AutodiffError(Exception):
    pass


class DuplicateKeyError(AutodiffError):
    pass


class ArityError(AutodiffError):
    pass


class ForeignNodeError(AutodiffError):
    pass


class NotAVariableError(AutodiffError):
    pass


class UnboundVariableError(AutodiffError):
    def __init__(self, key):
        super().__init__(f"unbound variable {key!r}")
        self.key = key


class NonFiniteError(AutodiffError):
    def __init__(self, node_id: int, where: str = ""):
        msg = f"non-finite value at node {node_id}"
        super().__init__(msg + (f" ({where})" if where else ""))
        self.node_id = node_id


class ExprNode:
    """Handle to one node of a Graph; supports arithmetic with nodes and numbers."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: "Graph", id: int):
        self.graph = graph
        self.id = id

    @property
    def op(self) -> int:
        return self.graph.ops[self.id]

    @property
    def parents(self) -> tuple[int, ...]:
        return self.graph.args[self.id]

    @property
    def key(self):
        return self.graph.keys[self.id]

    def __repr__(self):
        return f"ExprNode({self.id}, {_op_label(self.op)})"

    def __eq__(self, other):
        return isinstance(other, ExprNode) and other.graph is self.graph and other.id == self.id

    def __hash__(self):
        return hash((id(self.graph), self.id))

    def _lift(self, other) -> "ExprNode":
        if isinstance(other, ExprNode):
            return other
        return self.graph.const(float(other))

    def __add__(self, other):
        return self.graph.apply(ADD, self, self._lift(other))

    def __radd__(self, other):
        return self.graph.apply(ADD, self._lift(other), self)

    def __sub__(self, other):
        return self.graph.apply(SUB, self, self._lift(other))

    def __rsub__(self, other):
        return self.graph.apply(SUB, self._lift(other), self)

    def __mul__(self, other):
        return self.graph.apply(MUL, self, self._lift(other))

    def __rmul__(self, other):
        return self.graph.apply(MUL, self._lift(other), self)

    def __truediv__(self, other):
        return self.graph.apply(DIV, self, self._lift(other))

    def __rtruediv__(self, other):
        return self.graph.apply(DIV, self._lift(other), self)

    def __neg__(self):
        return self.graph.apply(NEG, self)

    def __pow__(self, exponent):
        if isinstance(exponent, ExprNode):
            raise AutodiffError("exponent must be a compile-time constant")
        return self.graph.pow_const(self, float(exponent))


def _op_label(op: int) -> str:
    for name, code in OP_NAMES.items():
        if code == op:
            return name
    return str(op)


def _const_key(value: float) -> str:
    return float(value).hex()


class Graph:
    """Append-only arena of scalar expression nodes.

    Node construction interns structurally identical nodes and applies a few
    identity rewrites (``x+0``, ``x*1``, ``x*0``, constant folding of finite
    results).  Interning keeps nested derivatives from duplicating shared
    subexpressions such as ``1 - tanh(z)**2``.
    """

    def __init__(self):
        self.ops: list[int] = []
        self.args: list[tuple[int, ...]] = []
        self.consts: list[float] = []
        self.keys: list = []
        self.bindings: dict = {}
        self._vars: dict = {}
        self._intern: dict = {}

    def __len__(self):
        return len(self.ops)

    def node(self, id: int) -> ExprNode:
        return ExprNode(self, id)

    def _append(self, op, args, c, key=None) -> ExprNode:
        self.ops.append(op)
        self.args.append(args)
        self.consts.append(c)
        self.keys.append(key)
        return ExprNode(self, len(self.ops) - 1)

    # -- construction ---------------------------------------------------
    def var(self, key: Hashable, value: float | None = None) -> ExprNode:
        if key in self._vars:
            raise DuplicateKeyError(f"variable {key!r} already registered")
        n = self._append(VAR, (), 0.0, key)
        self._vars[key] = n.id
        if value is not None:
            self.bindings[key] = value
        return n

    def lookup(self, key: Hashable) -> ExprNode:
        return ExprNode(self, self._vars[key])

    def has_var(self, key: Hashable) -> bool:
        return key in self._vars

    def bind(self, key: Hashable, value) -> None:
        if key not in self._vars:
            raise UnboundVariableError(key)
        self.bindings[key] = value

    def const(self, value: float) -> ExprNode:
        value = float(value)
        ik = (CONST, (), _const_key(value))
        hit = self._intern.get(ik)
        if hit is not None:
            return ExprNode(self, hit)
        n = self._append(CONST, (), value)
        self._intern[ik] = n.id
        return n

    def _is_const(self, i: int, value: float | None = None) -> bool:
        if self.ops[i] != CONST:
            return False
        return value is None or self.consts[i] == value

    def pow_const(self, base: ExprNode, exponent: float) -> ExprNode:
        return self.apply(POW, base, exponent=exponent)

    def apply(self, op, *operands: ExprNode, exponent: float | None = None) -> ExprNode:
        """Create (or reuse) the node ``op(operands)``."""
        if isinstance(op, str):
            if op not in OP_NAMES:
                raise AutodiffError(f"unknown op {op!r}")
            op = OP_NAMES[op]
        if len(operands) == 1 and isinstance(operands[0], (list, tuple)):
            operands = tuple(operands[0])
        if op in (CONST, VAR):
            raise ArityError("use Graph.const / Graph.var for leaves")
        if len(operands) != ARITY[op]:
            raise ArityError(f"{_op_label(op)} takes {ARITY[op]} operands, got {len(operands)}")
        for o in operands:
            if not isinstance(o, ExprNode) or o.graph is not self:
                raise ForeignNodeError(f"operand {o!r} does not belong to this graph")
        if op == POW:
            if exponent is None:
                raise AutodiffError("pow_const requires an exponent")
            c = float(exponent)
        else:
            c = 0.0
        ids = tuple(o.id for o in operands)
        return self._make(op, ids, c)

    def _make(self, op: int, ids: tuple[int, ...], c: float = 0.0) -> ExprNode:
        simplified = self._simplify(op, ids, c)
        if simplified is not None:
            return simplified
        if op in _COMMUTATIVE and ids[0] > ids[1]:
            ids = (ids[1], ids[0])
        ik = (op, ids, _const_key(c))
        hit = self._intern.get(ik)
        if hit is not None:
            return ExprNode(self, hit)
        n = self._append(op, ids, c)
        self._intern[ik] = n.id
        return n

    def _simplify(self, op, ids, c):
        isc = self._is_const
        if all(isc(i) for i in ids):
            vals = [self.consts[i] for i in ids]
            with np.errstate(all="ignore"):
                v = _apply_numeric(op, vals, c)
            if math.isfinite(v):
                return self.const(v)
            return None
        if op == ADD:
            a, b = ids
            if isc(a, 0.0):
                return ExprNode(self, b)
            if isc(b, 0.0):
                return ExprNode(self, a)
        elif op == SUB:
            a, b = ids
            if isc(b, 0.0):
                return ExprNode(self, a)
            if isc(a, 0.0):
                return self._make(NEG, (b,))
            if a == b:
                return self.const(0.0)
        elif op == MUL:
            a, b = ids
            if isc(a, 0.0) or isc(b, 0.0):
                return self.const(0.0)
            if isc(a, 1.0):
                return ExprNode(self, b)
            if isc(b, 1.0):
                return ExprNode(self, a)
            if isc(a, -1.0):
                return self._make(NEG, (b,))
            if isc(b, -1.0):
                return self._make(NEG, (a,))
        elif op == DIV:
            a, b = ids
            if isc(b, 1.0):
                return ExprNode(self, a)
            if isc(a, 0.0) and not isc(b, 0.0):
                return self.const(0.0)
        elif op == NEG:
            (a,) = ids
            if self.ops[a] == NEG:
                return ExprNode(self, self.args[a][0])
        elif op == POW:
            (a,) = ids
            if c == 1.0:
                return ExprNode(self, a)
            if c == 0.0:
                return self.const(1.0)
        return None

    # -- evaluation -----------------------------------------------------
    def reachable(self, outputs: Iterable[int]) -> list[int]:
        """Ids of all nodes reachable from ``outputs``, ascending (topological)."""
        seen = set()
        stack = list(outputs)
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self.args[i])
        return sorted(seen)

    def eval(self, node: ExprNode | Sequence[ExprNode], bindings: Mapping | None = None,
             check_finite: bool = True):
        """Evaluate ``node`` (or a list of nodes) by one forward sweep."""
        single = isinstance(node, ExprNode)
        nodes = [node] if single else list(node)
        for n in nodes:
            if n.graph is not self:
                raise ForeignNodeError("node belongs to another graph")
        vals = self._forward([n.id for n in nodes], bindings, check_finite)
        out = [vals[n.id] for n in nodes]
        return out[0] if single else out

    def _forward(self, out_ids, bindings, check_finite=True) -> dict:
        env = dict(self.bindings)
        if bindings:
            env.update(bindings)
        vals: dict = {}
        with np.errstate(all="ignore"):
            for i in self.reachable(out_ids):
                op = self.ops[i]
                if op == CONST:
                    v = self.consts[i]
                elif op == VAR:
                    key = self.keys[i]
                    if key not in env:
                        raise UnboundVariableError(key)
                    v = env[key]
                    if isinstance(v, (list, tuple)):
                        v = np.asarray(v, dtype=float)
                else:
                    v = _apply_numeric(op, [vals[j] for j in self.args[i]], self.consts[i])
                if check_finite and not np.all(np.isfinite(v)):
                    raise NonFiniteError(i)
                vals[i] = v
        return vals


def _apply_numeric(op, a, c):
    if op == ADD:
        return a[0] + a[1]
    if op == SUB:
        return a[0] - a[1]
    if op == MUL:
        return a[0] * a[1]
    if op == DIV:
        x, y = a
        if np.ndim(x) == 0 and np.ndim(y) == 0:
            if y == 0:
                return math.copysign(math.inf, x) if x != 0 else math.nan
            return x / y
        return np.divide(x, y)
    if op == NEG:
        return -a[0]
    if op == POW:
        return np.power(a[0], c) if np.ndim(a[0]) else _scalar_pow(a[0], c)
    if op == TANH:
        return np.tanh(a[0])
    if op == SIN:
        return np.sin(a[0])
    if op == COS:
        return np.cos(a[0])
    if op == EXP:
        return np.exp(a[0])
    raise AutodiffError(f"cannot apply op {op}")


def _scalar_pow(x, c):
    try:
        return float(np.power(float(x), c))
    except (OverflowError, ZeroDivisionError):
        return math.nan


# -- module-level API ---------------------------------------------------------
def new_var(graph: Graph, key: Hashable, value: float | None = None) -> ExprNode:
    return graph.var(key, value)


def apply(graph: Graph, op, operands: Sequence[ExprNode], exponent: float | None = None) -> ExprNode:
    return graph.apply(op, *operands, exponent=exponent)


def evaluate(graph: Graph, node, bindings: Mapping | None = None):
    return graph.eval(node, bindings)


def tanh(x: ExprNode) -> ExprNode:
    return x.graph.apply(TANH, x)


def sin(x: ExprNode) -> ExprNode:
    return x.graph.apply(SIN, x)


def cos(x: ExprNode) -> ExprNode:
    return x.graph.apply(COS, x)


def exp(x: ExprNode) -> ExprNode:
    return x.graph.apply(EXP, x)


def _check_wrt(graph: Graph, wrt: Sequence[ExprNode]) -> None:
    for w in wrt:
        if not isinstance(w, ExprNode) or w.graph is not graph:
            raise ForeignNodeError(f"{w!r} does not belong to this graph")
        if graph.ops[w.id] != VAR:
            raise NotAVariableError(f"can only differentiate with respect to var nodes, got {w!r}")


def _active(graph: Graph, order: list[int], wrt_ids: set[int]) -> set[int]:
    active = set()
    for i in order:
        if i in wrt_ids or any(p in active for p in graph.args[i]):
            active.add(i)
    return active


def derive(graph: Graph, output: ExprNode, wrt: Sequence[ExprNode]) -> list[ExprNode]:
    """Symbolic gradient of ``output`` w.r.t. each var in ``wrt``.

    The reverse sweep builds every adjoint out of graph primitives, so the
    returned nodes can be passed back into ``derive``.  Only nodes lying on a
    path from some ``wrt`` to ``output`` receive adjoints.
    """
    if isinstance(wrt, ExprNode):
        wrt = [wrt]
    _check_wrt(graph, wrt)
    if output.graph is not graph:
        raise ForeignNodeError("output belongs to another graph")
    order = graph.reachable([output.id])
    active = _active(graph, order, {w.id for w in wrt})
    adj: dict[int, ExprNode] = {}
    if output.id in active:
        adj[output.id] = graph.const(1.0)
    mk = graph._make
    for i in reversed(order):
        g = adj.get(i)
        if g is None or graph.ops[i] in (CONST, VAR):
            continue
        op = graph.ops[i]
        args = graph.args[i]
        self_node = ExprNode(graph, i)
        contrib: list[tuple[int, ExprNode]] = []
        if op == ADD:
            contrib = [(args[0], g), (args[1], g)]
        elif op == SUB:
            contrib = [(args[0], g), (args[1], -g)]
        elif op == MUL:
            a, b = args
            contrib = [(a, g * ExprNode(graph, b)), (b, g * ExprNode(graph, a))]
        elif op == DIV:
            a, b = args
            bn = ExprNode(graph, b)
            ga = g / bn
            contrib = [(a, ga), (b, -(ga * self_node))]
        elif op == NEG:
            contrib = [(args[0], -g)]
        elif op == POW:
            c = graph.consts[i]
            xa = ExprNode(graph, args[0])
            contrib = [(args[0], g * (graph.pow_const(xa, c - 1.0) * c))]
        elif op == TANH:
            contrib = [(args[0], g * (1.0 - self_node * self_node))]
        elif op == SIN:
            contrib = [(args[0], g * cos(ExprNode(graph, args[0])))]
        elif op == COS:
            contrib = [(args[0], -(g * sin(ExprNode(graph, args[0]))))]
        elif op == EXP:
            contrib = [(args[0], g * self_node)]
        for p, c in contrib:
            if p not in active:
                continue
            prev = adj.get(p)
            adj[p] = c if prev is None else mk(ADD, (prev.id, c.id))
    zero = None
    out = []
    for w in wrt:
        if w.id in adj:
            out.append(adj[w.id])
        else:
            zero = zero or graph.const(0.0)
            out.append(zero)
    return out


def derive_many(graph: Graph, output: ExprNode, wrt: Sequence[ExprNode],
                bindings: Mapping | None = None) -> np.ndarray:
    """Numeric gradient of ``output`` w.r.t. many vars in one reverse sweep.

    With array bindings the result is the gradient of the sum of ``output``
    over all entries.
    """
    _check_wrt(graph, wrt)
    vals = graph._forward([output.id], bindings)
    order = graph.reachable([output.id])
    active = _active(graph, order, {w.id for w in wrt})
    adj: dict[int, object] = {}
    if output.id in active:
        adj[output.id] = np.ones_like(vals[output.id], dtype=float) if np.ndim(vals[output.id]) else 1.0
    with np.errstate(all="ignore"):
        for i in reversed(order):
            if i not in adj or graph.ops[i] in (CONST, VAR):
                continue
            g = adj[i]
            op = graph.ops[i]
            args = graph.args[i]
            v = vals[i]
            if op == ADD:
                contrib = [(args[0], g), (args[1], g)]
            elif op == SUB:
                contrib = [(args[0], g), (args[1], -g)]
            elif op == MUL:
                contrib = [(args[0], g * vals[args[1]]), (args[1], g * vals[args[0]])]
            elif op == DIV:
                ga = g / vals[args[1]]
                contrib = [(args[0], ga), (args[1], -ga * v)]
            elif op == NEG:
                contrib = [(args[0], -g)]
            elif op == POW:
                c = graph.consts[i]
                contrib = [(args[0], g * c * np.power(vals[args[0]], c - 1.0))]
            elif op == TANH:
                contrib = [(args[0], g * (1.0 - v * v))]
            elif op == SIN:
                contrib = [(args[0], g * np.cos(vals[args[0]]))]
            elif op == COS:
                contrib = [(args[0], -g * np.sin(vals[args[0]]))]
            else:
                contrib = [(args[0], g * v)]
            for p, c in contrib:
                if p in active:
                    adj[p] = c if p not in adj else adj[p] + c
    grad = np.zeros(len(wrt))
    for j, w in enumerate(wrt):
        if w.id in adj:
            grad[j] = np.sum(adj[w.id])
    return grad
