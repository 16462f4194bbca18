"""Initial and boundary conditions as squared-mismatch loss terms."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import ExprNode, Graph, derive
from .domain import (TEMPORAL, Domain, DomainError, PointSet, sample_boundary, sample_initial)
from .dsl import ResidualExpr, compile_expr, eval_numpy, parse

UForward = Callable[[Sequence[ExprNode]], ExprNode]

_serial = itertools.count()


class ConditionError(ValueError):
    pass


@dataclass(frozen=True)
class ConditionFn:
    """A u-free scalar expression over the domain's dimension names."""
    expr: ResidualExpr

    @classmethod
    def parse(cls, text: str, domain: Domain) -> "ConditionFn":
        return cls(parse(text, domain.names, allow_u=False))

    @property
    def text(self) -> str:
        return self.expr.text

    def __call__(self, points: np.ndarray, domain: Domain) -> np.ndarray:
        pts = np.atleast_2d(points)
        env = {name: pts[:, i] for i, name in enumerate(domain.names)}
        with np.errstate(all="ignore"):
            out = eval_numpy(self.expr, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],)).copy()

    def node(self, graph: Graph, point: Sequence[ExprNode]) -> ExprNode:
        return compile_expr(self.expr, None, None, graph, point)


@dataclass(frozen=True)
class InitialCondition:
    fn: ConditionFn
    n_points: int | None = None
    seed: int | None = None

    def sample(self, domain: Domain, n_default: int = 100, seed_default: int = 0) -> PointSet:
        if domain.temporal is None:
            raise ConditionError("initial condition given but the domain has no temporal dimension")
        n = self.n_points if self.n_points is not None else n_default
        if n < 0:
            raise ConditionError("n_points must be >= 0")
        return sample_initial(domain, n, self.seed if self.seed is not None else seed_default)

    def targets(self, points: np.ndarray, domain: Domain) -> np.ndarray:
        return self.fn(points, domain)


@dataclass(frozen=True)
class DirichletBC:
    dim: str
    side: str
    value: float | ConditionFn = 0.0
    n_points: int | None = None
    seed: int | None = None

    def sample(self, domain: Domain, n_default: int = 100, seed_default: int = 0) -> PointSet:
        _check_spatial(domain, self.dim)
        n = self.n_points if self.n_points is not None else n_default
        try:
            return sample_boundary(domain, self.dim, self.side, n,
                                   self.seed if self.seed is not None else seed_default)
        except DomainError as exc:
            raise ConditionError(str(exc)) from exc

    def targets(self, points: np.ndarray, domain: Domain) -> np.ndarray:
        if isinstance(self.value, ConditionFn):
            return self.value(points, domain)
        return np.full(np.atleast_2d(points).shape[0], float(self.value))


@dataclass(frozen=True)
class PeriodicBC:
    dim: str
    match_orders: frozenset = frozenset({0, 1})
    n_points: int | None = None
    seed: int | None = None

    def __post_init__(self):
        orders = frozenset(self.match_orders)
        if not orders or not orders <= {0, 1}:
            raise ConditionError("match_orders must be a non-empty subset of {0, 1}")
        object.__setattr__(self, "match_orders", orders)

    def sample(self, domain: Domain, n_default: int = 100, seed_default: int = 0):
        """Matched (lower-face, upper-face) point sets."""
        _check_spatial(domain, self.dim)
        n = self.n_points if self.n_points is not None else n_default
        lo = sample_boundary(domain, self.dim, "lower", n,
                             self.seed if self.seed is not None else seed_default)
        hi_pts = lo.points.copy()
        hi_pts[:, domain.index(self.dim)] = domain[self.dim].upper
        return lo, PointSet(hi_pts, "boundary", (self.dim, "upper"))


Condition = InitialCondition | DirichletBC | PeriodicBC


def _check_spatial(domain: Domain, name: str) -> None:
    if name not in domain.names:
        raise ConditionError(f"unknown dimension {name!r}")
    if domain[name].kind == TEMPORAL:
        raise ConditionError(f"{name!r} is temporal; boundary conditions need a spatial dimension")


# -- term builders shared by the list API and the solver's batched templates ------
def squared_mismatch(value: ExprNode, target: ExprNode | float) -> ExprNode:
    d = value - target
    return d * d


def periodic_pair(u_forward: UForward, lo: Sequence[ExprNode], hi: Sequence[ExprNode],
                  dim_index: int, orders) -> list[ExprNode]:
    """Order-0 and/or order-1 matching terms for one lower/upper point pair."""
    ulo, uhi = u_forward(lo), u_forward(hi)
    terms = []
    if 0 in orders:
        terms.append(squared_mismatch(ulo, uhi))
    if 1 in orders:
        (dlo,) = derive(ulo.graph, ulo, [lo[dim_index]])
        (dhi,) = derive(uhi.graph, uhi, [hi[dim_index]])
        terms.append(squared_mismatch(dlo, dhi))
    return terms


def _point_nodes(graph: Graph, row: np.ndarray, tag: str, as_vars=()) -> list[ExprNode]:
    serial = next(_serial)
    nodes = []
    for j, v in enumerate(row):
        if j in as_vars:
            nodes.append(graph.var((tag, serial, j), float(v)))
        else:
            nodes.append(graph.const(float(v)))
    return nodes


def ic_terms(ic: InitialCondition, domain: Domain, u_forward: UForward, graph: Graph,
             n_default: int = 100, seed_default: int = 0) -> list[ExprNode]:
    ps = ic.sample(domain, n_default, seed_default)
    targets = ic.targets(ps.points, domain)
    return [squared_mismatch(u_forward(_point_nodes(graph, p, "ic")), float(h))
            for p, h in zip(ps.points, targets)]


def dirichlet_terms(bc: DirichletBC, domain: Domain, u_forward: UForward, graph: Graph,
                    n_default: int = 100, seed_default: int = 0) -> list[ExprNode]:
    ps = bc.sample(domain, n_default, seed_default)
    targets = bc.targets(ps.points, domain)
    return [squared_mismatch(u_forward(_point_nodes(graph, p, "bc")), float(g))
            for p, g in zip(ps.points, targets)]


def periodic_terms(bc: PeriodicBC, domain: Domain, u_forward: UForward, graph: Graph,
                   n_default: int = 100, seed_default: int = 0) -> list[ExprNode]:
    lo, hi = bc.sample(domain, n_default, seed_default)
    k = domain.index(bc.dim)
    order0, order1 = [], []
    for plo, phi in zip(lo.points, hi.points):
        nlo = _point_nodes(graph, plo, "pbc", as_vars=(k,))
        nhi = _point_nodes(graph, phi, "pbc", as_vars=(k,))
        terms = periodic_pair(u_forward, nlo, nhi, k, bc.match_orders)
        if 0 in bc.match_orders:
            order0.append(terms.pop(0))
        if terms:
            order1.append(terms[0])
    return order0 + order1
