"""Collocation (forward) and discovery (inverse) PINN solvers.

The composite loss is ``l_s + l_r + l_b + l_0``: mean squared sample
mismatch, mean squared PDE residual at collocation points, mean squared
boundary mismatch (all boundary terms pooled) and mean squared initial
mismatch.  With self-adaptive training the residual and initial terms are
multiplied per point by ``lambda**2``; the lambdas are raised by gradient
ascent after every descent step.

Each loss group is one generic per-point term built once in a shared Graph
and executed over all of that group's points by a ``tape.Program``.
"""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import net as nn
from .autodiff import ExprNode, Graph, NonFiniteError, derive_many
from .conditions import (ConditionError, DirichletBC, InitialCondition, PeriodicBC,
                         periodic_pair, squared_mismatch)
from .domain import LHS, Domain, PointSet, sample_collocation
from .dsl import ParamSet, ResidualExpr, compile_expr, free_parameters, param_key
from .optim import make_optimizer
from .tape import Program

LOSS_CLASSES = ("sample", "residual", "boundary", "initial")


class SolverError(ValueError):
    pass


class InverseWithoutSamplesError(SolverError):
    pass


class NonFiniteLossError(ArithmeticError):
    def __init__(self, term_class: str, point: int | None, node: int | None = None):
        where = f" at point {point}" if point is not None else ""
        super().__init__(f"non-finite {term_class} loss term{where}")
        self.term_class = term_class
        self.point = point
        self.node = node


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, last_good: int | None, history: "TrainingHistory", cause=None):
        super().__init__(f"non-finite loss at iteration {iteration}; last finite iteration: {last_good}"
                         + (f" ({cause})" if cause else ""))
        self.iteration = iteration
        self.last_good = last_good
        self.history = history


class OutOfBoundsWarning(UserWarning):
    pass


@dataclass
class SampleSet:
    points: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if len(self.targets) == 0:
            self.points = self.points.reshape(0, self.points.shape[-1] if self.points.size else 0)
        if self.points.shape[0] != self.targets.shape[0]:
            raise SolverError("sample points and targets differ in length")
        if not np.all(np.isfinite(self.targets)):
            raise SolverError("sample targets must be finite")

    def __len__(self):
        return len(self.targets)


@dataclass
class SolverConfig:
    n_r: int = 10000
    n_0: int = 100
    n_b: int = 100
    sampling: str = LHS
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    param_lr: float | None = None
    iterations: int = 1000
    self_adaptive: bool = False
    lr_lambda: float = 5e-3
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_r < 1:
            raise SolverError("n_r must be >= 1")
        if min(self.n_0, self.n_b, self.iterations) < 0:
            raise SolverError("counts must be >= 0")
        if self.workers < 1:
            raise SolverError("workers must be >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    l_s: float
    l_r: float
    l_b: float
    l_0: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SelfAdaptiveWeights:
    lambda_r: np.ndarray
    lambda_0: np.ndarray
    lr_lambda: float


@dataclass
class LossResult:
    breakdown: LossBreakdown
    grad: np.ndarray | None = None          # weights then trainable params
    grad_lambda_r: np.ndarray | None = None
    grad_lambda_0: np.ndarray | None = None


@dataclass
class IterationRecord:
    iteration: int
    loss: LossBreakdown
    params: dict
    millis: float

    def to_json(self) -> dict:
        return {"iteration": self.iteration, **self.loss.as_dict(), "params": self.params,
                "millis": self.millis}

    def same_result(self, other: "IterationRecord") -> bool:
        # wall time is the only non-reproducible field
        return (self.iteration, self.loss, self.params) == (other.iteration, other.loss, other.params)


@dataclass
class TrainingHistory:
    records: list[IterationRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def append(self, rec: IterationRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise SolverError("history iterations must increase")
        self.records.append(rec)

    def extend(self, other: "TrainingHistory") -> None:
        for r in other:
            self.append(r)

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_json()) + "\n")


@dataclass
class _Batch:
    program: Program
    inputs: np.ndarray
    n_terms: int
    lambda_col: int | None = None
    periodic: PeriodicBC | None = None


def self_adaptive_step(lam: np.ndarray, grad: np.ndarray, lr_lambda: float) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if lam.shape != grad.shape:
        raise SolverError("lambda and gradient shapes differ")
    if not np.all(np.isfinite(grad)):
        raise SolverError("non-finite lambda gradient")
    return lam + lr_lambda * grad


class CompiledProblem:
    """Everything ``fit`` needs: sampled points, templates, weights, state."""

    def __init__(self, domain: Domain, residual: ResidualExpr, conditions: Sequence,
                 samples: SampleSet | None, net_spec: nn.MLPSpec | None, config: SolverConfig,
                 params: ParamSet | None = None, mode: str | None = None,
                 u_forward: Callable[[Sequence[ExprNode]], ExprNode] | None = None):
        self.domain = domain
        self.residual = residual
        self.conditions = list(conditions)
        self.config = config
        self.spec = net_spec
        params = params if params is not None else ParamSet.empty()
        missing = set(free_parameters(residual)) - set(params.names)
        if missing:
            raise SolverError(f"no values supplied for residual parameters {sorted(missing)}")
        if mode is None:
            mode = "discovery" if any(params.trainable) else "forward"
        if mode not in ("forward", "discovery"):
            raise SolverError("mode must be 'forward' or 'discovery'")
        if mode == "forward":
            params = ParamSet(list(params.names), params.values.copy(), [False] * len(params.names))
        self.mode = mode
        self.params = ParamSet(list(params.names), params.values.copy(), list(params.trainable))
        self.samples = samples if samples is not None and len(samples) else None
        if mode == "discovery":
            if self.samples is None:
                raise InverseWithoutSamplesError("discovery mode needs at least one sample point")
            if not self.params.trainable_names:
                raise SolverError("discovery mode needs at least one trainable parameter")
        if u_forward is None:
            if net_spec is None:
                raise SolverError("need a network spec or an explicit solution")
            if net_spec.input_width != len(domain):
                raise nn.WidthMismatchError(
                    f"network input width {net_spec.input_width} != domain dimension count {len(domain)}")
            self.weights = nn.init_glorot(net_spec, config.seed)
        else:
            self.weights = None
        self._external_u = u_forward
        for c in self.conditions:
            if isinstance(c, InitialCondition) and domain.temporal is None:
                raise ConditionError("initial condition given but the domain has no temporal dimension")
        self.iteration = 0
        self.history = TrainingHistory()
        self._build()
        self._optimizers = None

    # -- construction ---------------------------------------------------------
    def _build(self) -> None:
        cfg = self.config
        dom = self.domain
        g = self.graph = Graph()
        if self.weights is not None:
            wnodes = nn.register_weights(g, self.weights)
            spec, W = self.spec, self.weights
            self._u = lambda pts: nn.forward(spec, W, g, pts, wnodes)
        else:
            self._u = self._external_u
        self.shared_keys = (nn.weight_keys(len(self.weights)) if self.weights is not None else [])
        self.shared_keys += [param_key(n) for n in self.params.trainable_names]
        for n in self.params.trainable_names:
            g.var(param_key(n), self.params.value(n))
        pt_keys = [("pt", d) for d in dom.names]
        pt = [g.var(k) for k in pt_keys]
        lam = g.var(("lambda",))
        target = g.var(("target",))
        sa = cfg.self_adaptive

        self.collocation = sample_collocation(dom, cfg.n_r, cfg.sampling, cfg.seed)
        r = compile_expr(self.residual, self.params, self._u, g, pt)
        self.residual_node = r
        term_r = lam * lam * (r * r) if sa else r * r
        keys_r = pt_keys + ([("lambda",)] if sa else [])
        inputs = self.collocation.points
        if sa:
            inputs = np.hstack([inputs, np.ones((len(inputs), 1))])
        self.groups: dict[str, list[_Batch]] = {k: [] for k in LOSS_CLASSES}
        self.groups["residual"].append(
            _Batch(Program(g, [term_r], keys_r, self.shared_keys), inputs, len(inputs),
                   len(pt_keys) if sa else None))

        u_pt = self._u(pt)
        self.u_node = u_pt
        self.point_sets: dict[str, list[PointSet]] = {"initial": [], "boundary": [], "sample": []}
        mismatch = squared_mismatch(u_pt, target)
        ic_rows, bc_rows = [], []
        for ci, c in enumerate(self.conditions):
            seed = cfg.seed + 1 + ci
            if isinstance(c, InitialCondition):
                ps = c.sample(dom, cfg.n_0, seed)
                self.point_sets["initial"].append(ps)
                ic_rows.append(np.hstack([ps.points, c.targets(ps.points, dom)[:, None]]))
            elif isinstance(c, DirichletBC):
                ps = c.sample(dom, cfg.n_b, seed)
                self.point_sets["boundary"].append(ps)
                bc_rows.append(np.hstack([ps.points, c.targets(ps.points, dom)[:, None]]))
            elif isinstance(c, PeriodicBC):
                lo, hi = c.sample(dom, cfg.n_b, seed)
                self.point_sets["boundary"] += [lo, hi]
                k = dom.index(c.dim)
                lo_keys = [("lo", d) for d in dom.names]
                hi_keys = [("hi", d) for d in dom.names]
                lo_v = [g.lookup(kk) if g.has_var(kk) else g.var(kk) for kk in lo_keys]
                hi_v = [g.lookup(kk) if g.has_var(kk) else g.var(kk) for kk in hi_keys]
                terms = periodic_pair(self._u, lo_v, hi_v, k, c.match_orders)
                prog = Program(g, terms, lo_keys + hi_keys, self.shared_keys)
                self.groups["boundary"].append(
                    _Batch(prog, np.hstack([lo.points, hi.points]), len(lo) * len(terms), periodic=c))
            else:
                raise SolverError(f"unsupported condition {c!r}")
        if ic_rows:
            rows = np.vstack(ic_rows)
            if rows.shape[0]:
                term0 = lam * lam * mismatch if sa else mismatch
                keys = pt_keys + [("target",)] + ([("lambda",)] if sa else [])
                if sa:
                    rows = np.hstack([rows, np.ones((len(rows), 1))])
                self.groups["initial"].append(
                    _Batch(Program(g, [term0], keys, self.shared_keys), rows, len(rows),
                           len(pt_keys) + 1 if sa else None))
        if bc_rows:
            rows = np.vstack(bc_rows)
            if rows.shape[0]:
                prog = Program(g, [mismatch], pt_keys + [("target",)], self.shared_keys)
                self.groups["boundary"].insert(0, _Batch(prog, rows, len(rows)))
        if self.samples is not None:
            if self.samples.points.shape[1] != len(dom):
                raise SolverError("sample points must have one column per dimension")
            self.point_sets["sample"].append(PointSet(self.samples.points, "sample"))
            rows = np.hstack([self.samples.points, self.samples.targets[:, None]])
            prog = Program(g, [mismatch], pt_keys + [("target",)], self.shared_keys)
            self.groups["sample"].append(_Batch(prog, rows, len(rows)))
        self._predict_prog = Program(g, [u_pt], pt_keys, self.shared_keys)

        n0 = sum(b.n_terms for b in self.groups["initial"])
        if sa:
            self.lambdas = SelfAdaptiveWeights(np.ones(cfg.n_r), np.ones(n0), cfg.lr_lambda)
        else:
            self.lambdas = None

    # -- state ------------------------------------------------------------------
    @property
    def term_counts(self) -> dict:
        counts = {k: sum(b.n_terms for b in v) for k, v in self.groups.items()}
        counts["total"] = sum(counts.values())
        return counts

    def shared_vector(self, weights: nn.WeightStore | None = None,
                      params: np.ndarray | None = None) -> np.ndarray:
        w = weights if weights is not None else self.weights
        parts = [w.flat] if w is not None else []
        if params is None:
            params = np.array([self.params.value(n) for n in self.params.trainable_names])
        parts.append(np.asarray(params, dtype=float).reshape(-1))
        return np.concatenate(parts) if parts else np.zeros(0)

    def _unpack(self, theta: np.ndarray) -> None:
        nw = len(self.weights) if self.weights is not None else 0
        if self.weights is not None:
            self.weights = nn.WeightStore(theta[:nw].copy(), self.weights.layout, self.weights.seed)
        for j, name in enumerate(self.params.trainable_names):
            self.params.values[self.params.names.index(name)] = theta[nw + j]

    def parameter_dict(self) -> dict:
        return {n: self.params.value(n) for n in self.params.trainable_names}


def compile(domain: Domain, residual: ResidualExpr, conditions: Sequence = (),
            samples: SampleSet | None = None, net_spec: nn.MLPSpec | None = None,
            config: SolverConfig | None = None, params: ParamSet | None = None,
            mode: str | None = None, u_forward=None) -> CompiledProblem:
    return CompiledProblem(domain, residual, conditions, samples, net_spec,
                           config or SolverConfig(), params, mode, u_forward)


def compute_loss(problem: CompiledProblem, weights: nn.WeightStore | None = None,
                 params: np.ndarray | None = None, lambdas: SelfAdaptiveWeights | None = None,
                 gradient: bool = True, workers: int | None = None) -> LossResult:
    """Loss breakdown and (optionally) gradients at the given or current state."""
    shared = problem.shared_vector(weights, params)
    lambdas = lambdas if lambdas is not None else problem.lambdas
    workers = workers or problem.config.workers
    grad = np.zeros_like(shared) if gradient else None
    lam_grads = {}
    losses = {}
    for cls in LOSS_CLASSES:
        batches = problem.groups[cls]
        n = sum(b.n_terms for b in batches)
        if n == 0:
            losses[cls] = 0.0
            continue
        acc = 0.0
        for b in batches:
            inputs = b.inputs
            if b.lambda_col is not None:
                inputs = inputs.copy()
                inputs[:, b.lambda_col] = lambdas.lambda_r if cls == "residual" else lambdas.lambda_0
            try:
                if gradient:
                    vals, gs, gp = b.program.value_and_grad(
                        shared, inputs, np.full((len(inputs), b.n_terms // max(len(inputs), 1)), 1.0 / n),
                        workers=workers)
                    grad += gs
                    if b.lambda_col is not None:
                        lam_grads[cls] = gp[:, b.lambda_col].copy()
                else:
                    vals = b.program.forward(shared, inputs, workers=workers)
            except NonFiniteError as exc:
                raise NonFiniteLossError(cls, getattr(exc, "point", None), exc.node_id) from exc
            acc += float(np.sum(vals))
        losses[cls] = acc / n
        if not math.isfinite(losses[cls]):
            raise NonFiniteLossError(cls, None)
    total = losses["sample"] + losses["residual"] + losses["boundary"] + losses["initial"]
    bd = LossBreakdown(losses["sample"], losses["residual"], losses["boundary"], losses["initial"], total)
    return LossResult(bd, grad, lam_grads.get("residual"), lam_grads.get("initial"))


def _make_optimizers(problem: CompiledProblem):
    cfg = problem.config
    nw = len(problem.weights) if problem.weights is not None else 0
    npar = len(problem.params.trainable_names)
    hyper = dict(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps) if cfg.optimizer == "adam" else {}
    if cfg.param_lr is None or npar == 0:
        return [(slice(0, nw + npar), make_optimizer(cfg.optimizer, nw + npar, cfg.lr, **hyper))]
    return [(slice(0, nw), make_optimizer(cfg.optimizer, nw, cfg.lr, **hyper)),
            (slice(nw, nw + npar), make_optimizer(cfg.optimizer, npar, cfg.param_lr, **hyper))]


def _snapshot(problem: CompiledProblem):
    lam = problem.lambdas
    return (problem.shared_vector(),
            None if lam is None else (lam.lambda_r.copy(), lam.lambda_0.copy()),
            [getattr(opt, "state", None) for _, opt in problem._optimizers])


def _restore(problem: CompiledProblem, snap) -> None:
    theta, lams, states = snap
    problem._unpack(theta)
    if lams is not None:
        problem.lambdas.lambda_r, problem.lambdas.lambda_0 = lams
    for (_, opt), st in zip(problem._optimizers, states):
        if st is not None:
            opt.state = st


def fit(problem: CompiledProblem, iterations: int | None = None,
        callback: Callable[[IterationRecord], None] | None = None) -> TrainingHistory:
    """Run ``iterations`` descent steps (plus lambda ascent when self-adaptive).

    Each record holds the loss at the state *before* that iteration's update.
    On a non-finite loss or gradient, ``TrainingDivergedError`` is raised and
    the problem is rolled back to the state at which the last finite loss
    was evaluated (weights, parameters, lambdas and optimizer moments).
    """
    iterations = problem.config.iterations if iterations is None else iterations
    if problem._optimizers is None:
        problem._optimizers = _make_optimizers(problem)
    history = TrainingHistory()
    last_good = problem.history[-1].iteration if len(problem.history) else None
    checkpoint = None
    for _ in range(iterations):
        t0 = time.perf_counter()
        it = problem.iteration
        try:
            res = compute_loss(problem)
            if not np.all(np.isfinite(res.grad)):
                raise NonFiniteLossError("gradient", None)
        except NonFiniteLossError as exc:
            if checkpoint is not None:
                _restore(problem, checkpoint)
            problem.history.extend(history)
            raise TrainingDivergedError(it, last_good, history, exc) from exc
        checkpoint = _snapshot(problem)
        theta = checkpoint[0]
        new = theta.copy()
        for sl, opt in problem._optimizers:
            new[sl] = opt.step(theta[sl], res.grad[sl])
        rec = IterationRecord(it, res.breakdown, problem.parameter_dict(),
                              (time.perf_counter() - t0) * 1e3)
        problem._unpack(new)
        if problem.lambdas is not None:
            lam = problem.lambdas
            if res.grad_lambda_r is not None:
                lam.lambda_r = self_adaptive_step(lam.lambda_r, res.grad_lambda_r, lam.lr_lambda)
            if res.grad_lambda_0 is not None:
                lam.lambda_0 = self_adaptive_step(lam.lambda_0, res.grad_lambda_0, lam.lr_lambda)
        rec.millis = (time.perf_counter() - t0) * 1e3
        history.append(rec)
        last_good = it
        problem.iteration += 1
        if callback is not None:
            callback(rec)
    problem.history.extend(history)
    return history


def predict(problem: CompiledProblem, points, workers: int | None = None) -> np.ndarray:
    pts = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=float)
    pts = pts.reshape(-1, len(problem.domain))
    if len(pts) and not problem.domain.contains(pts).all():
        warnings.warn("prediction points outside the domain; extrapolating", OutOfBoundsWarning,
                      stacklevel=2)
    if len(pts) == 0:
        return np.zeros(0)
    out = problem._predict_prog.forward(problem.shared_vector(), pts,
                                        workers=workers or problem.config.workers)
    return out[:, 0]


def recover_parameters(problem: CompiledProblem) -> list[tuple[str, float]]:
    if problem.mode != "discovery":
        return []
    return [(n, problem.params.value(n)) for n in problem.params.trainable_names]


# -- scalar-graph route ---------------------------------------------------------------
@dataclass
class ScalarLoss:
    graph: Graph
    total: ExprNode
    components: dict
    shared: list[ExprNode]
    lambda_r: list[ExprNode]
    lambda_0: list[ExprNode]

    def gradient(self) -> np.ndarray:
        return derive_many(self.graph, self.total, self.shared + self.lambda_r + self.lambda_0)


def scalar_loss(problem: CompiledProblem) -> ScalarLoss:
    """The whole loss as one scalar node, one subgraph per point.

    Uses exactly the same points and targets as ``compute_loss`` but none of
    the batched machinery, so the two can be checked against each other.
    Only practical for small problems.
    """
    g = Graph()
    dom = problem.domain
    shared = []
    if problem.weights is not None:
        wnodes = nn.register_weights(g, problem.weights)
        shared += wnodes
        spec, W = problem.spec, problem.weights
        u = lambda pts: nn.forward(spec, W, g, pts, wnodes)
    else:
        u = problem._external_u
    for n in problem.params.trainable_names:
        shared.append(g.var(param_key(n), problem.params.value(n)))
    lam = problem.lambdas
    lam_r, lam_0 = [], []

    def mean(terms):
        if not terms:
            return g.const(0.0)
        acc = terms[0]
        for t in terms[1:]:
            acc = acc + t
        return acc / float(len(terms))

    r_terms = []
    for i, p in enumerate(problem.collocation.points):
        pv = [g.var(("r", i, d), float(v)) for d, v in zip(dom.names, p)]
        r = compile_expr(problem.residual, problem.params, u, g, pv)
        t = r * r
        if lam is not None:
            ln = g.var(("lambda_r", i), float(lam.lambda_r[i]))
            lam_r.append(ln)
            t = ln * ln * t
        r_terms.append(t)

    def rows_terms(batches, tag, lambdas=None, lam_nodes=None):
        terms = []
        nd = len(dom)
        for bi, b in enumerate(batches):
            if b.periodic is not None:
                k = dom.index(b.periodic.dim)
                order0, order1 = [], []
                for i, row in enumerate(b.inputs):
                    lo = [g.var((tag, bi, i, "lo", j), float(v)) for j, v in enumerate(row[:nd])]
                    hi = [g.var((tag, bi, i, "hi", j), float(v)) for j, v in enumerate(row[nd:])]
                    ts = periodic_pair(u, lo, hi, k, b.periodic.match_orders)
                    if 0 in b.periodic.match_orders:
                        order0.append(ts.pop(0))
                    order1 += ts
                terms += order0 + order1
                continue
            for i, row in enumerate(b.inputs):
                pv = [g.const(float(v)) for v in row[:nd]]
                t = squared_mismatch(u(pv), float(row[nd]))
                if lambdas is not None:
                    ln = g.var((tag, "lambda", i), float(lambdas[i]))
                    lam_nodes.append(ln)
                    t = ln * ln * t
                terms.append(t)
        return terms

    s_terms = rows_terms(problem.groups["sample"], "s")
    b_terms = rows_terms(problem.groups["boundary"], "b")
    i_terms = rows_terms(problem.groups["initial"], "i",
                         lam.lambda_0 if lam is not None else None, lam_0)
    comps = {"l_s": mean(s_terms), "l_r": mean(r_terms), "l_b": mean(b_terms), "l_0": mean(i_terms)}
    total = comps["l_s"] + comps["l_r"] + comps["l_b"] + comps["l_0"]
    return ScalarLoss(g, total, comps, shared, lam_r, lam_0)
