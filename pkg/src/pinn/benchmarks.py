"""Benchmark problems shared by the experiment scripts and the acceptance suite."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .conditions import ConditionFn, DirichletBC, InitialCondition
from .domain import Domain, cartesian_grid
from .dsl import ParamSet, parse
from .net import MLPSpec
from .reference import BURGERS_NU, BurgersFD, heat_exact, relative_l2
from .solver import CompiledProblem, SampleSet, SolverConfig, compile, fit, predict

log = logging.getLogger(__name__)


def heat_domain(t_end: float = 0.25) -> Domain:
    return Domain().add("x", 0.0, 1.0).add("t", 0.0, t_end, "temporal")


def heat_forward(config: SolverConfig | None = None, layers=(2, 20, 20, 1)) -> CompiledProblem:
    dom = heat_domain()
    conds = [InitialCondition(ConditionFn.parse("sin(pi*x)", dom)),
             DirichletBC("x", "lower", 0.0), DirichletBC("x", "upper", 0.0)]
    cfg = config or SolverConfig(n_r=5000, n_0=100, n_b=100)
    return compile(dom, parse("u_t - u_xx", dom), conds, None, MLPSpec.from_layers(list(layers)), cfg)


def heat_samples(n: int = 200, diffusivity: float = 0.5, noise: float = 0.0, seed: int = 0) -> SampleSet:
    dom = heat_domain()
    rng = np.random.default_rng(seed)
    pts = rng.uniform(dom.lower(), dom.upper(), size=(n, 2))
    u = heat_exact(pts[:, 0], pts[:, 1], diffusivity)
    if noise:
        u = u + rng.normal(0.0, noise, size=n)
    return SampleSet(pts, u)


def heat_discovery(samples: SampleSet, config: SolverConfig | None = None, d_init: float = 1.0,
                   layers=(2, 20, 20, 1)) -> CompiledProblem:
    dom = heat_domain()
    conds = [InitialCondition(ConditionFn.parse("sin(pi*x)", dom)),
             DirichletBC("x", "lower", 0.0), DirichletBC("x", "upper", 0.0)]
    params = ParamSet(["D"], [d_init], [True])
    cfg = config or SolverConfig(n_r=2000, n_0=100, n_b=100)
    return compile(dom, parse("u_t - D*u_xx", dom, ["D"]), conds, samples,
                   MLPSpec.from_layers(list(layers)), cfg, params, "discovery")


BURGERS_RESIDUAL = "u_t + u*u_x - (0.01/pi)*u_xx"


def burgers_domain() -> Domain:
    return Domain().add("x", -1.0, 1.0).add("t", 0.0, 1.0, "temporal")


def burgers_forward(config: SolverConfig | None = None, layers=(2, 20, 20, 20, 1)) -> CompiledProblem:
    dom = burgers_domain()
    conds = [InitialCondition(ConditionFn.parse("-sin(pi*x)", dom)),
             DirichletBC("x", "lower", 0.0), DirichletBC("x", "upper", 0.0)]
    cfg = config or SolverConfig(n_r=5000, n_0=100, n_b=100)
    return compile(dom, parse(BURGERS_RESIDUAL, dom), conds, None, MLPSpec.from_layers(list(layers)), cfg)


@dataclass
class Scorer:
    """Relative L2 error of the current network on a fixed comparison grid."""
    grid: np.ndarray
    reference: np.ndarray

    def __call__(self, problem: CompiledProblem) -> float:
        return relative_l2(predict(problem, self.grid), self.reference)


def heat_scorer(n: int = 50, diffusivity: float = 1.0) -> Scorer:
    grid = cartesian_grid(heat_domain(), {"x": n, "t": n})
    return Scorer(grid, heat_exact(grid[:, 0], grid[:, 1], diffusivity))


def burgers_scorer(n: int = 100, fd: BurgersFD | None = None) -> Scorer:
    fd = fd or BurgersFD(nx=512, nt=2000, nu=BURGERS_NU)
    grid = cartesian_grid(burgers_domain(), {"x": n, "t": n})
    return Scorer(grid, fd(grid[:, 0], grid[:, 1]))


@dataclass
class RunLog:
    iterations: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    metrics: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def best(self) -> float:
        return min(self.metrics) if self.metrics else float("inf")


def train_until(problem: CompiledProblem, metric, target: float, max_iterations: int,
                check_every: int = 500) -> RunLog:
    """Fit in chunks, scoring after each; stop once ``metric(problem) <= target``."""
    out = RunLog()
    t0 = time.perf_counter()
    while problem.iteration < max_iterations:
        hist = fit(problem, min(check_every, max_iterations - problem.iteration))
        m = metric(problem)
        out.iterations.append(problem.iteration)
        out.losses.append(hist[-1].loss.total)
        out.metrics.append(m)
        log.info("iter %d loss %.4e metric %.4e (%.0fs)", problem.iteration, hist[-1].loss.total, m,
                 time.perf_counter() - t0)
        if m <= target:
            break
    out.seconds = time.perf_counter() - t0
    return out
