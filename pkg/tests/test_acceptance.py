"""Acceptance criteria, one test each, every one at its stated tolerance.

Each test records a ``PASS``/``FAIL`` line before asserting; the lines are
printed in the pytest terminal summary, or directly when this file is run
as a script (``python tests/test_acceptance.py [numbers...]``).
The benchmark criteria (3, 4, 5) train real networks and take minutes.
"""
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cases import (CLOSED_FORMS, CORPUS, DIMS, ERRORS, FUZZ_ALPHABET, PARAMS, gradient_check,  # noqa: E402
                   tiny_problem)

from pinn import net as nn  # noqa: E402
from pinn.autodiff import Graph  # noqa: E402
from pinn.benchmarks import (burgers_forward, burgers_scorer, heat_discovery, heat_forward,  # noqa: E402
                             heat_samples, heat_scorer, train_until)
from pinn.cli import main as cli_main  # noqa: E402
from pinn.dsl import DSLError, compile_expr, parse, pretty  # noqa: E402
from pinn.solver import SolverConfig, compute_loss, fit, recover_parameters  # noqa: E402

RESULTS = []


def record(number, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return passed


def test_1_gradient_oracle():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(50):
        for block, err in gradient_check(tiny_problem(seed)).items():
            worst[block] = max(worst.get(block, 0.0), err)
    secs = time.perf_counter() - t0
    ok = all(v <= 1e-5 for v in worst.values()) and {"weights", "params", "lambda_r", "lambda_0"} <= worst.keys()
    ok = ok and secs < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in sorted(worst.items()))
    assert record(1, ok, f"worst block-wise relative error over 50 problems: {detail} ({secs:.1f}s)")


def _nested(cf, text, x, t):
    g = Graph()
    node = compile_expr(parse(text, DIMS), None, lambda p: cf.build(*p), g, [g.var("x", x), g.var("t", t)])
    return g.eval(node)


def test_2_nested_derivatives():
    rng = np.random.default_rng(2)
    xs, ts = rng.uniform(-1, 1, 100), rng.uniform(0, 1, 100)
    worst = 0.0
    for cf in CLOSED_FORMS:
        for x, t in zip(xs, ts):
            for text, ref in (("u_x", cf.ux), ("u_xx", cf.uxx), ("u_xt", cf.uxt)):
                expect = float(ref(x, t))
                worst = max(worst, abs(_nested(cf, text, float(x), float(t)) - expect) / max(1.0, abs(expect)))
    assert record(2, worst <= 1e-10, f"{len(CLOSED_FORMS)} functions x 100 points, worst error {worst:.1e}")


@pytest.mark.slow
def test_3_heat_forward():
    problem = heat_forward(SolverConfig(n_r=5000, n_0=100, n_b=100, lr=1e-3))
    run = train_until(problem, heat_scorer(50), 1e-2, 20000, check_every=500)
    err = run.metrics[-1]
    assert record(3, err <= 1e-2, f"heat relative L2 {err:.3e} after {problem.iteration} iterations "
                                  f"({run.seconds / 60:.1f} min)")


@pytest.mark.slow
def test_4_burgers_forward():
    # Adam alone plateaus near 0.2 on this problem; per-point multipliers on the
    # residual let the network resolve the steep front
    problem = burgers_forward(SolverConfig(n_r=2000, n_0=100, n_b=100, lr=1e-3,
                                           self_adaptive=True, lr_lambda=0.05))
    run = train_until(problem, burgers_scorer(100), 5e-2, 30000, check_every=1000)
    err = run.metrics[-1]
    assert record(4, err <= 5e-2, f"Burgers relative L2 {err:.3e} after {problem.iteration} iterations "
                                  f"(best {run.best:.3e}, {run.seconds / 60:.1f} min)")


def _discover(noise, iterations=10000):
    # fixed budget: D sweeps through 0.5 on its way down from 1.0 early in
    # training, so stopping at the first in-tolerance check would be meaningless
    problem = heat_discovery(heat_samples(200, 0.5, noise, seed=0), SolverConfig(n_r=2000, n_0=100, n_b=100))
    t0 = time.perf_counter()
    fit(problem, iterations)
    return dict(recover_parameters(problem))["D"], problem.iteration, time.perf_counter() - t0


@pytest.mark.slow
def test_5_inverse_recovery():
    d0, it0, s0 = _discover(0.0)
    d1, it1, s1 = _discover(1e-3)
    e0, e1 = abs(d0 - 0.5) / 0.5, abs(d1 - 0.5) / 0.5
    ok = e0 <= 0.05 and e1 <= 0.10
    assert record(5, ok, f"noiseless D={d0:.4f} ({e0:.2%}, {it0} it), sigma=1e-3 D={d1:.4f} "
                         f"({e1:.2%}, {it1} it), {(s0 + s1) / 60:.1f} min")


def _residuals(p):
    env = {("pt", d): p.collocation.points[:, i] for i, d in enumerate(p.domain.names)}
    env.update(zip(p.shared_keys, p.shared_vector()))
    return np.asarray(p.graph.eval(p.residual_node, env), dtype=float)


def test_6_self_adaptive_sign():
    worst, checked, absorbed, wrong = 0.0, 0, 0, 0
    for seed in range(100):
        p = tiny_problem(seed)
        rng = np.random.default_rng(1000 + seed)
        lam = p.lambdas
        lam.lambda_r = rng.uniform(-2, 2, len(lam.lambda_r))
        r = _residuals(p)
        hand = 2 * lam.lambda_r * r**2 / len(r)
        res = compute_loss(p)
        worst = max(worst, float(np.max(np.abs(res.grad_lambda_r - hand))))
        before = lam.lambda_r.copy()
        fit(p, 1)
        after = p.lambdas.lambda_r
        # a step smaller than one ulp of lambda cannot be represented
        visible = np.abs(lam.lr_lambda * hand) >= np.spacing(np.abs(before))
        absorbed += int(np.sum(~visible & (hand > 0)))
        wrong += int(np.sum(((after > before) != (hand > 0))[visible]))
        checked += int(np.sum(visible))
    ok = worst <= 1e-10 and wrong == 0
    assert record(6, ok, f"{checked} multipliers, {wrong} sign violations, {absorbed} sub-ulp steps "
                         f"skipped, worst gradient error {worst:.1e}")


DETERMINISM_CONFIG = """
[domain]
dims = [{ name = "x", lower = -1.0, upper = 1.0 }, { name = "t", lower = 0.0, upper = 1.0, kind = "temporal" }]
[pde]
residual = "u_t + u*u_x - (0.01/pi)*u_xx"
[[conditions]]
type = "initial"
value = "-sin(pi*x)"
[[conditions]]
type = "dirichlet"
dim = "x"
side = "lower"
value = 0.0
[[conditions]]
type = "dirichlet"
dim = "x"
side = "upper"
value = 0.0
[network]
layers = [2, 10, 10, 1]
[training]
iterations = 30
n_r = 2000
seed = 7
[training.self_adaptive]
enabled = true
lr_lambda = 0.05
[output]
dir = "out"
resolution = { x = 40, t = 30 }
"""


def test_7_worker_invariance():
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "burgers.toml"
        cfg.write_text(DETERMINISM_CONFIG)
        blobs, codes = {}, {}
        for w in (1, 2, 4, 1):
            out = Path(tmp) / f"w{w}-{len(blobs)}"
            codes[w] = cli_main(["solve", "--config", str(cfg), "--workers", str(w), "--out", str(out), "--quiet"])
            blobs.setdefault(w, []).append((out / "solution.csv").read_bytes())
    runs = [b for v in blobs.values() for b in v]
    ok = all(c == 0 for c in codes.values()) and all(b == runs[0] for b in runs)
    assert record(7, ok, f"solution.csv bit-identical for workers 1, 2, 4 and a repeat run: {ok}")


def test_8_dsl_conformance():
    fixed = 0
    for text in CORPUS:
        first = parse(text, DIMS, PARAMS)
        again = parse(pretty(first), DIMS, PARAMS)
        fixed += again.ast == first.ast and pretty(again) == pretty(first)
    positioned = 0
    for text, kind, pos in ERRORS:
        try:
            parse(text, DIMS, PARAMS)
        except DSLError as exc:
            positioned += type(exc).__name__ == kind and exc.pos == pos
    rng = np.random.default_rng(8)
    crashes = 0
    for _ in range(2000):
        text = "".join(rng.choice(list(FUZZ_ALPHABET), int(rng.integers(0, 25))))
        try:
            e = parse(text, DIMS, PARAMS)
            crashes += parse(pretty(e), DIMS, PARAMS).ast != e.ast
        except DSLError as exc:
            crashes += not (0 <= exc.pos <= len(text))
        except Exception:
            crashes += 1
    ok = fixed == len(CORPUS) == 25 and positioned == len(ERRORS) and crashes == 0
    assert record(8, ok, f"fixed point {fixed}/{len(CORPUS)}, positioned errors {positioned}/{len(ERRORS)}, "
                         f"fuzz failures {crashes}/2000")


def test_9_persistence():
    exact = 0
    for seed in range(20):
        spec = nn.MLPSpec.from_layers([2] + [int(w) for w in np.random.default_rng(seed).integers(1, 30, 3)] + [1])
        w = nn.init_glorot(spec, seed)
        spec2, w2 = nn.loads(nn.dumps(w, spec))
        exact += spec2 == spec and w2.flat.tobytes() == w.flat.tobytes()
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "burgers.toml"
        cfg.write_text(DETERMINISM_CONFIG)
        out = Path(tmp) / "out"
        code = cli_main(["solve", "--config", str(cfg), "--out", str(out), "--quiet"])
        sol = np.loadtxt(out / "solution.csv", delimiter=",", skiprows=1)
        pts = Path(tmp) / "pts.csv"
        pts.write_text("x,t\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in sol[:, :2]))
        code += cli_main(["eval", "--config", str(cfg), "--weights", str(out / "weights.pinn"),
                          "--points", str(pts), "--out", str(Path(tmp) / "ev"), "--quiet"])
        pred = np.loadtxt(Path(tmp) / "ev" / "predictions.csv", delimiter=",", skiprows=1)
    diff = float(np.max(np.abs(pred[:, 2] - sol[:, 2])))
    ok = exact == 20 and code == 0 and diff <= 1e-12
    assert record(9, ok, f"archive round trips bit-exact {exact}/20, eval vs solution.csv max diff {diff:.1e}")


if __name__ == "__main__":
    wanted = set(sys.argv[1:])
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and (not wanted or name.split("_")[1] in wanted):
            try:
                fn()
            except AssertionError:
                pass
    failed = [r for r in RESULTS if r.startswith("FAIL")]
    sys.exit(1 if failed else 0)
