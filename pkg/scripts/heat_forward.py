"""Train the heat-equation benchmark and score it against the analytic solution."""
import argparse
import json
import logging

from pinn.benchmarks import heat_forward, heat_scorer, train_until
from pinn.solver import SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--layers", type=int, nargs="+", default=[2, 20, 20, 1])
    ap.add_argument("--n-r", type=int, default=5000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--iterations", type=int, default=20000)
    ap.add_argument("--target", type=float, default=1e-2)
    ap.add_argument("--check-every", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--log")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = SolverConfig(n_r=args.n_r, n_0=100, n_b=100, lr=args.lr, seed=args.seed, workers=args.workers)
    problem = heat_forward(cfg, tuple(args.layers))
    run = train_until(problem, heat_scorer(50), args.target, args.iterations, args.check_every)
    print(f"relative L2 {run.metrics[-1]:.4e} after {problem.iteration} iterations ({run.seconds:.0f}s)")
    if args.log:
        with open(args.log, "w") as fh:
            json.dump({"args": vars(args), **run.__dict__}, fh, indent=1)


if __name__ == "__main__":
    main()
