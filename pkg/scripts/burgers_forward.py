"""Train the viscous Burgers benchmark and score it against the finite-difference reference."""
import argparse
import json
import logging

from pinn.benchmarks import burgers_forward, burgers_scorer, train_until
from pinn.solver import SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--layers", type=int, nargs="+", default=[2, 20, 20, 20, 1])
    ap.add_argument("--n-r", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--iterations", type=int, default=30000)
    ap.add_argument("--self-adaptive", action="store_true")
    ap.add_argument("--lr-lambda", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--target", type=float, default=5e-2)
    ap.add_argument("--check-every", type=int, default=1000)
    ap.add_argument("--log", help="write the run log as JSON here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = SolverConfig(n_r=args.n_r, n_0=100, n_b=100, lr=args.lr, seed=args.seed,
                       self_adaptive=args.self_adaptive, lr_lambda=args.lr_lambda, workers=args.workers)
    problem = burgers_forward(cfg, tuple(args.layers))
    run = train_until(problem, burgers_scorer(), args.target, args.iterations, args.check_every)
    print(f"final relative L2 {run.metrics[-1]:.4e} after {problem.iteration} iterations "
          f"({run.seconds:.0f}s); best {run.best:.4e}")
    if args.log:
        with open(args.log, "w") as fh:
            json.dump({"args": vars(args), **run.__dict__}, fh, indent=1)


if __name__ == "__main__":
    main()
