"""Write a sample-data CSV drawn from the analytic heat solution (for `pinn discover`)."""
import argparse

import numpy as np

from pinn.benchmarks import heat_samples
from pinn.domain import write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--diffusivity", type=float, default=0.5)
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    s = heat_samples(args.n, args.diffusivity, args.noise, args.seed)
    write_csv(args.out, ["x", "t", "u"], np.column_stack([s.points, s.targets]))


if __name__ == "__main__":
    main()
