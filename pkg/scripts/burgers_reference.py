"""Cross-check the finite-difference Burgers reference against the Cole-Hopf quadrature."""
import argparse
import time

import numpy as np

from pinn.benchmarks import burgers_domain
from pinn.domain import cartesian_grid
from pinn.reference import BURGERS_NU, BurgersFD, burgers_cole_hopf, relative_l2


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nx", type=int, default=512)
    ap.add_argument("--nt", type=int, default=2000)
    ap.add_argument("--grid", type=int, default=100)
    args = ap.parse_args()

    t0 = time.perf_counter()
    fd = BurgersFD(nx=args.nx, nt=args.nt, nu=BURGERS_NU)
    secs = time.perf_counter() - t0
    grid = cartesian_grid(burgers_domain(), {"x": args.grid, "t": args.grid})
    a = fd(grid[:, 0], grid[:, 1])
    b = burgers_cole_hopf(grid[:, 0], grid[:, 1], BURGERS_NU)
    print(f"FD {args.nx}x{args.nt} in {secs:.2f}s; relative L2 vs Cole-Hopf {relative_l2(a, b):.3e}, "
          f"max abs diff {np.max(np.abs(a - b)):.3e}")


if __name__ == "__main__":
    main()
