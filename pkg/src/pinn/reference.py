"""Reference solutions used to score trained networks.

``heat_exact`` is the closed form for the sine initial profile.  Burgers has
two independent routes: a Crank-Nicolson finite-difference solver and the
Cole-Hopf integral evaluated by quadrature.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded
from scipy.special import logsumexp

BURGERS_NU = 0.01 / math.pi


def heat_exact(x, t, diffusivity: float = 1.0):
    """u_t = D u_xx on [0,1], u(x,0) = sin(pi x), u = 0 at both ends."""
    return np.exp(-diffusivity * math.pi**2 * np.asarray(t)) * np.sin(math.pi * np.asarray(x))


def relative_l2(pred, ref) -> float:
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    return float(np.linalg.norm(pred - ref) / np.linalg.norm(ref))


class BurgersFD:
    """u_t + u u_x = nu u_xx on [-1,1] x [0,T], u(x,0) = -sin(pi x), u(+-1,t) = 0.

    Conservative central differences in space, Crank-Nicolson in time, one
    Newton solve (tridiagonal Jacobian) per step.  ``nx`` counts grid points
    including both boundaries.
    """

    def __init__(self, nx: int = 512, nt: int = 2000, nu: float = BURGERS_NU, t_end: float = 1.0,
                 newton_tol: float = 1e-12, max_newton: int = 30):
        self.x = np.linspace(-1.0, 1.0, nx)
        self.t = np.linspace(0.0, t_end, nt + 1)
        self.nu = nu
        dx = self.x[1] - self.x[0]
        dt = self.t[1] - self.t[0]
        u = -np.sin(math.pi * self.x)
        u[0] = u[-1] = 0.0
        sol = np.empty((nt + 1, nx))
        sol[0] = u
        for k in range(nt):
            u = self._step(u, dx, dt, newton_tol, max_newton)
            sol[k + 1] = u
        self.u = sol

    def _rhs(self, u, dx):
        # interior values of -(u^2/2)_x + nu u_xx
        f = 0.5 * u * u
        return -(f[2:] - f[:-2]) / (2 * dx) + self.nu * (u[2:] - 2 * u[1:-1] + u[:-2]) / dx**2

    def _step(self, u0, dx, dt, tol, max_newton):
        explicit = u0[1:-1] + 0.5 * dt * self._rhs(u0, dx)
        u = u0.copy()
        n = len(u) - 2
        a = self.nu / dx**2
        for _ in range(max_newton):
            g = u[1:-1] - 0.5 * dt * self._rhs(u, dx) - explicit
            # Jacobian of g with respect to interior u: tridiagonal
            ab = np.zeros((3, n))
            ab[1] = 1.0 + 0.5 * dt * 2 * a
            ab[0, 1:] = 0.5 * dt * (u[2:-1] / (2 * dx) - a)     # d g_i / d u_{i+1}
            ab[2, :-1] = 0.5 * dt * (-u[1:-2] / (2 * dx) - a)   # d g_i / d u_{i-1}
            du = solve_banded((1, 1), ab, -g)
            u[1:-1] += du
            if np.max(np.abs(du)) < tol:
                break
        else:
            raise RuntimeError("Newton iteration did not converge")
        return u

    def __call__(self, x, t):
        interp = RegularGridInterpolator((self.t, self.x), self.u, method="cubic")
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        return interp(np.column_stack([t.ravel(), x.ravel()])).reshape(x.shape)


def burgers_cole_hopf(x, t, nu: float = BURGERS_NU, n_quad: int = 4001, width: float = 12.0):
    """Cole-Hopf solution for the sine initial profile, by trapezoid quadrature.

    u = -int sin(pi(x-y)) F(x-y) G(y) dy / int F(x-y) G(y) dy with
    F(s) = exp(-cos(pi s) / (2 pi nu)) and G the heat kernel; weights are
    combined in log space since F spans many orders of magnitude.
    """
    x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
    out = np.empty(x.shape)
    z = np.linspace(-width, width, n_quad)
    flat_x, flat_t, flat_o = x.ravel(), t.ravel(), out.reshape(-1)
    for i, (xi, ti) in enumerate(zip(flat_x, flat_t)):
        if ti <= 0.0:
            flat_o[i] = -math.sin(math.pi * xi)
            continue
        s = xi - math.sqrt(4 * nu * ti) * z
        logw = -np.cos(math.pi * s) / (2 * math.pi * nu) - z * z
        num, sign = logsumexp(logw, b=np.sin(math.pi * s), return_sign=True)
        den = logsumexp(logw)
        flat_o[i] = -sign * math.exp(num - den)
    return out
