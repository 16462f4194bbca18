"""Box domains and collocation / boundary / initial point sampling."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import Iterable

import numpy as np

IDENT = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")
RESERVED = {"u", "pi", "tanh", "sin", "cos", "exp"}

SPATIAL, TEMPORAL = "spatial", "temporal"
LHS, UNIFORM = "latin-hypercube", "uniform-random"


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    kind: str = SPATIAL

    def __post_init__(self):
        if not IDENT.match(self.name) or self.name in RESERVED or self.name.startswith("u_"):
            raise DomainError(f"invalid dimension name {self.name!r}")
        if self.kind not in (SPATIAL, TEMPORAL):
            raise DomainError(f"kind must be {SPATIAL!r} or {TEMPORAL!r}")
        if not float(self.lower) < float(self.upper):
            raise DomainError(f"dimension {self.name}: lower must be < upper")
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))


@dataclass(frozen=True)
class Domain:
    dims: tuple[Dimension, ...] = ()

    def add(self, name: str, lower: float, upper: float, kind: str = SPATIAL) -> "Domain":
        return add_dimension(self, Dimension(name, lower, upper, kind))

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def temporal(self) -> Dimension | None:
        for d in self.dims:
            if d.kind == TEMPORAL:
                return d
        return None

    def index(self, name: str) -> int:
        for i, d in enumerate(self.dims):
            if d.name == name:
                return i
        raise DomainError(f"unknown dimension {name!r}")

    def __getitem__(self, name: str) -> Dimension:
        return self.dims[self.index(name)]

    def __len__(self):
        return len(self.dims)

    def lower(self) -> np.ndarray:
        return np.array([d.lower for d in self.dims])

    def upper(self) -> np.ndarray:
        return np.array([d.upper for d in self.dims])

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lower()) & (pts <= self.upper()), axis=1)


def add_dimension(domain: Domain, dim: Dimension) -> Domain:
    if any(d.name == dim.name for d in domain.dims):
        raise DomainError(f"duplicate dimension name {dim.name!r}")
    if dim.kind == TEMPORAL and domain.temporal is not None:
        raise DomainError("a domain may have at most one temporal dimension")
    return Domain(domain.dims + (dim,))


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray
    role: str = "collocation"
    face: tuple[str, str] | None = None

    def __len__(self):
        return self.points.shape[0]

    def to_csv(self, path, names: Iterable[str]) -> None:
        write_csv(path, list(names), self.points)


def write_csv(path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.atleast_2d(rows) if len(rows) else []:
            w.writerow([repr(float(v)) for v in row])


def _unit_lhs(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """n points in (0,1)^d with one point per stratum in every marginal."""
    u = np.empty((n, d))
    tiny = np.nextafter(0.0, 1.0)
    for j in range(d):
        jitter = np.maximum(rng.random(n), tiny)
        u[:, j] = (rng.permutation(n) + jitter) / n
    return u


def _unit_uniform(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    return np.maximum(rng.random((n, d)), np.nextafter(0.0, 1.0))


def _scale(u: np.ndarray, dims: Iterable[Dimension]) -> np.ndarray:
    dims = list(dims)
    lo = np.array([d.lower for d in dims])
    hi = np.array([d.upper for d in dims])
    return np.clip(lo + u * (hi - lo), np.nextafter(lo, hi), np.nextafter(hi, lo))


def sample_collocation(domain: Domain, n: int, strategy: str = LHS, seed: int = 0) -> PointSet:
    if n < 1:
        raise DomainError("need at least one collocation point")
    if not domain.dims:
        raise DomainError("domain has no dimensions")
    rng = np.random.default_rng(seed)
    if strategy == LHS:
        u = _unit_lhs(rng, n, len(domain))
    elif strategy == UNIFORM:
        u = _unit_uniform(rng, n, len(domain))
    else:
        raise DomainError(f"unknown sampling strategy {strategy!r}")
    return PointSet(_scale(u, domain.dims), "collocation")


def _pinned(domain: Domain, pin: int, value: float, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    others = [d for i, d in enumerate(domain.dims) if i != pin]
    pts = np.empty((n, len(domain)))
    if others:
        free = _scale(_unit_lhs(rng, n, len(others)), others)
        pts[:, [i for i in range(len(domain)) if i != pin]] = free
    pts[:, pin] = value
    return pts


def sample_boundary(domain: Domain, name: str, side: str, n: int, seed: int = 0) -> PointSet:
    i = domain.index(name)
    dim = domain.dims[i]
    if dim.kind == TEMPORAL:
        raise DomainError(f"{name!r} is temporal; boundary faces must be spatial")
    if side not in ("lower", "upper"):
        raise DomainError("side must be 'lower' or 'upper'")
    value = dim.lower if side == "lower" else dim.upper
    return PointSet(_pinned(domain, i, value, n, seed), "boundary", (name, side))


def sample_initial(domain: Domain, n: int, seed: int = 0) -> PointSet:
    tdim = domain.temporal
    if tdim is None:
        raise DomainError("domain has no temporal dimension")
    return PointSet(_pinned(domain, domain.index(tdim.name), tdim.lower, n, seed), "initial")


def cartesian_grid(domain: Domain, resolution: dict[str, int]) -> np.ndarray:
    """Dense grid, last dimension varying fastest; endpoints included."""
    axes = [np.linspace(d.lower, d.upper, int(resolution[d.name])) for d in domain.dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)
