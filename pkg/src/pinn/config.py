"""Problem configuration files (TOML) with strict validation.

Every error names the offending field path, e.g. ``conditions[1].type``.
Unknown keys are errors.  Relative paths (data file, output directory) are
resolved against the config file's directory.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .conditions import ConditionFn, DirichletBC, InitialCondition, PeriodicBC
from .domain import IDENT, LHS, RESERVED, TEMPORAL, UNIFORM, Domain, DomainError
from .dsl import DSLError, ParamSet, parse
from .net import MLPSpec
from .solver import SolverConfig

MAX_GRID_POINTS = 10**7
DEFAULT_RESOLUTION = 100


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass
class DimensionConfig:
    name: str
    lower: float
    upper: float
    kind: str = "spatial"


@dataclass
class ParamConfig:
    init: float
    trainable: bool = True


@dataclass
class PdeConfig:
    residual: str
    params: dict[str, ParamConfig] = field(default_factory=dict)


@dataclass
class ConditionConfig:
    type: str
    value: float | str | None = None
    dim: str | None = None
    side: str | None = None
    match_orders: list[int] | None = None
    n_points: int | None = None
    seed: int | None = None


@dataclass
class NetworkConfig:
    layers: list[int]
    activation: str = "tanh"


@dataclass
class OptimizerConfig:
    name: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    param_lr: float | None = None


@dataclass
class SelfAdaptiveConfig:
    enabled: bool = False
    lr_lambda: float = 5e-3


@dataclass
class TrainingConfig:
    iterations: int = 1000
    n_r: int = 10000
    n_0: int = 100
    n_b: int = 100
    sampling: str = LHS
    workers: int = 1
    seed: int = 0
    log_every: int = 100
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    self_adaptive: SelfAdaptiveConfig = field(default_factory=SelfAdaptiveConfig)


@dataclass
class DataConfig:
    path: str | None = None


@dataclass
class OutputConfig:
    dir: str
    resolution: dict[str, int]


@dataclass
class ProblemConfig:
    dims: list[DimensionConfig]
    pde: PdeConfig
    network: NetworkConfig
    conditions: list[ConditionConfig] = field(default_factory=list)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output: OutputConfig | None = None

    # -- derived objects ---------------------------------------------------------
    def domain(self) -> Domain:
        dom = Domain()
        for d in self.dims:
            dom = dom.add(d.name, d.lower, d.upper, d.kind)
        return dom

    def param_set(self) -> ParamSet:
        names = list(self.pde.params)
        return ParamSet(names, [self.pde.params[n].init for n in names],
                        [self.pde.params[n].trainable for n in names])

    def residual(self):
        return parse(self.pde.residual, [d.name for d in self.dims], list(self.pde.params))

    def net_spec(self) -> MLPSpec:
        return MLPSpec.from_layers(self.network.layers, self.network.activation)

    def condition_objects(self, domain: Domain | None = None) -> list:
        domain = domain or self.domain()
        out = []
        for c in self.conditions:
            if c.type == "initial":
                out.append(InitialCondition(_fn(c.value, domain), c.n_points, c.seed))
            elif c.type == "dirichlet":
                value = c.value if isinstance(c.value, float) else _fn(c.value, domain)
                out.append(DirichletBC(c.dim, c.side, value, c.n_points, c.seed))
            else:
                out.append(PeriodicBC(c.dim, frozenset(c.match_orders), c.n_points, c.seed))
        return out

    def solver_config(self) -> SolverConfig:
        t = self.training
        o = t.optimizer
        return SolverConfig(n_r=t.n_r, n_0=t.n_0, n_b=t.n_b, sampling=t.sampling,
                            optimizer=o.name, lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps,
                            param_lr=o.param_lr, iterations=t.iterations,
                            self_adaptive=t.self_adaptive.enabled,
                            lr_lambda=t.self_adaptive.lr_lambda, workers=t.workers, seed=t.seed)

    # -- serialization -------------------------------------------------------------
    def to_dict(self) -> dict:
        return _strip_none({
            "domain": {"dims": [asdict(d) for d in self.dims]},
            "pde": {"residual": self.pde.residual,
                    "params": {k: asdict(v) for k, v in self.pde.params.items()}},
            "conditions": [asdict(c) for c in self.conditions],
            "network": asdict(self.network),
            "training": asdict(self.training),
            "data": asdict(self.data),
            "output": asdict(self.output) if self.output else None,
        })

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_strip_none(v) for v in obj]
    return obj


def _fn(value, domain: Domain) -> ConditionFn:
    return ConditionFn.parse(str(value) if not isinstance(value, str) else value, domain)


# -- validation helpers ------------------------------------------------------------
class _Table:
    """Consume keys from one TOML table, reporting paths on error."""

    def __init__(self, data, path: str):
        if not isinstance(data, dict):
            raise ConfigError(path, "expected a table")
        self.data = dict(data)
        self.path = path

    def sub(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def take(self, key, kind, default=..., check=None):
        p = self.sub(key)
        if key not in self.data:
            if default is ...:
                raise ConfigError(p, "required field is missing")
            return default
        v = self.data.pop(key)
        v = _coerce(v, kind, p)
        if check is not None:
            msg = check(v)
            if msg:
                raise ConfigError(p, msg)
        return v

    def raw(self, key, default=...):
        if key not in self.data:
            if default is ...:
                raise ConfigError(self.sub(key), "required field is missing")
            return default
        return self.data.pop(key)

    def done(self):
        if self.data:
            key = sorted(self.data)[0]
            raise ConfigError(self.sub(key), "unknown key")


def _coerce(v, kind, path):
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(path, f"expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            raise ConfigError(path, "must be finite")
        return v
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(path, f"expected an integer, got {v!r}")
        return v
    if kind is bool:
        if not isinstance(v, bool):
            raise ConfigError(path, f"expected true/false, got {v!r}")
        return v
    if kind is str:
        if not isinstance(v, str):
            raise ConfigError(path, f"expected a string, got {v!r}")
        return v
    if kind is list:
        if not isinstance(v, list):
            raise ConfigError(path, f"expected a list, got {v!r}")
        return v
    return v


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _positive(v):
    return None if v > 0 else "must be > 0"


def load_config(path) -> ProblemConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("", f"parse error in {path}: {exc}") from exc
    return from_dict(raw, base=path.parent.resolve())


def from_dict(raw: dict, base: Path | None = None) -> ProblemConfig:
    base = base or Path.cwd()
    top = _Table(raw, "")

    # domain
    dom_t = _Table(top.raw("domain"), "domain")
    dims_raw = dom_t.take("dims", list)
    dom_t.done()
    if not dims_raw:
        raise ConfigError("domain.dims", "at least one dimension is required")
    dims = []
    domain = Domain()
    for i, d in enumerate(dims_raw):
        t = _Table(d, f"domain.dims[{i}]")
        dc = DimensionConfig(
            name=t.take("name", str),
            lower=t.take("lower", float),
            upper=t.take("upper", float),
            kind=t.take("kind", str, "spatial",
                        lambda k: None if k in ("spatial", TEMPORAL) else "must be 'spatial' or 'temporal'"),
        )
        t.done()
        try:
            domain = domain.add(dc.name, dc.lower, dc.upper, dc.kind)
        except DomainError as exc:
            raise ConfigError(t.path, str(exc)) from exc
        dims.append(dc)
    names = domain.names

    # pde
    pde_t = _Table(top.raw("pde"), "pde")
    residual = pde_t.take("residual", str)
    params = {}
    params_t = _Table(pde_t.raw("params", {}), "pde.params")
    for pname in list(params_t.data):
        pt = _Table(params_t.raw(pname), f"pde.params.{pname}")
        if not IDENT.match(pname) or pname in RESERVED or pname in names or pname.startswith("u_"):
            raise ConfigError(pt.path, "invalid parameter name (must be an identifier distinct "
                                       "from dimension names and reserved words)")
        params[pname] = ParamConfig(pt.take("init", float), pt.take("trainable", bool, True))
        pt.done()
    pde_t.done()
    try:
        parse(residual, names, list(params))
    except DSLError as exc:
        raise ConfigError("pde.residual", str(exc)) from exc

    # conditions
    conds = []
    for i, c in enumerate(top.raw("conditions", [])):
        t = _Table(c, f"conditions[{i}]")
        ctype = t.take("type", str)
        if ctype not in ("initial", "dirichlet", "periodic"):
            raise ConfigError(t.sub("type"),
                              f"unknown condition type {ctype!r} (expected initial, dirichlet or periodic)")
        cc = ConditionConfig(type=ctype)
        cc.n_points = t.take("n_points", int, None, _nonneg)
        cc.seed = t.take("seed", int, None)
        if ctype in ("dirichlet", "periodic"):
            cc.dim = t.take("dim", str)
            if cc.dim not in names:
                raise ConfigError(t.sub("dim"), f"unknown dimension {cc.dim!r}")
            if domain[cc.dim].kind == TEMPORAL:
                raise ConfigError(t.sub("dim"), "boundary conditions need a spatial dimension")
        if ctype == "initial":
            if domain.temporal is None:
                raise ConfigError(t.path, "initial condition requires a temporal dimension")
            cc.value = _condition_value(t, domain, allow_number=False)
        elif ctype == "dirichlet":
            cc.side = t.take("side", str, check=lambda s: None if s in ("lower", "upper")
                             else "must be 'lower' or 'upper'")
            cc.value = _condition_value(t, domain, allow_number=True)
        else:
            orders = t.take("match_orders", list, [0, 1])
            if not orders or any(o not in (0, 1) or isinstance(o, bool) for o in orders):
                raise ConfigError(t.sub("match_orders"), "must be a non-empty subset of [0, 1]")
            cc.match_orders = sorted(set(orders))
        t.done()
        conds.append(cc)

    # network
    net_t = _Table(top.raw("network"), "network")
    layers = net_t.take("layers", list)
    activation = net_t.take("activation", str, "tanh",
                            lambda a: None if a in ("tanh", "sin") else "must be 'tanh' or 'sin'")
    net_t.done()
    if len(layers) < 2 or any(isinstance(w, bool) or not isinstance(w, int) or w < 1 for w in layers):
        raise ConfigError("network.layers", "expected a list of positive integer widths, input to output")
    if layers[0] != len(names):
        raise ConfigError("network.layers",
                          f"input width {layers[0]} must equal the number of dimensions ({len(names)})")
    if layers[-1] != 1:
        raise ConfigError("network.layers", "output width must be 1")

    # training
    tr_t = _Table(top.raw("training", {}), "training")
    training = TrainingConfig(
        iterations=tr_t.take("iterations", int, 1000, _nonneg),
        n_r=tr_t.take("n_r", int, 10000, _positive),
        n_0=tr_t.take("n_0", int, 100, _nonneg),
        n_b=tr_t.take("n_b", int, 100, _nonneg),
        sampling=tr_t.take("sampling", str, LHS,
                           lambda s: None if s in (LHS, UNIFORM) else f"must be {LHS!r} or {UNIFORM!r}"),
        workers=tr_t.take("workers", int, 1, _positive),
        seed=tr_t.take("seed", int, 0),
        log_every=tr_t.take("log_every", int, 100, _positive),
    )
    opt_t = _Table(tr_t.raw("optimizer", {}), "training.optimizer")
    training.optimizer = OptimizerConfig(
        name=opt_t.take("name", str, "adam",
                        lambda s: None if s in ("adam", "sgd") else "must be 'adam' or 'sgd'"),
        lr=opt_t.take("lr", float, 1e-3, _positive),
        beta1=opt_t.take("beta1", float, 0.9, lambda b: None if 0 <= b < 1 else "must be in [0, 1)"),
        beta2=opt_t.take("beta2", float, 0.999, lambda b: None if 0 <= b < 1 else "must be in [0, 1)"),
        eps=opt_t.take("eps", float, 1e-8, _positive),
        param_lr=opt_t.take("param_lr", float, None, _positive),
    )
    opt_t.done()
    sa_t = _Table(tr_t.raw("self_adaptive", {}), "training.self_adaptive")
    training.self_adaptive = SelfAdaptiveConfig(sa_t.take("enabled", bool, False),
                                                sa_t.take("lr_lambda", float, 5e-3, _positive))
    sa_t.done()
    tr_t.done()

    # data
    data_t = _Table(top.raw("data", {}), "data")
    dpath = data_t.take("path", str, None)
    data_t.done()
    data = DataConfig(str((base / dpath).resolve()) if dpath else None)

    # output
    out_t = _Table(top.raw("output", {}), "output")
    odir = out_t.take("dir", str, "out")
    res_t = _Table(out_t.raw("resolution", {}), "output.resolution")
    resolution = {}
    for n in names:
        resolution[n] = res_t.take(n, int, DEFAULT_RESOLUTION,
                                   lambda r: None if r >= 1 else "must be >= 1")
    res_t.done()
    out_t.done()
    if math.prod(resolution.values()) > MAX_GRID_POINTS:
        raise ConfigError("output.resolution",
                          f"grid has {math.prod(resolution.values())} points; the limit is "
                          f"{MAX_GRID_POINTS}; lower the per-dimension resolution")
    output = OutputConfig(str((base / odir).resolve()), resolution)
    top.done()

    return ProblemConfig(dims, PdeConfig(residual, params), NetworkConfig(list(layers), activation),
                         conds, training, data, output)


def _condition_value(t: _Table, domain: Domain, allow_number: bool):
    p = t.sub("value")
    v = t.raw("value")
    if isinstance(v, bool):
        raise ConfigError(p, "expected a number or an expression string")
    if isinstance(v, (int, float)):
        if not allow_number:
            return _check_expr(str(float(v)), domain, p)
        return float(v)
    if not isinstance(v, str):
        raise ConfigError(p, "expected a number or an expression string")
    return _check_expr(v, domain, p)


def _check_expr(text: str, domain: Domain, path: str) -> str:
    try:
        ConditionFn.parse(text, domain)
    except DSLError as exc:
        raise ConfigError(path, str(exc)) from exc
    return text


def emit_config(cfg: ProblemConfig, path) -> None:
    Path(path).write_text(cfg.dumps())


def read_samples(path, names: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Sample-data CSV with header ``<dims...>,u``; returns (points, targets)."""
    import csv

    expected = list(names) + ["u"]
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError("data.path", f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise ConfigError("data.path", f"header must be {','.join(expected)}, got "
                                           f"{','.join(header) if header else '(empty file)'}")
        rows = []
        for rowno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected):
                raise ConfigError("data.path", f"row {rowno}: expected {len(expected)} columns, "
                                               f"got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ConfigError("data.path", f"row {rowno}: {exc}") from exc
            if not all(math.isfinite(v) for v in vals):
                raise ConfigError("data.path", f"row {rowno}: non-finite value")
            rows.append(vals)
    arr = np.array(rows, dtype=float).reshape(-1, len(expected))
    return arr[:, :-1], arr[:, -1]


def read_points(path, names: list[str]) -> np.ndarray:
    """Points CSV with header ``<dims...>``."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return np.zeros((0, len(names)))
        if [h.strip() for h in header] != list(names):
            raise ConfigError("points", f"header must be {','.join(names)}, got {','.join(header)}")
        rows = []
        for rowno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(names):
                raise ConfigError("points", f"row {rowno}: expected {len(names)} columns, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ConfigError("points", f"row {rowno}: {exc}") from exc
    return np.array(rows, dtype=float).reshape(-1, len(names))
