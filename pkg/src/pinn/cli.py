"""Command-line entry point: ``pinn solve | discover | eval``.

Exit codes: 0 success, 1 I/O failure, 2 invalid configuration or inputs,
3 training diverged (the last good checkpoint is still written).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import net as nn
from . import solver
from .config import ConfigError, ProblemConfig, load_config, read_points, read_samples
from .domain import cartesian_grid, write_csv
from .solver import SampleSet, SolverError, TrainingDivergedError

log = logging.getLogger("pinn")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _load(args) -> ProblemConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.training = replace(cfg.training, seed=args.seed)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        cfg.training = replace(cfg.training, workers=args.workers)
    if getattr(args, "iterations", None) is not None:
        cfg.training = replace(cfg.training, iterations=args.iterations)
    if args.out is not None:
        cfg.output = replace(cfg.output, dir=str(Path(args.out).resolve()))
    return cfg


def _prepare_outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(EXIT_IO, f"output directory {out} is not writable: {exc.strerror}") from exc
    return out


def _build(cfg: ProblemConfig, mode: str):
    domain = cfg.domain()
    samples = None
    if cfg.data.path is not None:
        pts, vals = read_samples(cfg.data.path, domain.names)
        samples = SampleSet(pts, vals)
    params = cfg.param_set()
    if mode == "forward" and params.trainable_names:
        raise ConfigError("pde.params", f"parameters {params.trainable_names} are trainable; "
                                        "use `discover`, or mark them trainable = false")
    if mode == "discovery":
        if not params.trainable_names:
            raise ConfigError("pde.params", "no trainable parameters to discover; use `solve`")
        if samples is None or len(samples.points) == 0:
            raise ConfigError("data.path", "discovery requires sample data")
    try:
        return solver.compile(domain, cfg.residual(), cfg.condition_objects(domain), samples,
                              cfg.net_spec(), cfg.solver_config(), params, mode)
    except (SolverError, ValueError) as exc:
        raise ConfigError("", str(exc)) from exc


def _write_outputs(problem, cfg: ProblemConfig, out: Path, history, mode: str) -> None:
    nn.save(problem.weights, problem.spec, out / "weights.pinn")
    history.write_jsonl(out / "history.jsonl")
    (out / "resolved-config.toml").write_text(cfg.dumps())
    grid = cartesian_grid(problem.domain, cfg.output.resolution)
    u = solver.predict(problem, grid)
    write_csv(out / "solution.csv", list(problem.domain.names) + ["u"],
              np.column_stack([grid, u]))
    if mode == "discovery":
        trace = [{"iteration": r.iteration, **r.params} for r in history]
        (out / "params.json").write_text(json.dumps(
            {"estimates": dict(solver.recover_parameters(problem)), "trace": trace}, indent=2) + "\n")


def _train(args, mode: str) -> int:
    cfg = _load(args)
    out = _prepare_outdir(cfg.output.dir)
    problem = _build(cfg, mode)
    every = cfg.training.log_every

    def progress(rec):
        if rec.iteration % every == 0:
            extra = " ".join(f"{k}={v:.6g}" for k, v in rec.params.items())
            log.info("iter %d loss %.6e (s %.3e r %.3e b %.3e 0 %.3e) %s", rec.iteration,
                     rec.loss.total, rec.loss.l_s, rec.loss.l_r, rec.loss.l_b, rec.loss.l_0, extra)

    try:
        solver.fit(problem, callback=progress)
    except TrainingDivergedError as exc:
        _write_outputs_safely(problem, cfg, out, mode)
        raise CliError(EXIT_DIVERGED, str(exc)) from exc
    try:
        _write_outputs(problem, cfg, out, problem.history, mode)
    except OSError as exc:
        raise CliError(EXIT_IO, f"writing outputs to {out}: {exc}") from exc
    log.info("final loss %.6e; outputs in %s", problem.history[-1].loss.total
             if len(problem.history) else float("nan"), out)
    for name, value in solver.recover_parameters(problem):
        log.info("%s = %.10g", name, value)
    return EXIT_OK


def _write_outputs_safely(problem, cfg, out, mode):
    try:
        nn.save(problem.weights, problem.spec, out / "weights.pinn")
        problem.history.write_jsonl(out / "history.jsonl")
        if mode == "discovery":
            (out / "params.json").write_text(json.dumps(
                {"estimates": dict(solver.recover_parameters(problem)),
                 "trace": [{"iteration": r.iteration, **r.params} for r in problem.history]},
                indent=2) + "\n")
    except OSError as exc:
        log.error("could not write checkpoint: %s", exc)


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    try:
        spec, weights = nn.load(args.weights)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.weights}: {exc.strerror}") from exc
    except nn.ArchiveError as exc:
        raise CliError(EXIT_CONFIG, f"{args.weights}: {exc}") from exc
    if spec.layers != cfg.net_spec().layers or spec.activation != cfg.network.activation:
        raise CliError(EXIT_CONFIG, f"network mismatch: config has layers {cfg.network.layers} "
                                    f"({cfg.network.activation}), archive has {spec.layers} "
                                    f"({spec.activation})")
    domain = cfg.domain()
    try:
        pts = read_points(args.points, domain.names)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.points}: {exc.strerror}") from exc
    u = nn.forward_numpy(spec, weights, pts) if len(pts) else np.zeros(0)
    if len(pts) and not domain.contains(pts).all():
        log.warning("some evaluation points lie outside the domain; values are extrapolated")
    out = Path(args.out) if args.out else Path(cfg.output.dir)
    out = _prepare_outdir(str(out))
    try:
        write_csv(out / "predictions.csv", list(domain.names) + ["u"],
                  np.column_stack([pts, u]) if len(pts) else np.zeros((0, len(domain) + 1)))
    except OSError as exc:
        raise CliError(EXIT_IO, f"writing predictions: {exc}") from exc
    log.info("wrote %d predictions to %s", len(pts), out / "predictions.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pinn", description="Physics-informed neural network solver")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "forward problem: train u for fixed parameters"),
                           ("discover", "inverse problem: train u and the trainable parameters")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--iterations", type=int)
        s.add_argument("--quiet", action="store_true")
    e = sub.add_parser("eval", help="evaluate saved weights at points from a CSV")
    e.add_argument("--config", required=True)
    e.add_argument("--weights", required=True)
    e.add_argument("--points", required=True)
    e.add_argument("--out")
    e.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        if args.command == "solve":
            return _train(args, "forward")
        if args.command == "discover":
            return _train(args, "discovery")
        return cmd_eval(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
