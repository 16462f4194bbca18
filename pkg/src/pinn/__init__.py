"""Physics-informed neural network solvers built on a small symbolic autodiff core."""
from .domain import Domain
from .dsl import ParamSet, parse
from .net import MLPSpec
from .solver import SampleSet, SolverConfig, compile, compute_loss, fit, predict, recover_parameters

__all__ = ["Domain", "MLPSpec", "ParamSet", "SampleSet", "SolverConfig", "compile",
           "compute_loss", "fit", "parse", "predict", "recover_parameters"]
