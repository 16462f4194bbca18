"""First-order optimizers: Adam (default) and plain SGD."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class OptimizerError(ValueError):
    pass


def _check(grad: np.ndarray, params: np.ndarray) -> None:
    if grad.shape != params.shape:
        raise OptimizerError(f"gradient shape {grad.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        raise OptimizerError("non-finite gradient")


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-3

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, **hyper)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    _check(grad, params)
    if state.m.shape != params.shape:
        raise OptimizerError("optimizer state does not match parameter count")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, step=t), new


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    _check(grad, params)
    return params - lr * grad


class Adam:
    """Stateful wrapper used by the training loop."""

    def __init__(self, n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.state = AdamState.zeros(n, beta1=beta1, beta2=beta2, eps=eps, lr=lr)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.state, out = adam_step(self.state, params, grad)
        return out


class SGD:
    def __init__(self, n: int, lr: float = 1e-3):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return sgd_step(params, grad, self.lr)


def make_optimizer(name: str, n: int, lr: float, **hyper):
    if name == "adam":
        return Adam(n, lr=lr, **hyper)
    if name == "sgd":
        return SGD(n, lr=lr)
    raise OptimizerError(f"unknown optimizer {name!r}; choose 'adam' or 'sgd'")
