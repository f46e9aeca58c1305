"""Logistic-regression primitives.

Weights are plain ``(d + 1,)`` float arrays; the last entry is the bias,
paired with a constant-1 column appended to the (already z-scored) features.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .cohort import SiteDataset


class ConfigError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int, where: str = ""):
        super().__init__(f"non-finite weights at iteration {iteration}{' in ' + where if where else ''}")
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    learning_rate: float = 0.05
    local_iterations: int = 1
    global_iterations: int = 3000
    eta: float = 0.1
    alpha: float = 1.0

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError(f"learning_rate must be a positive finite number, got {self.learning_rate}")
        if int(self.global_iterations) != self.global_iterations or self.global_iterations < 1:
            raise ConfigError(f"global_iterations must be an integer >= 1, got {self.global_iterations}")
        if int(self.local_iterations) != self.local_iterations or self.local_iterations < 1:
            raise ConfigError(f"local_iterations must be an integer >= 1, got {self.local_iterations}")
        if not self.eta > 0:
            raise ConfigError(f"eta must be > 0, got {self.eta}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")

    def to_dict(self) -> dict:
        return asdict(self)


def zeros(d: int) -> np.ndarray:
    return np.zeros(d + 1)


def augment(X: np.ndarray) -> np.ndarray:
    """Append the constant bias column."""
    return np.hstack([X, np.ones((X.shape[0], 1))])


def sigmoid(z):
    out = expit(np.asarray(z, dtype=float))
    return out if out.ndim else float(out)


def _check(w: np.ndarray, data: SiteDataset) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (data.d + 1,):
        raise ValueError(f"weights have shape {w.shape}, expected ({data.d + 1},) for d={data.d}")
    return w


def _loss(w: np.ndarray, Xa: np.ndarray, y: np.ndarray) -> float:
    m = Xa @ w
    # -[y log h + (1-y) log(1-h)] == log(1 + e^m) - y m
    return float(np.mean(np.logaddexp(0.0, m) - y * m))


def _grad(w: np.ndarray, Xa: np.ndarray, y: np.ndarray) -> np.ndarray:
    return Xa.T @ (expit(Xa @ w) - y) / Xa.shape[0]


def _loss_and_grad(w: np.ndarray, Xa: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    m = Xa @ w
    loss = float(np.mean(np.logaddexp(0.0, m) - y * m))
    return loss, Xa.T @ (expit(m) - y) / Xa.shape[0]


def logistic_loss(w: np.ndarray, data: SiteDataset) -> float:
    """Mean negative log-likelihood of ``data`` under weights ``w``."""
    w = _check(w, data)
    return _loss(w, augment(data.X), data.y)


def logistic_gradient(w: np.ndarray, data: SiteDataset) -> np.ndarray:
    w = _check(w, data)
    return _grad(w, augment(data.X), data.y)


def predict_scores(w: np.ndarray, data: SiteDataset) -> np.ndarray:
    w = _check(w, data)
    return sigmoid(augment(data.X) @ w)


def prox_local_update(w_prev: np.ndarray, data: SiteDataset, cfg: SolverConfig) -> np.ndarray:
    """Gradient steps on ``L_k(v) + ||w_prev - v||^2 / eta`` starting at ``v = w_prev``.

    The prox term's gradient vanishes on the first step, so a single local
    iteration is a plain gradient step on the local loss whatever ``eta`` is.
    """
    w_prev = _check(w_prev, data)
    Xa = augment(data.X)
    v = w_prev.copy()
    c = 2.0 / cfg.eta
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(cfg.local_iterations):
            v = v - cfg.learning_rate * (_grad(v, Xa, data.y) + c * (v - w_prev))
            if not np.all(np.isfinite(v)):
                raise DivergenceError(it + 1, "prox_local_update")
    return v
