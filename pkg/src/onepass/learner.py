"""Reference learners: softmax regression and a one-hidden-layer tanh MLP.

Parameters live in one flat float64 vector so the optimizer, finite-difference
checks and serialization all see the same thing. Training uses SGD with
Nesterov momentum in the common deep-learning form::

    v     = mu * v + g
    theta = theta - lr * (g + mu * v)

and a cosine learning-rate decay that reaches zero at ``t_max``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from onepass.priority import WeightedBatch

PROB_CLAMP = 1e-12
MAX_LOSS = -math.log(PROB_CLAMP)
MIN_LOSS = -math.log1p(-PROB_CLAMP)


class NumericalError(ArithmeticError):
    """Raised when a gradient or parameter update stops being finite."""


@dataclass(frozen=True)
class OptimizerConfig:
    initial_lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 128
    t_max: int = 1

    def __post_init__(self) -> None:
        if not self.initial_lr > 0:
            raise ValueError(f"initial_lr must be > 0, got {self.initial_lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")


@dataclass
class LearnerParams:
    theta: np.ndarray
    input_dim: int
    hidden_dim: int
    n_classes: int
    momentum_buffer: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.momentum_buffer is None:
            self.momentum_buffer = np.zeros_like(self.theta)
        expected = n_parameters(self.input_dim, self.hidden_dim, self.n_classes)
        if self.theta.shape != (expected,) or self.momentum_buffer.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {self.theta.shape}")

    def copy(self) -> LearnerParams:
        return LearnerParams(
            self.theta.copy(),
            self.input_dim,
            self.hidden_dim,
            self.n_classes,
            self.momentum_buffer.copy(),
        )

    def layers(self, theta: np.ndarray | None = None) -> list[np.ndarray]:
        """Views (W, b) per layer into ``theta``."""
        return _split(self.theta if theta is None else theta, self.input_dim, self.hidden_dim, self.n_classes)


def n_parameters(input_dim: int, hidden_dim: int, n_classes: int) -> int:
    if hidden_dim == 0:
        return input_dim * n_classes + n_classes
    return input_dim * hidden_dim + hidden_dim + hidden_dim * n_classes + n_classes


def _split(theta: np.ndarray, d: int, h: int, c: int) -> list[np.ndarray]:
    shapes = [(d, c), (c,)] if h == 0 else [(d, h), (h,), (h, c), (c,)]
    out, pos = [], 0
    for shape in shapes:
        size = math.prod(shape)
        out.append(theta[pos : pos + size].reshape(shape))
        pos += size
    return out


def init_params(
    input_dim: int, n_classes: int, hidden_dim: int = 0, rng: np.random.Generator | None = None
) -> LearnerParams:
    """Zeros for the linear model; U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights for the MLP."""
    theta = np.zeros(n_parameters(input_dim, hidden_dim, n_classes), dtype=np.float64)
    params = LearnerParams(theta, input_dim, hidden_dim, n_classes)
    if hidden_dim:
        if rng is None:
            raise ValueError("the MLP needs an rng for initialization")
        w1, _, w2, _ = params.layers()
        w1[...] = rng.uniform(-1, 1, w1.shape) / math.sqrt(input_dim)
        w2[...] = rng.uniform(-1, 1, w2.shape) / math.sqrt(hidden_dim)
    return params


class Learner(Protocol):
    """What the training harness needs from a model."""

    def predict(self, params: LearnerParams, x: np.ndarray) -> np.ndarray: ...

    def loss(self, params: LearnerParams, x: np.ndarray, y: np.ndarray) -> np.ndarray: ...

    def grad_step(
        self, params: LearnerParams, batch: WeightedBatch, lr: float, config: OptimizerConfig
    ) -> LearnerParams: ...


def _as_batch(params: LearnerParams, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"expected feature dimension {params.input_dim}, got shape {x.shape}")
    return x, single


def _forward(params: LearnerParams, x: np.ndarray, theta: np.ndarray | None = None):
    layers = params.layers(theta)
    if params.hidden_dim == 0:
        w, b = layers
        return x @ w + b, None
    w1, b1, w2, b2 = layers
    hidden = np.tanh(x @ w1 + b1)
    return hidden @ w2 + b2, hidden


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict(params: LearnerParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities; a single vector in gives a single vector out."""
    xb, single = _as_batch(params, x)
    logits, _ = _forward(params, xb)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs[0] if single else probs


def _check_labels(params: LearnerParams, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= params.n_classes):
        raise ValueError(f"class index outside [0, {params.n_classes})")
    return y


def loss(params: LearnerParams, x: np.ndarray, y) -> np.ndarray | float:
    """Per-example cross-entropy ``-log f_y``, clamped to [MIN_LOSS, MAX_LOSS]."""
    xb, single = _as_batch(params, x)
    yb = _check_labels(params, np.atleast_1d(y))
    logits, _ = _forward(params, xb)
    nll = -_log_softmax(logits)[np.arange(len(yb)), yb]
    out = np.clip(nll, MIN_LOSS, MAX_LOSS)
    return float(out[0]) if single else out


def weighted_loss(params: LearnerParams, batch: WeightedBatch, theta: np.ndarray | None = None) -> float:
    """Unclamped batch objective ``mean(w_i * loss_i)``."""
    xb, _ = _as_batch(params, batch.x)
    yb = _check_labels(params, batch.y)
    logits, _ = _forward(params, xb, theta)
    nll = -_log_softmax(logits)[np.arange(len(yb)), yb]
    return float(np.mean(batch.weights * nll))


def gradient(params: LearnerParams, batch: WeightedBatch) -> np.ndarray:
    """Gradient of ``mean(w_i * loss_i)`` with respect to the flat parameters."""
    xb, _ = _as_batch(params, batch.x)
    yb = _check_labels(params, batch.y)
    n = len(yb)
    logits, hidden = _forward(params, xb)
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    dlogits = probs
    dlogits[np.arange(n), yb] -= 1.0
    dlogits *= (np.asarray(batch.weights, dtype=np.float64) / n)[:, None]

    grad = np.empty_like(params.theta)
    g = params.layers(grad)
    if params.hidden_dim == 0:
        g[0][...] = xb.T @ dlogits
        g[1][...] = dlogits.sum(axis=0)
    else:
        _, _, w2, _ = params.layers()
        g[2][...] = hidden.T @ dlogits
        g[3][...] = dlogits.sum(axis=0)
        dpre = (dlogits @ w2.T) * (1.0 - hidden**2)
        g[0][...] = xb.T @ dpre
        g[1][...] = dpre.sum(axis=0)
    return grad


def grad_step(
    params: LearnerParams, batch: WeightedBatch, lr: float, config: OptimizerConfig
) -> LearnerParams:
    """One Nesterov-momentum SGD step on the weighted batch objective (in place)."""
    if len(batch) == 0:
        raise ValueError("cannot step on an empty batch")
    g = gradient(params, batch)
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise NumericalError(
            f"non-finite gradient at parameter {bad} "
            f"(max |theta| = {np.max(np.abs(params.theta)):.3g}, lr = {lr})"
        )
    v = params.momentum_buffer
    v *= config.momentum
    v += g
    params.theta -= lr * (g + config.momentum * v)
    return params


def cosine_lr(step: int, config: OptimizerConfig) -> float:
    if not 0 <= step <= config.t_max:
        raise ValueError(f"step {step} outside [0, {config.t_max}]")
    if step == config.t_max:
        return 0.0
    return 0.5 * config.initial_lr * (1.0 + math.cos(math.pi * step / config.t_max))


def evaluate(params: LearnerParams, x: np.ndarray, y: np.ndarray) -> float:
    """Top-1 accuracy; ties go to the lowest class index."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    xb, _ = _as_batch(params, x)
    logits, _ = _forward(params, xb)
    return float(np.mean(np.argmax(logits, axis=1) == y))


class SoftmaxLearner:
    """Module-level functions bundled behind the :class:`Learner` interface."""

    predict = staticmethod(predict)
    loss = staticmethod(loss)
    grad_step = staticmethod(grad_step)
    evaluate = staticmethod(evaluate)
