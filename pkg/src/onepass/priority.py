"""Error-based replay priorities, the smoothing schedule, and proportional sampling.

Priorities come from the learner's loss on an example, discounted early in
training by a smoothing factor that ramps from 0 to 1::

    priority = 1 - alpha * exp(-loss)

With cross-entropy this is ``1 - alpha * f_y`` where ``f_y`` is the model's
probability on the true label. Replay slots are drawn in proportion to their
priority through a :class:`SumTree`, and the bias this introduces is undone by
importance weights ``w ~ 1 / priority`` normalized to mean 1 per batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

DEFAULT_PRIORITY_FLOOR = 1e-3


class EmptyBufferError(RuntimeError):
    """Raised when sampling from a tree whose total priority is zero."""


@dataclass(frozen=True)
class ScheduleState:
    global_step: int
    max_step: int

    def __post_init__(self) -> None:
        if self.max_step < 1:
            raise ValueError(f"max_step must be >= 1, got {self.max_step}")
        if not 0 <= self.global_step <= self.max_step:
            raise ValueError(
                f"global_step must lie in [0, {self.max_step}], got {self.global_step}"
            )


def alpha_schedule(
    state: ScheduleState, mode: Literal["scaled", "literal"] = "scaled"
) -> float:
    """Smoothing factor for the current global step.

    ``scaled`` (default) is ``1 - cos(pi/2 * T/T_max)`` and spans exactly
    [0, 1]. ``literal`` is ``1 - cos(T/T_max)``, which tops out near 0.46.
    """
    frac = state.global_step / state.max_step
    if mode == "scaled":
        if state.global_step == state.max_step:
            return 1.0
        return 1.0 - math.cos(0.5 * math.pi * frac)
    if mode == "literal":
        return 1.0 - math.cos(frac)
    raise ValueError(f"unknown alpha schedule {mode!r}")


def priority(loss, alpha: float, floor: float = DEFAULT_PRIORITY_FLOOR):
    """Replay priority ``max(floor, 1 - alpha * exp(-loss))``.

    Accepts a scalar or an array of losses; returns the same shape.
    """
    loss_arr = np.asarray(loss, dtype=np.float64)
    if np.any(loss_arr < 0) or np.any(np.isnan(loss_arr)):
        raise ValueError("loss must be non-negative")
    raw = 1.0 - alpha * np.exp(-loss_arr)
    out = np.maximum(floor, raw)
    if out.ndim == 0:
        return float(out)
    return out


def priority_from_confidence(prob_true, alpha: float, floor: float = DEFAULT_PRIORITY_FLOOR):
    """Same priority computed from the model's probability on the true label."""
    p = np.asarray(prob_true, dtype=np.float64)
    out = np.maximum(floor, 1.0 - alpha * p)
    if out.ndim == 0:
        return float(out)
    return out


class SumTree:
    """Array-backed binary tree whose internal nodes hold sums of their children.

    Leaves are padded to a power of two; node 1 is the root and leaf ``i``
    lives at ``size + i``. Parents are recomputed from their children on every
    update instead of being shifted by a delta, so no rounding drift builds up.
    """

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        size = 1
        while size < self.capacity:
            size *= 2
        self._size = size
        self._depth = size.bit_length() - 1
        self._nodes = np.zeros(2 * size, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self._nodes[1])

    @property
    def leaves(self) -> np.ndarray:
        return self._nodes[self._size : self._size + self.capacity]

    def __getitem__(self, slot: int) -> float:
        self._check_slot(slot)
        return float(self._nodes[self._size + slot])

    def _check_slot(self, slot: int) -> None:
        if not 0 <= slot < self.capacity:
            raise IndexError(f"slot {slot} out of range for capacity {self.capacity}")

    def update(self, slot: int, value: float) -> None:
        self._check_slot(slot)
        if not value >= 0:
            raise ValueError(f"priority must be >= 0, got {value}")
        nodes = self._nodes
        i = self._size + slot
        nodes[i] = value
        i //= 2
        while i >= 1:
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1]
            i //= 2

    def rebuild(self) -> None:
        nodes = self._nodes
        for i in range(self._size - 1, 0, -1):
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1]

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf index whose cumulative-priority interval contains each ``mass``."""
        nodes = self._nodes
        idx = np.ones(mass.shape, dtype=np.int64)
        u = mass.astype(np.float64, copy=True)
        for _ in range(self._depth):
            left = nodes[2 * idx]
            right = nodes[2 * idx + 1]
            # an empty subtree is never entered, whatever rounding does to u
            go_right = ((u >= left) & (right > 0)) | (left <= 0)
            u = np.where(go_right, u - left, u)
            idx = 2 * idx + go_right
        return idx - self._size

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``count`` slots with replacement, each with probability leaf / total."""
        total = self._nodes[1]
        if not total > 0:
            raise EmptyBufferError("cannot sample: total priority is zero")
        return self.find(rng.random(count) * total)


def importance_weights(priorities, floor: float = DEFAULT_PRIORITY_FLOOR) -> np.ndarray:
    """Inverse-priority weights normalized to mean 1."""
    p = np.asarray(priorities, dtype=np.float64)
    if p.size == 0:
        raise ValueError("no priorities given")
    # tolerate the floor itself after float round trips
    if np.any(p < floor * (1 - 1e-12)) or not np.all(np.isfinite(p)):
        raise ValueError(f"priorities must be finite and >= {floor}")
    raw = 1.0 / p
    return raw / raw.mean()


@dataclass
class WeightedBatch:
    """Decoded examples with per-example loss weights.

    Incoming batches carry unit weights; replay batches carry importance
    weights with mean 1 (or unit weights when correction is disabled).
    """

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    source: Literal["incoming", "replay"] = "incoming"

    def __post_init__(self) -> None:
        if self.weights is None:
            self.weights = np.ones(len(self.y), dtype=np.float64)
        if len(self.x) != len(self.y) or len(self.y) != len(self.weights):
            raise ValueError("x, y and weights must have equal length")

    def __len__(self) -> int:
        return len(self.y)
