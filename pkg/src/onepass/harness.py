"""One-pass training with error-prioritized replay, plus the two baselines.

Per incoming mini-batch the loop

1. takes one gradient step on the incoming examples (unit weights),
2. takes ``k`` gradient steps on replay batches drawn from the buffer in
   proportion to priority and reweighted by inverse priority,
3. scores the incoming examples under the updated parameters and offers
   each one to the reservoir buffer.

Replay steps are skipped while the buffer holds less than one batch. The
schedule clock still advances through skipped steps, so the learning rate and
the smoothing factor both reach their endpoints exactly when the stream ends;
the compute metric counts only gradient steps actually taken.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from onepass import learner as lrn
from onepass.buffer import CODECS, BufferConfig, ReplayBuffer
from onepass.priority import (
    ScheduleState,
    WeightedBatch,
    alpha_schedule,
    importance_weights,
    priority,
)
from onepass.stream import Dataset, n_batches, one_pass_iter

TELEMETRY_FIELDS = ("step", "accuracy", "lr", "alpha", "mean_priority", "buffer_fill")


@dataclass(frozen=True)
class LearnerConfig:
    learner: str = "linear"
    hidden_dim: int = 0
    lr0: float = 0.1
    momentum: float = 0.9
    batch_size: int = 128

    def __post_init__(self) -> None:
        if self.learner not in ("linear", "mlp"):
            raise ValueError(f"learner must be 'linear' or 'mlp', got {self.learner!r}")
        if self.learner == "mlp" and self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1 for the mlp learner")
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def effective_hidden_dim(self) -> int:
        return self.hidden_dim if self.learner == "mlp" else 0

    def optimizer(self, t_max: int) -> lrn.OptimizerConfig:
        return lrn.OptimizerConfig(self.lr0, self.momentum, self.batch_size, t_max)


@dataclass(frozen=True)
class HarnessConfig:
    replay_steps: int = 0
    storage_fraction: float = 0.0
    baseline_epochs: int = 90
    beta: float = 1.5
    codec: str = "identity"
    sampling: str = "prioritized"
    importance_weights: bool = True
    update_priorities_on_replay: bool = False
    alpha_schedule: str = "scaled"
    priority_floor: float = 1e-3
    eval_points: int = 20

    def __post_init__(self) -> None:
        if self.replay_steps < 0:
            raise ValueError("replay_steps must be >= 0")
        if not 0 <= self.storage_fraction <= 1:
            raise ValueError(f"storage_fraction must lie in [0, 1], got {self.storage_fraction}")
        if self.baseline_epochs < 1:
            raise ValueError("baseline_epochs must be >= 1")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if self.codec not in CODECS:
            raise ValueError(f"codec must be one of {sorted(CODECS)}")
        if self.sampling not in ("prioritized", "uniform"):
            raise ValueError("sampling must be 'prioritized' or 'uniform'")
        if self.alpha_schedule not in ("scaled", "literal"):
            raise ValueError("alpha_schedule must be 'scaled' or 'literal'")
        if not 0 < self.priority_floor < 1:
            raise ValueError("priority_floor must lie in (0, 1)")
        if self.eval_points < 1:
            raise ValueError("eval_points must be >= 1")

    def capacity(self, n_train: int) -> int:
        return int(round(self.storage_fraction * n_train))


@dataclass
class RunReport:
    method: str
    top1_accuracy: float
    storage_metric: float
    compute_metric: float
    nominal_compute_metric: float
    gradient_steps: int
    replay_batches: int
    n_train: int
    batch_size: int
    buffer_capacity: int
    replay_steps: int
    epochs: int
    telemetry: list[dict] = field(default_factory=list)

    @property
    def effective_epochs(self) -> int:
        return self.epochs if self.method == "multi_epoch" else self.replay_steps + 1

    def to_dict(self) -> dict:
        return asdict(self)

    def telemetry_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=TELEMETRY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.telemetry:
            writer.writerow({k: _fmt(row[k]) for k in TELEMETRY_FIELDS})
        return buf.getvalue()


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def report_to_json(report: RunReport, extra: dict | None = None) -> str:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def compute_metrics(
    replay_steps: int,
    n_train: int,
    batch_size: int,
    buffer_capacity: int,
    baseline_epochs: int = 90,
    gradient_steps: int | None = None,
) -> tuple[float, float]:
    """(storage, compute) relative to a ``baseline_epochs``-epoch run over the full data.

    Without ``gradient_steps`` the compute metric is the nominal
    ``(k + 1) / baseline_epochs``; with it, the exact count of steps taken.
    """
    if min(n_train, batch_size, baseline_epochs) < 1 or replay_steps < 0 or buffer_capacity < 0:
        raise ValueError("counts must be positive")
    storage = buffer_capacity / n_train
    if gradient_steps is None:
        return storage, (replay_steps + 1) / baseline_epochs
    return storage, gradient_steps / (baseline_epochs * n_batches(n_train, batch_size))


def _eval_batches(total: int, points: int) -> set[int]:
    """Batch indices (0-based) after which accuracy is recorded; always includes the last."""
    marks = {max(1, round(j * total / points)) - 1 for j in range(1, points + 1)}
    marks.add(total - 1)
    return marks


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    init_ss, buffer_ss, sample_ss = np.random.SeedSequence(seed).spawn(3)
    return (
        np.random.default_rng(init_ss),
        np.random.default_rng(buffer_ss),
        np.random.default_rng(sample_ss),
    )


def _init(learner_cfg: LearnerConfig, dim: int, n_classes: int, rng: np.random.Generator) -> lrn.LearnerParams:
    return lrn.init_params(dim, n_classes, learner_cfg.effective_hidden_dim, rng)


def run_one_pass(
    config: HarnessConfig,
    train: Dataset,
    test: Dataset,
    learner_cfg: LearnerConfig,
    order_seed: int = 0,
    seed: int = 0,
    method: str = "epr",
) -> RunReport:
    n_train = len(train)
    batch_size = learner_cfg.batch_size
    k = config.replay_steps
    steps_per_epoch = n_batches(n_train, batch_size)
    t_max = (k + 1) * steps_per_epoch
    opt = learner_cfg.optimizer(t_max)
    capacity = config.capacity(n_train)
    if k > 0 and capacity < 1:
        raise ValueError(
            f"storage_fraction {config.storage_fraction} gives an empty buffer for {n_train} examples"
        )

    init_rng, buffer_rng, sample_rng = _rngs(seed)
    params = _init(learner_cfg, train.dim, train.n_classes, init_rng)
    buffer = None
    if capacity >= 1:
        buffer = ReplayBuffer(
            BufferConfig(capacity, config.beta, config.codec),
            train.dim,
            buffer_rng,
            priority_floor=config.priority_floor,
        )

    def alpha_at(t: int) -> float:
        return alpha_schedule(ScheduleState(t, t_max), config.alpha_schedule)

    checkpoints = _eval_batches(steps_per_epoch, config.eval_points)
    telemetry: list[dict] = []
    clock = 0
    grad_steps = 0
    replay_batches = 0

    for batch in one_pass_iter(train, order_seed, batch_size):
        lrn.grad_step(params, WeightedBatch(batch.x, batch.y), lrn.cosine_lr(clock, opt), opt)
        clock += 1
        grad_steps += 1

        for _ in range(k):
            if buffer is not None and len(buffer) >= batch_size:
                replay = _replay_batch(buffer, batch_size, config, sample_rng)
                lrn.grad_step(params, replay, lrn.cosine_lr(clock, opt), opt)
                grad_steps += 1
                replay_batches += 1
                if config.update_priorities_on_replay:
                    # duplicates within a batch get the same fresh value
                    fresh = priority(lrn.loss(params, replay.x, replay.y), alpha_at(clock + 1), config.priority_floor)
                    for slot, p in zip(replay.slots.tolist(), fresh.tolist()):
                        buffer.set_priority(slot, p)
            clock += 1

        if buffer is not None:
            pr = priority(lrn.loss(params, batch.x, batch.y), alpha_at(clock), config.priority_floor)
            for x_i, y_i, p_i in zip(batch.x, batch.y.tolist(), pr.tolist()):
                buffer.offer(x_i, y_i, p_i, step=clock)

        if batch.step_index in checkpoints:
            telemetry.append(
                {
                    "step": clock,
                    "accuracy": lrn.evaluate(params, test.x, test.y),
                    "lr": lrn.cosine_lr(clock, opt),
                    "alpha": alpha_at(clock),
                    "mean_priority": buffer.mean_priority() if buffer is not None else 0.0,
                    "buffer_fill": len(buffer) if buffer is not None else 0,
                }
            )

    storage, compute = compute_metrics(k, n_train, batch_size, capacity, config.baseline_epochs, grad_steps)
    _, nominal = compute_metrics(k, n_train, batch_size, capacity, config.baseline_epochs)
    return RunReport(
        method=method,
        top1_accuracy=telemetry[-1]["accuracy"],
        storage_metric=storage,
        compute_metric=compute,
        nominal_compute_metric=nominal,
        gradient_steps=grad_steps,
        replay_batches=replay_batches,
        n_train=n_train,
        batch_size=batch_size,
        buffer_capacity=capacity,
        replay_steps=k,
        epochs=1,
        telemetry=telemetry,
    )


@dataclass
class _ReplayBatch(WeightedBatch):
    slots: np.ndarray = None  # type: ignore[assignment]


def _replay_batch(
    buffer: ReplayBuffer, count: int, config: HarnessConfig, rng: np.random.Generator
) -> _ReplayBatch:
    if config.sampling == "uniform":
        slots = rng.integers(len(buffer), size=count)
        weights = np.ones(count)
    else:
        slots = buffer.tree.sample(count, rng)
        if config.importance_weights:
            weights = importance_weights(buffer.priorities(slots), config.priority_floor)
        else:
            weights = np.ones(count)
    x, y = buffer.read_slots(slots)
    return _ReplayBatch(x, y, weights, "replay", slots=slots)


def run_naive(
    train: Dataset,
    test: Dataset,
    learner_cfg: LearnerConfig,
    order_seed: int = 0,
    seed: int = 0,
    baseline_epochs: int = 90,
    eval_points: int = 20,
) -> RunReport:
    """Single pass, no buffer and no replay."""
    config = HarnessConfig(baseline_epochs=baseline_epochs, eval_points=eval_points)
    return run_one_pass(config, train, test, learner_cfg, order_seed, seed, method="naive")


def run_multi_epoch(
    epochs: int,
    train: Dataset,
    test: Dataset,
    learner_cfg: LearnerConfig,
    order_seed: int = 0,
    seed: int = 0,
    baseline_epochs: int = 90,
    eval_points: int = 20,
) -> RunReport:
    """Standard shuffled training with one cosine decay spanning all epochs.

    The first epoch's order matches :func:`run_naive` under the same
    ``order_seed``; each later epoch draws a fresh permutation.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    n_train = len(train)
    batch_size = learner_cfg.batch_size
    steps_per_epoch = n_batches(n_train, batch_size)
    t_max = epochs * steps_per_epoch
    opt = learner_cfg.optimizer(t_max)
    init_rng, _, _ = _rngs(seed)
    params = _init(learner_cfg, train.dim, train.n_classes, init_rng)
    order_rng = np.random.default_rng(order_seed)
    checkpoints = _eval_batches(t_max, eval_points)
    telemetry: list[dict] = []
    step = 0
    for _ in range(epochs):
        for batch in one_pass_iter(train, order_rng, batch_size):
            lrn.grad_step(params, WeightedBatch(batch.x, batch.y), lrn.cosine_lr(step, opt), opt)
            if step in checkpoints:
                telemetry.append(
                    {
                        "step": step + 1,
                        "accuracy": lrn.evaluate(params, test.x, test.y),
                        "lr": lrn.cosine_lr(step + 1, opt),
                        "alpha": 0.0,
                        "mean_priority": 0.0,
                        "buffer_fill": 0,
                    }
                )
            step += 1
    _, compute = compute_metrics(epochs - 1, n_train, batch_size, n_train, baseline_epochs, step)
    return RunReport(
        method="multi_epoch",
        top1_accuracy=telemetry[-1]["accuracy"],
        storage_metric=1.0,
        compute_metric=compute,
        nominal_compute_metric=epochs / baseline_epochs,
        gradient_steps=step,
        replay_batches=0,
        n_train=n_train,
        batch_size=batch_size,
        buffer_capacity=n_train,
        replay_steps=0,
        epochs=epochs,
        telemetry=telemetry,
    )
