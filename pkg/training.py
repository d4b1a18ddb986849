"""Stochastic ELBO ascent with Adam: joint updates or alternating approximate E/M phases."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Protocol

import numpy as np

from aevb_data import DATA_STREAM, EVAL_STREAM, NOISE_STREAM, MetricsLog, MetricsRow, Split, TrainSchedule
from tensor_core import SeededRng, ShapeError, Tape, Tensor, gradients

logger = logging.getLogger(__name__)


class TrainingError(ValueError):
    """Training cannot continue; step is the update number at which it stopped."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class LatentModel(Protocol):
    tag: str

    @property
    def theta(self) -> dict[str, Tensor]: ...

    @property
    def phi(self) -> dict[str, Tensor]: ...

    def elbo(self, x: np.ndarray, labels: Optional[np.ndarray], rng: SeededRng, train: bool = True) -> Tensor: ...

    def eval_extras(self, x: np.ndarray, labels: Optional[np.ndarray]) -> dict[str, float]: ...


# === ADAM ===


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def new_adam_state(params: Mapping[str, Tensor], learning_rate: float) -> AdamState:
    return AdamState(
        learning_rate=learning_rate,
        m={name: np.zeros_like(p.data) for name, p in params.items()},
        v={name: np.zeros_like(p.data) for name, p in params.items()},
    )


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam descent step; params are updated in place."""
    if set(grads) != set(params):
        raise ShapeError(f"adam_step: gradients for {sorted(grads)} do not match parameters {sorted(params)}")
    for name, param in params.items():
        if np.shape(grads[name]) != param.shape:
            raise ShapeError(f"adam_step: gradient shape {np.shape(grads[name])} for {name} != {param.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)

    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, param in params.items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        param.data = param.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return state


# === STEPS ===


def train_step(
    model: LatentModel,
    x: np.ndarray,
    labels: Optional[np.ndarray],
    rng: SeededRng,
    phase: str,
    theta_state: AdamState,
    phi_state: AdamState,
    step: int = 0,
) -> float:
    """Ascend the batch-mean ELBO on the parameter sets enabled by phase; returns that mean."""
    with Tape():
        objective = model.elbo(x, labels, rng, train=True).mean()
        loss = -objective
    value = objective.item()
    if not np.isfinite(value):
        logger.error("Non-finite ELBO %r at step %d", value, step)
        raise TrainingError(f"Non-finite ELBO at step {step}", step)

    theta = model.theta if phase in ("joint", "M") else {}
    phi = model.phi if phase in ("joint", "E") else {}
    grads = gradients(loss, {**theta, **phi})
    if theta:
        adam_step(theta, {name: grads[name] for name in theta}, theta_state)
    if phi:
        adam_step(phi, {name: grads[name] for name in phi}, phi_state)
    return value


def evaluate(
    model: LatentModel,
    split: Split,
    step: int,
    split_name: str = "test",
    eval_seed: int = 12345,
    batch_size: int = 500,
    draws: int = 1,
) -> MetricsRow:
    """Mean ELBO over the split with a fixed noise seed, plus model-specific metrics.

    Each example's estimate averages draws noise draws before the standard error is taken.
    """
    if len(split) == 0:
        raise TrainingError("Cannot evaluate on an empty split", step)
    rng = SeededRng(eval_seed, EVAL_STREAM)
    values = np.zeros(len(split))
    for _ in range(draws):
        per_example = []
        for start in range(0, len(split), batch_size):
            chunk = split.take(np.arange(start, min(start + batch_size, len(split))))
            per_example.append(model.elbo(chunk.x, chunk.labels, rng, train=False).numpy())
        values += np.concatenate(per_example)
    values /= draws
    se = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    extras = model.eval_extras(split.x, split.labels)
    return MetricsRow(
        step=step,
        split=split_name,
        elbo=float(np.mean(values)),
        evidence=extras.get("evidence"),
        cond_entropy=extras.get("cond_entropy"),
        cluster_acc=extras.get("cluster_acc"),
        elbo_se=se,
        gap=extras.get("gap"),
    )


def _log_row(row: MetricsRow) -> None:
    extras = " ".join(
        f"{name}={value:.4f}"
        for name, value in (
            ("evidence", row.evidence),
            ("cond_entropy", row.cond_entropy),
            ("cluster_acc", row.cluster_acc),
            ("gap", row.gap),
        )
        if value is not None
    )
    logger.info("step %d %s elbo=%.4f (se %.4f) %s", row.step, row.split, row.elbo, row.elbo_se, extras)


class BatchSampler:
    """Shuffled passes over a split; the last partial batch of each pass is dropped."""

    def __init__(self, size: int, batch_size: int, rng: SeededRng):
        self.size = size
        self.batch_size = min(batch_size, size)
        self.rng = rng
        self.order = rng.permutation(size)
        self.cursor = 0
        self.epoch = 0

    def next(self) -> np.ndarray:
        if self.cursor + self.batch_size > self.size:
            self.order = self.rng.permutation(self.size)
            self.cursor = 0
            self.epoch += 1
        indices = self.order[self.cursor : self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return indices


def train(
    model: LatentModel,
    train_split: Split,
    test_split: Split,
    schedule: TrainSchedule,
    learning_rate: float,
    on_eval: Optional[Callable[[int, LatentModel], None]] = None,
) -> MetricsLog:
    """Run schedule.total_steps updates, evaluating on test_split at step 0 and every eval_every steps."""
    if len(train_split) == 0:
        raise TrainingError("Training split is empty", 0)
    sampler = BatchSampler(len(train_split), schedule.batch_size, SeededRng(schedule.seed, DATA_STREAM))
    noise_rng = SeededRng(schedule.seed, NOISE_STREAM)
    theta_state = new_adam_state(model.theta, learning_rate)
    phi_state = new_adam_state(model.phi, learning_rate)
    log = MetricsLog()

    def record(step: int) -> MetricsRow:
        row = evaluate(
            model, test_split, step, "test", schedule.eval_seed, schedule.eval_batch_size, schedule.eval_draws
        )
        log.append(row)
        _log_row(row)
        if on_eval is not None:
            on_eval(step, model)
        return row

    best = record(0).elbo
    stale = 0
    phase = None
    for step in range(1, schedule.total_steps + 1):
        current = schedule.phase(step)
        if current != phase and schedule.mode == "alternating":
            logger.info("step %d: entering %s-phase", step, current)
        phase = current
        theta_state.learning_rate = phi_state.learning_rate = schedule.learning_rate(learning_rate, step)
        batch = train_split.take(sampler.next())
        train_step(model, batch.x, batch.labels, noise_rng, phase, theta_state, phi_state, step)

        if step % schedule.eval_every == 0 or step == schedule.total_steps:
            row = record(step)
            if row.elbo > best:
                best, stale = row.elbo, 0
            else:
                stale += 1
            if schedule.patience and stale >= schedule.patience:
                logger.info("Stopping early at step %d: no improvement in %d evaluations", step, stale)
                break
    return log
