"""AdamW with decoupled weight decay, plus the warmup/cosine schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class AdamWState:
    """Per-parameter moments plus the shared step counter.

    ``decay`` marks which parameters receive weight decay; LN gains/biases,
    biases, class tokens and positional embeddings are conventionally exempt
    (the trainer builds the flags).
    """

    m: list[np.ndarray]
    v: list[np.ndarray]
    decay: list[bool]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05


_NO_DECAY_SUFFIXES = ("_b", "_g", "bias", "cls_token", "pos_embed")


def decay_flag(name: str) -> bool:
    return not name.endswith(_NO_DECAY_SUFFIXES)


def init_adamw(
    params: list[Tensor],
    weight_decay: float = 0.05,
    decay: list[bool] | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamWState:
    if decay is None:
        decay = [decay_flag(p.name or "") for p in params]
    if len(decay) != len(params):
        raise ValueError("decay flags must align with params")
    return AdamWState(
        m=[np.zeros(p.shape) for p in params],
        v=[np.zeros(p.shape) for p in params],
        decay=list(decay),
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
    )


def adamw_step(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: AdamWState,
    lr: float,
) -> AdamWState:
    """One decoupled-decay update: theta -= lr * (mhat/(sqrt(vhat)+eps) + wd*theta)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    if lr < 0:
        raise ValueError("lr must be >= 0")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {p.name!r}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        wd = state.weight_decay if state.decay[i] else 0.0
        p.assign(p.array - lr * (m_hat / (np.sqrt(v_hat) + state.eps) + wd * p.array))
    return state


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float = 1.5e-4
    warmup_epochs: int = 15
    total_epochs: int = 300
    steps_per_epoch: int = 1
    floor_lr: float = 0.0

    def __post_init__(self):
        if not (0 <= self.warmup_epochs < self.total_epochs):
            raise ValueError("need 0 <= warmup_epochs < total_epochs")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch


def lr_at(global_step: int, schedule: ScheduleConfig) -> float:
    """Linear warmup from 0 to base_lr, then cosine decay to floor_lr."""
    if not (0 <= global_step <= schedule.total_steps):
        raise ValueError(
            f"step {global_step} outside [0, {schedule.total_steps}]"
        )
    if global_step < schedule.warmup_steps:
        return schedule.base_lr * global_step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    progress = (global_step - schedule.warmup_steps) / span
    return schedule.floor_lr + 0.5 * (schedule.base_lr - schedule.floor_lr) * (
        1.0 + np.cos(np.pi * progress)
    )
