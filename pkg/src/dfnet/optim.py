"""Adam optimizer and step-decay learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor


@dataclass
class LrSchedule:
    initial: float = 2e-3
    final: float = 2e-6
    decay: float = 0.1
    step_size: int = 5
    total_epochs: int = 20

    def __post_init__(self):
        if not (0.0 < self.decay <= 1.0) or self.step_size < 1 or self.total_epochs < 1:
            raise ValueError(f"invalid schedule {self}")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Piecewise-constant decayed rate for ``epoch``, floored at ``schedule.final``."""
    if not 0 <= epoch < schedule.total_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    # dividing by an exact power of 1/decay avoids the 0.1**n rounding drift
    n = epoch // schedule.step_size
    rate = schedule.initial / (1.0 / schedule.decay) ** n
    return max(rate, schedule.final)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray


@dataclass
class ParamGroup:
    """Named learnable tensors plus their Adam moments and shared step counter."""

    params: dict[str, Tensor]
    state: dict[str, AdamState] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        for name, p in self.params.items():
            if name not in self.state:
                self.state[name] = AdamState(np.zeros_like(p.data), np.zeros_like(p.data))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def adam_step(group: ParamGroup, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every parameter in ``group``."""
    missing = [name for name, p in group.params.items() if p.grad is None]
    if missing:
        raise ContractError(f"parameters without gradient: {', '.join(missing[:5])}")
    group.step += 1
    t = group.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in group.params.items():
        st = group.state[name]
        g = p.grad
        st.m *= beta1
        st.m += (1.0 - beta1) * g
        st.v *= beta2
        st.v += (1.0 - beta2) * g * g
        update = (st.m / c1) / (np.sqrt(st.v / c2) + eps)
        p.data -= lr * update
        if not math.isfinite(float(np.sum(p.data))):
            raise FloatingPointError(f"parameter {name} became non-finite at Adam step {t}")
