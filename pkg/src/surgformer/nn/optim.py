"""Adam with bias correction and the inverse-square-root warmup schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .module import Param


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9

    @classmethod
    def like(cls, param: Param, beta1=0.9, beta2=0.98, eps=1e-9) -> "AdamState":
        return cls(np.zeros_like(param.value), np.zeros_like(param.value), 0, beta1, beta2, eps)


def adam_step(param: Param, state: AdamState, lr: float) -> None:
    g = param.grad
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class NoamSchedule:
    """``factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)``."""

    d_model: int
    warmup_steps: int = 4000
    factor: float = 1.0

    def __call__(self, step: int) -> float:
        return noam_lr(self, step)


def noam_lr(sched: NoamSchedule, step: int) -> float:
    if step < 1:
        raise ContractError(f"noam_lr: step must be >= 1, got {step}")
    return sched.factor * sched.d_model ** -0.5 * min(step ** -0.5, step * sched.warmup_steps ** -1.5)


@dataclass
class Adam:
    """Adam over a named parameter set, driven by a :class:`NoamSchedule`."""

    params: dict[str, Param]
    schedule: NoamSchedule
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.states.setdefault(name, AdamState.like(p, self.beta1, self.beta2, self.eps))

    @property
    def step_count(self) -> int:
        return next(iter(self.states.values())).step if self.states else 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> float:
        lr = noam_lr(self.schedule, self.step_count + 1)
        for name, p in self.params.items():
            adam_step(p, self.states[name], lr)
        return lr
