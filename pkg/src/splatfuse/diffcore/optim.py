"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tape import Parameter


class OptimizerError(RuntimeError):
    pass


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")

    @classmethod
    def for_parameter(cls, p: Parameter, **hyper) -> "AdamWState":
        return cls(np.zeros_like(p.value), np.zeros_like(p.value), **hyper)


def adamw_step(p: Parameter, s: AdamWState, lr: float) -> None:
    """One in-place AdamW update. The gradient is left for the caller to clear."""
    g = p.grad
    if not np.all(np.isfinite(g)):
        raise OptimizerError(f"non-finite gradient in parameter {p.name!r}")
    if s.weight_decay:
        p.value = p.value - lr * s.weight_decay * p.value
    s.step += 1
    s.m = s.beta1 * s.m + (1.0 - s.beta1) * g
    s.v = s.beta2 * s.v + (1.0 - s.beta2) * g * g
    m_hat = s.m / (1.0 - s.beta1 ** s.step)
    v_hat = s.v / (1.0 - s.beta2 ** s.step)
    p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + s.eps)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamW:
    """Convenience wrapper holding one :class:`AdamWState` per parameter.

    ``lr_scale`` maps a parameter name to a multiplier on the scheduled rate,
    so groups with different base rates can share one schedule.
    """

    params: list[Parameter]
    lr0: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_scale: dict[str, float] = field(default_factory=dict)
    states: dict[str, AdamWState] = field(default_factory=dict)

    def __post_init__(self):
        for p in self.params:
            self.states.setdefault(p.name, self._fresh(p))

    def _fresh(self, p: Parameter) -> AdamWState:
        return AdamWState.for_parameter(p, lr0=self.lr0, beta1=self.beta1, beta2=self.beta2,
                                        eps=self.eps, weight_decay=self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        for p in self.params:
            adamw_step(p, self.states[p.name], lr * self.lr_scale.get(p.name, 1.0))

    def replace(self, params: Iterable[Parameter], sources: dict[str, np.ndarray] | None = None) -> None:
        """Swap in resized parameters, carrying moments for rows listed in ``sources``.

        ``sources[name][i]`` is the old row feeding new row ``i`` (-1 for a fresh row).
        """
        params = list(params)
        new_states = {}
        for p in params:
            old = self.states.get(p.name)
            st = self._fresh(p)
            if old is not None and sources is not None and p.name in sources:
                src = sources[p.name]
                keep = src >= 0
                st.m[keep] = old.m[src[keep]]
                st.v[keep] = old.v[src[keep]]
                st.step = old.step
            new_states[p.name] = st
        self.params = params
        self.states = new_states
