"""AdamW with decoupled weight decay and a cosine-annealed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .params import ParamStore


def cosine_lr(step: int, base_lr: float, floor: float, horizon: int) -> float:
    """Learning rate for the ``step``-th update (0-based); reaches ``floor`` at ``horizon``."""
    if horizon <= 0:
        return base_lr
    t = min(max(step, 0), horizon)
    return floor + 0.5 * (base_lr - floor) * (1.0 + math.cos(math.pi * t / horizon))


@dataclass
class OptimizerState:
    lr: float = 2e-4
    weight_decay: float = 1e-4
    lr_floor: float = 1e-6
    horizon: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self) -> float:
        return cosine_lr(self.step, self.lr, self.lr_floor, self.horizon)


def adamw_step(params: ParamStore, state: OptimizerState) -> float:
    """Apply one update to every parameter, then clear gradients. Returns the lr used."""
    if not params.has_grads():
        raise ContractError("adamw_step called before backward populated any gradient")
    lr = state.current_lr()
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = params.grad(name)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data *= 1.0 - lr * state.weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    params.zero_grad()
    return lr
