"""AdamW with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class OptimizerState:
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, config):
        return cls(lr=config.lr, weight_decay=config.weight_decay)


def adamw_step(params, grads, state):
    """One AdamW update.  Returns ``(new_params, new_state)``; inputs are not
    modified.  Parameters absent from ``grads`` get a zero gradient."""
    b1, b2 = state.betas
    step = state.step + 1
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        decayed = p - state.lr * state.weight_decay * p
        new_params[name] = decayed - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_m[name], new_v[name] = m, v
    new_state = OptimizerState(state.lr, state.betas, state.eps, state.weight_decay, step, new_m, new_v)
    return new_params, new_state
