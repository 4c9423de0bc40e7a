"""Adam / AdamW / SGD updates over parameter dicts, plus cosine annealing.

Updates are functional: they return new arrays and a new state and never
modify their inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class OptimState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def cosine_rate(lr: float, step: int, total_steps: int) -> float:
    """lr * 0.5 * (1 + cos(pi * step / total_steps)), with ``step`` counted from 0."""
    if total_steps <= 0:
        return lr
    return lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def adam_update(params: dict, grads: dict, state: OptimState, lr: float, weight_decay: float = 0.0,
                betas: tuple[float, float] = (BETA1, BETA2), eps: float = ADAM_EPS):
    """One bias-corrected Adam step; ``weight_decay`` > 0 gives decoupled (AdamW) decay.

    Returns ``(new_params, new_state)``. A zero rate leaves the parameters
    bit-identical.
    """
    b1, b2 = betas
    t = state.step + 1
    m = {k: b1 * state.m[k] + (1 - b1) * g for k, g in grads.items()}
    v = {k: b2 * state.v[k] + (1 - b2) * g * g for k, g in grads.items()}
    new_state = OptimState(m, v, t)
    if lr == 0:
        return {k: p.copy() for k, p in params.items()}, new_state
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    out = {}
    for k, p in params.items():
        dt = p.dtype.type
        upd = (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)
        q = p * dt(1 - lr * weight_decay) if weight_decay else p
        out[k] = (q - dt(lr) * upd).astype(p.dtype)
    return out, new_state


def sgd_update(params: dict, grads: dict, lr: float) -> dict:
    """theta - lr * grad."""
    return {k: (p - p.dtype.type(lr) * grads[k]).astype(p.dtype) for k, p in params.items()}
