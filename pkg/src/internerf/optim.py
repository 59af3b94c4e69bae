"""Adam with bias correction, and the warm-up plus log-linear decay schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class AdamState:
    """First/second moments per parameter name plus the update count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
            0,
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr, beta1=0.9, beta2=0.99, eps=1e-15):
    """One bias-corrected Adam update, applied in place.

    Returns ``(params, state)`` for convenience.
    """
    if grads.keys() != params.keys():
        raise ContractError("gradients and parameters name different tensors")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        if np.shape(g) != np.shape(p):
            raise ContractError(f"gradient for {k} has shape {np.shape(g)}, parameter {np.shape(p)}")
        m, v = state.m[k], state.v[k]
        dtype = p.dtype
        m *= dtype.type(beta1)
        m += dtype.type(1.0 - beta1) * g
        v *= dtype.type(beta2)
        v += dtype.type(1.0 - beta2) * np.square(g)
        p -= dtype.type(lr) * (m / dtype.type(c1)) / (np.sqrt(v / dtype.type(c2)) + dtype.type(eps))
    return params, state


def lr_at(step: int, total_steps: int, lr_init=1e-2, lr_final=1e-3, warmup_steps=2500, warmup_init=1e-8) -> float:
    """Linear warm-up from ``warmup_init`` to ``lr_init``, then log-linear decay to ``lr_final``."""
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return warmup_init + (lr_init - warmup_init) * step / warmup_steps
    if step == total_steps:
        return lr_final
    frac = (step - warmup_steps) / max(total_steps - warmup_steps, 1)
    if frac == 0:
        return lr_init
    return math.exp(math.log(lr_init) * (1 - frac) + math.log(lr_final) * frac)
