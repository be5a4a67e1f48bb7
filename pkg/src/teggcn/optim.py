"""Adam with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import Parameter


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], grads: Optional[Sequence[np.ndarray]],
              state: AdamState) -> Sequence[Parameter]:
    """Apply one bias-corrected Adam update in place and return ``params``.

    Weight decay is decoupled from the moment estimates and applied only to
    parameters whose ``decay`` flag is set.
    """
    if grads is None:
        grads = [p.grad for p in params]
    for p, g in zip(params, grads):
        if g is None or g.shape != p.shape:
            raise ValueError(f"gradient for {p.name!r} missing or mis-shaped")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {p.name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g in zip(params, grads):
        key = p.name or id(p)
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay and getattr(p, "decay", False):
            p.data -= state.lr * state.weight_decay * p.data
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
