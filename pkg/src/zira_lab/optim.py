"""AdamW with decoupled weight decay and per-parameter learning rates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .tensorcore import Tensor


@dataclass
class OptimState:
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # name -> multiplier applied to the base learning rate
    lr_mult: dict[str, float] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: OptimState, base_lr: float):
    """One AdamW update of every parameter in `params`, in place.

    Parameters whose effective learning rate is zero are left bitwise untouched.
    Raises NumericError (before touching anything) if a gradient is not finite.
    """
    grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        grads[name] = g
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        lr = base_lr * state.lr_mult.get(name, 1.0)
        if lr == 0.0:
            continue
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = p.data - lr * (update + state.weight_decay * p.data)
