"""Adam with bias correction over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-6

    @classmethod
    def init(cls, params, **kwargs):
        state = cls(**kwargs)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        return state


def adam_step(params, grads, state, lr):
    """One Adam update in place; returns (params, state).

    Parameters without a gradient entry are left untouched.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        g = g.astype(p.dtype, copy=False)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
