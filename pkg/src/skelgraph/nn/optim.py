from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """Bias-corrected Adam; returns fresh params and state, inputs untouched."""
    t = state.step + 1
    new_params, m_out, v_out = {}, {}, {}
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        new_params[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        m_out[name], v_out[name] = m, v
    return new_params, AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m_out, v_out)
