from dataclasses import dataclass, field

import numpy as np

from ..errors import TapeError


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _named(params):
    if hasattr(params, "items"):
        return list(params.items())
    return [(p.name or str(i), p) for i, p in enumerate(params)]


def clip_grad_norm(params, max_norm):
    """Scale all grads so their global L2 norm is at most ``max_norm``. Returns the norm before clipping."""
    named = _named(params)
    sq = sum(float(np.sum(p.grad * p.grad)) for _, p in named if p.grad is not None)
    norm = float(np.sqrt(sq))
    if norm > max_norm > 0:
        factor = max_norm / norm
        for _, p in named:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


def adam_step(state, params):
    """Bias-corrected Adam update of every parameter in place; grads are zeroed afterwards."""
    named = _named(params)
    for name, p in named:
        if p.grad is None:
            raise TapeError(f"missing gradient for parameter '{name}'")

    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in named:
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = np.zeros_like(p.data)
    return params
