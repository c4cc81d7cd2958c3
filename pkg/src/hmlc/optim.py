"""Adam with bias correction.

The update follows the original formulation:

    m_t = b1*m + (1-b1)*g          m_hat = m_t / (1 - b1^t)
    v_t = b2*v + (1-b2)*g^2        v_hat = v_t / (1 - b2^t)
    p  -= lr * m_hat / (sqrt(v_hat) + eps)

Parameters with a ``None`` gradient are treated as having zero gradient:
their moments still decay and the bias-corrected step is applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeMismatch, Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} vs parameter {p.data.shape} for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
