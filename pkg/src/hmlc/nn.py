"""Small neural building blocks: MLPs and multi-head attention.

Everything is expressed through the ops in :mod:`hmlc.autodiff`, so a single
``Tape`` captures whole-model gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ShapeMismatch,
    Tensor,
    add,
    concat,
    default_dtype,
    matmul,
    matmul_nt,
    relu,
    scale,
    softmax,
    tanh,
    tensor,
)

_ACTIVATIONS = {"relu": relu, "tanh": tanh, "identity": lambda t: t}


@dataclass
class MlpParams:
    """Fully connected layers; the final layer is linear, hidden layers use
    ``activation``."""

    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)
    activation: str = "relu"

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(default_dtype())


def init_mlp(rng: np.random.Generator, sizes: list[int], activation: str = "relu") -> MlpParams:
    """``sizes`` gives the unit counts layer by layer, input first."""
    if len(sizes) < 2:
        raise ShapeMismatch("an MLP needs at least input and output sizes")
    if activation not in _ACTIVATIONS:
        raise ShapeMismatch(f"unknown activation {activation!r}")
    p = MlpParams(activation=activation)
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        p.weights.append(tensor(xavier_uniform(rng, fan_in, fan_out)))
        p.biases.append(tensor(np.zeros(fan_out, dtype=default_dtype())))
    return p


def mlp_forward(x: Tensor, p: MlpParams) -> Tensor:
    """Apply the MLP to a single vector (1D) or to each row of a matrix (2D)."""
    act = _ACTIVATIONS[p.activation]
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        x = add(matmul(x, w), b)
        if i != last:
            x = act(x)
    return x


@dataclass
class AttentionParams:
    heads: int
    wq: list[Tensor] = field(default_factory=list)
    wk: list[Tensor] = field(default_factory=list)
    wv: list[Tensor] = field(default_factory=list)
    wo: Tensor = None

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for h in range(self.heads):
            out[f"{prefix}.q{h}"] = self.wq[h]
            out[f"{prefix}.k{h}"] = self.wk[h]
            out[f"{prefix}.v{h}"] = self.wv[h]
        out[f"{prefix}.o"] = self.wo
        return out


def init_attention(rng: np.random.Generator, d: int, heads: int) -> AttentionParams:
    if d % heads != 0:
        raise ShapeMismatch(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    p = AttentionParams(heads=heads)
    for _ in range(heads):
        p.wq.append(tensor(xavier_uniform(rng, d, dh)))
        p.wk.append(tensor(xavier_uniform(rng, d, dh)))
        p.wv.append(tensor(xavier_uniform(rng, d, dh)))
    p.wo = tensor(xavier_uniform(rng, d, d))
    return p


def multihead_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    p: AttentionParams,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Scaled dot-product attention with per-head projections.

    ``q`` is (r, d); ``k`` and ``v`` are (s, d) with matching s. ``key_mask``
    marks which of the s key rows may be attended to; masked keys receive
    exactly zero weight.
    """
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeMismatch("attention operands must be 2D")
    d = q.shape[1]
    if k.shape[1] != d or v.shape[1] != d:
        raise ShapeMismatch(f"attention widths differ: {q.shape}, {k.shape}, {v.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeMismatch(f"key/value row counts differ: {k.shape} vs {v.shape}")
    dh = d // p.heads
    outs = []
    for h in range(p.heads):
        qh = matmul(q, p.wq[h])
        kh = matmul(k, p.wk[h])
        vh = matmul(v, p.wv[h])
        scores = scale(matmul_nt(qh, kh), 1.0 / math.sqrt(dh))
        attn = softmax(scores, key_mask=key_mask)
        outs.append(matmul(attn, vh))
    merged = outs[0] if len(outs) == 1 else concat(outs, dim=1)
    return matmul(merged, p.wo)
