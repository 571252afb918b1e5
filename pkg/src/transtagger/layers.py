"""Parameter initialisation and the transformer encoder block.

Parameters live in flat ``dict[str, Tensor]`` maps keyed by dotted names so
that checkpointing and the optimiser can treat every model uniformly.
"""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .numerics import Tensor

Params = dict[str, Tensor]

# large enough that exp(score - max) underflows to exactly 0
MASK_VALUE = -1e30


def uniform(params: Params, name: str, shape, rng: np.random.Generator, scale: float = 0.02) -> Tensor:
    t = nx.parameter(rng.uniform(-scale, scale, size=shape), name=name)
    params[name] = t
    return t


def constant(params: Params, name: str, shape, value: float) -> Tensor:
    t = nx.parameter(np.full(shape, value, dtype=np.float64), name=name)
    params[name] = t
    return t


def init_linear(params: Params, prefix: str, d_in: int, d_out: int, rng: np.random.Generator) -> None:
    uniform(params, f"{prefix}.w", (d_in, d_out), rng)
    constant(params, f"{prefix}.b", (d_out,), 0.0)


def linear(params: Params, prefix: str, x: Tensor) -> Tensor:
    return nx.add(nx.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def init_layer_norm(params: Params, prefix: str, dim: int) -> None:
    constant(params, f"{prefix}.gamma", (dim,), 1.0)
    constant(params, f"{prefix}.beta", (dim,), 0.0)


def apply_layer_norm(params: Params, prefix: str, x: Tensor) -> Tensor:
    return nx.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def init_encoder_block(params: Params, prefix: str, dim: int, ff: int, rng: np.random.Generator) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(params, f"{prefix}.attn.{proj}", dim, dim, rng)
    init_layer_norm(params, f"{prefix}.ln1", dim)
    init_linear(params, f"{prefix}.ff1", dim, ff, rng)
    init_linear(params, f"{prefix}.ff2", ff, dim, rng)
    init_layer_norm(params, f"{prefix}.ln2", dim)


def attention_weights(q: Tensor, k: Tensor, key_mask: np.ndarray | None) -> Tensor:
    """Scaled dot-product attention weights, shape (B, A, N, N).

    ``key_mask`` is a (B, N) boolean array, true for keys that may be attended.
    """
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = nx.mul(nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))), scale)
    if key_mask is not None:
        blocked = ~np.asarray(key_mask, dtype=bool)[:, None, None, :]
        scores = nx.mask_fill(scores, blocked, MASK_VALUE)
    return nx.softmax(scores, axis=-1)


def multi_head_attention(
    params: Params, prefix: str, x: Tensor, heads: int, key_mask: np.ndarray | None
) -> Tensor:
    batch, n, dim = x.shape
    if dim % heads:
        raise ValueError(f"{prefix}: width {dim} not divisible by {heads} heads")
    dh = dim // heads

    def split(t: Tensor) -> Tensor:
        return nx.transpose(nx.reshape(t, (batch, n, heads, dh)), (0, 2, 1, 3))

    q = split(linear(params, f"{prefix}.q", x))
    k = split(linear(params, f"{prefix}.k", x))
    v = split(linear(params, f"{prefix}.v", x))
    weights = attention_weights(q, k, key_mask)
    ctx = nx.transpose(nx.matmul(weights, v), (0, 2, 1, 3))
    return linear(params, f"{prefix}.o", nx.reshape(ctx, (batch, n, dim)))


def encoder_block(
    params: Params,
    prefix: str,
    x: Tensor,
    heads: int,
    key_mask: np.ndarray | None = None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """Post-norm transformer encoder block on a (B, N, D) input."""
    attn = multi_head_attention(params, f"{prefix}.attn", x, heads, key_mask)
    attn = nx.dropout(attn, dropout, rng, training)
    x = apply_layer_norm(params, f"{prefix}.ln1", nx.add(x, attn))
    h = nx.gelu(linear(params, f"{prefix}.ff1", x))
    h = nx.dropout(linear(params, f"{prefix}.ff2", h), dropout, rng, training)
    return apply_layer_norm(params, f"{prefix}.ln2", nx.add(x, h))
