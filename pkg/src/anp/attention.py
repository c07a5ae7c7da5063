"""Cross- and self-attention mechanisms.

Inputs carry any number of leading batch axes: keys ``[..., n, d_k]``,
values ``[..., n, d_v]``, queries ``[..., m, d_k]``.  None of the mechanisms
mask anything, so every query sees every key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

KINDS = ("uniform", "laplace", "dot_product", "multihead")


@dataclass(frozen=True)
class AttentionKind:
    name: str
    heads: int = 1

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown attention kind {self.name!r}; expected one of {KINDS}")
        if self.heads < 1:
            raise ValueError(f"head count must be positive, got {self.heads}")

    @classmethod
    def multihead(cls, heads: int = 8) -> "AttentionKind":
        return cls("multihead", heads)

    def validate(self, d: int) -> None:
        if self.name == "multihead" and d % self.heads:
            raise ValueError(f"{self.heads} heads do not divide representation width {d}")


def _check_nonempty(keys: Tensor) -> None:
    if keys.shape[-2] == 0:
        raise ValueError("attention over an empty key set")


def _check_widths(op: str, q: Tensor, k: Tensor) -> None:
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"{op}: query width {q.shape[-1]} != key width {k.shape[-1]}")


def uniform_attention(k: Tensor, v: Tensor, q: Tensor) -> Tensor:
    """Every query receives the mean of the values."""
    _check_nonempty(v)
    m = q.shape[-2]
    pooled = ad.mean(v, axis=-2, keepdims=True)
    return ad.broadcast_to(pooled, v.shape[:-2] + (m, v.shape[-1]))


def laplace_weights(q: Tensor, k: Tensor) -> Tensor:
    _check_widths("laplace_attention", q, k)
    return ad.softmax(ad.mul(ad.l1_distance(q, k), -1.0), axis=-1)


def laplace_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    _check_nonempty(k)
    return ad.matmul(laplace_weights(q, k), v)


def dot_product_weights(q: Tensor, k: Tensor) -> Tensor:
    _check_widths("dot_product_attention", q, k)
    scores = ad.matmul(q, ad.swapaxes(k, -1, -2))
    return ad.softmax(ad.mul(scores, 1.0 / math.sqrt(q.shape[-1])), axis=-1)


def dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    _check_nonempty(k)
    return ad.matmul(dot_product_weights(q, k), v)


def init_multihead(rng: np.random.Generator, prefix: str, d_k: int, d_v: int, d_out: int, heads: int) -> dict[str, Tensor]:
    """Projections stored as ``[d, d]`` blocks; head ``h`` owns columns ``h*d/H:(h+1)*d/H``."""
    if d_v % heads:
        raise ValueError(f"{heads} heads do not divide representation width {d_v}")
    return {
        f"{prefix}/Wq": ad.parameter(ad.glorot_uniform(rng, d_k, d_v)),
        f"{prefix}/Wk": ad.parameter(ad.glorot_uniform(rng, d_k, d_v)),
        f"{prefix}/Wv": ad.parameter(ad.glorot_uniform(rng, d_v, d_v)),
        f"{prefix}/Wo": ad.parameter(ad.glorot_uniform(rng, d_v, d_out)),
    }


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, rows, width = x.shape
    x = ad.reshape(x, tuple(lead) + (rows, heads, width // heads))
    return ad.swapaxes(x, -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    x = ad.swapaxes(x, -2, -3)
    *lead, rows, heads, width = x.shape
    return ad.reshape(x, tuple(lead) + (rows, heads * width))


def multihead_attention(params: Mapping[str, Tensor], prefix: str, q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    _check_nonempty(k)
    _check_widths("multihead_attention", q, k)
    wq, wk, wv, wo = (params[f"{prefix}/{n}"] for n in ("Wq", "Wk", "Wv", "Wo"))
    if wq.shape[1] % heads:
        raise ValueError(f"{heads} heads do not divide projection width {wq.shape[1]}")
    qh = _split_heads(ad.matmul(q, wq), heads)
    kh = _split_heads(ad.matmul(k, wk), heads)
    vh = _split_heads(ad.matmul(v, wv), heads)
    out = ad.matmul(dot_product_weights(qh, kh), vh)
    return ad.matmul(_merge_heads(out), wo)


def multihead_weights(params: Mapping[str, Tensor], prefix: str, q: Tensor, k: Tensor, heads: int) -> Tensor:
    """Per-head weight matrices ``[..., H, m, n]``."""
    qh = _split_heads(ad.matmul(q, params[f"{prefix}/Wq"]), heads)
    kh = _split_heads(ad.matmul(k, params[f"{prefix}/Wk"]), heads)
    return dot_product_weights(qh, kh)


def cross_attention(kind: AttentionKind, params: Mapping[str, Tensor], prefix: str, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    if kind.name == "uniform":
        return uniform_attention(k, v, q)
    if kind.name == "laplace":
        return laplace_attention(q, k, v)
    if kind.name == "dot_product":
        return dot_product_attention(q, k, v)
    return multihead_attention(params, prefix, q, k, v, kind.heads)


def attention_weights(kind: AttentionKind, params: Mapping[str, Tensor], prefix: str, q: Tensor, k: Tensor) -> np.ndarray:
    """Weight matrix of a cross-attention call, for inspection.  Rows sum to one."""
    if kind.name == "uniform":
        n = k.shape[-2]
        return np.full(k.shape[:-2] + (q.shape[-2], n), 1.0 / n)
    if kind.name == "laplace":
        return laplace_weights(q, k).data
    if kind.name == "dot_product":
        return dot_product_weights(q, k).data
    return multihead_weights(params, prefix, q, k, kind.heads).data


# self-attention -------------------------------------------------------------

def init_self_attention(rng: np.random.Generator, prefix: str, d: int, heads: int, layers: int) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    for i in range(layers):
        params.update(init_multihead(rng, f"{prefix}/{i}/mha", d, d, d, heads))
        params.update(ad.init_mlp(rng, f"{prefix}/{i}/ff", [d, d, d]))
    return params


def self_attention_stack(params: Mapping[str, Tensor], prefix: str, x: Tensor, layers: int, heads: int) -> Tensor:
    """Residual multihead self-attention followed by a residual row-wise MLP, per layer."""
    d = x.shape[-1]
    for i in range(layers):
        x = ad.add(x, multihead_attention(params, f"{prefix}/{i}/mha", x, x, x, heads))
        x = ad.add(x, ad.forward_mlp(params, f"{prefix}/{i}/ff", x, [d, d, d]))
    return x
