"""Layer-level building blocks: linear, multi-head attention, FFN.

All functions take and return `Tensor`s and compose primitive autodiff ops,
so analytic gradients come for free from the tape.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import (
    Tensor,
    add,
    gelu,
    masked_softmax,
    matmul,
    reshape,
    scale,
    transpose,
)

NEG_INF = -1e9  # additive mask standing in for -infinity


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w (+ b). `x` may carry extra leading axes; `w` is 2-D."""
    if x.data.dtype != w.data.dtype:
        raise ValueError(f"dtype mismatch: x {x.data.dtype} vs w {w.data.dtype}")
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(
            f"linear dimension mismatch: x shape {x.data.shape} vs w shape {w.data.shape}"
        )
    lead = x.data.shape[:-1]
    flat = reshape(x, (-1, x.data.shape[-1])) if x.data.ndim != 2 else x
    y = matmul(flat, w)
    if b is not None:
        y = add(y, b)
    if x.data.ndim != 2:
        y = reshape(y, lead + (w.data.shape[1],))
    return y


def multi_head_attention(
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    key_pad_mask: np.ndarray | None,
    heads: int,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    capture: list | None = None,
) -> Tensor:
    """Scaled dot-product attention with `heads` heads.

    Inputs are (L, d) single sequences or (B, L, d) padded batches; a batch
    carries a (B, Lk) `key_pad_mask`, a single sequence an (Lk,) one. Masked
    keys (True) get an additive -1e9 so their softmax weight collapses to 0.
    Pass `capture` to receive the post-softmax weights.
    """
    d = q_in.data.shape[-1]
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by heads {heads}")
    batched = q_in.data.ndim == 3
    lq, lk = q_in.data.shape[-2], k_in.data.shape[-2]
    if key_pad_mask is not None:
        key_pad_mask = np.asarray(key_pad_mask, dtype=bool)
        if key_pad_mask.all(axis=-1).any():
            raise ValueError("empty attention context: all keys masked")
    dh = d // heads

    def split_heads(t: Tensor, length: int) -> Tensor:
        if batched:
            h = reshape(t, (t.data.shape[0], length, heads, dh))
            return transpose(h, (0, 2, 1, 3))  # (B, heads, L, dh)
        h = reshape(t, (length, heads, dh))
        return transpose(h, (1, 0, 2))  # (heads, L, dh)

    q = split_heads(linear(q_in, wq), lq)
    k = split_heads(linear(k_in, wk), lk)
    v = split_heads(linear(v_in, wv), lk)

    kt = transpose(k, (0, 1, 3, 2) if batched else (0, 2, 1))
    scores = scale(matmul(q, kt), 1.0 / math.sqrt(dh))
    mask = None
    if key_pad_mask is not None and key_pad_mask.any():
        mask = np.where(key_pad_mask, NEG_INF, 0.0).astype(scores.data.dtype)
        mask = mask.reshape((-1, 1, 1, lk) if batched else (1, 1, lk))
    weights = masked_softmax(scores, mask)
    if capture is not None:
        capture.append(weights.data.copy())
    ctx = matmul(weights, v)
    if batched:
        merged = reshape(transpose(ctx, (0, 2, 1, 3)), (q_in.data.shape[0], lq, d))
    else:
        merged = reshape(transpose(ctx, (1, 0, 2)), (lq, d))
    return linear(merged, wo)


def ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Position-wise feed-forward: linear -> GELU -> linear."""
    return linear(gelu(linear(x, w1, b1)), w2, b2)
