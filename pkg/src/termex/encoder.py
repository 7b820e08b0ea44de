"""Transformer encoder with summed token + position + language embeddings.

Post-norm residual blocks; position ids reset to 0 at each segment start so
joint-sequence inputs stay positionally aligned across segments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .autodiff import ParamStore, Tensor, add, dropout, embedding, layer_norm
from .bpe import Vocab


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 128
    d_ff: int = 512
    layers: int = 4
    heads: int = 4
    max_positions: int = 128
    vocab_size: int = 0
    n_langs: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if min(self.d, self.d_ff, self.heads, self.max_positions, self.n_langs) <= 0:
            raise ValueError("all encoder dimensions must be positive")
        if self.layers < 0:
            raise ValueError("layers must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "d_ff": self.d_ff,
            "layers": self.layers,
            "heads": self.heads,
            "max_positions": self.max_positions,
            "vocab_size": self.vocab_size,
            "n_langs": self.n_langs,
            "dropout": self.dropout,
        }


@dataclass
class SegmentedInput:
    """Model-ready id sequences; all arrays share one length."""

    token_ids: np.ndarray
    position_ids: np.ndarray
    language_ids: np.ndarray
    pad_mask: np.ndarray  # True at padded positions
    segment_bounds: list[int] = field(default_factory=list)  # separator positions

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.position_ids = np.asarray(self.position_ids, dtype=np.int64)
        self.language_ids = np.asarray(self.language_ids, dtype=np.int64)
        self.pad_mask = np.asarray(self.pad_mask, dtype=bool)
        n = len(self.token_ids)
        if not (len(self.position_ids) == len(self.language_ids) == len(self.pad_mask) == n):
            raise ValueError("SegmentedInput id sequences must share one length")

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def target_range(self) -> tuple[int, int]:
        """Inclusive model-coordinate range of the target sentence tokens."""
        if len(self.segment_bounds) < 2:
            raise ValueError("input has no target segment")
        return self.segment_bounds[-2] + 1, self.segment_bounds[-1] - 1


def single_segment_input(token_ids: list[int], lang_id: int, vocab: Vocab) -> SegmentedInput:
    """Wrap one sentence as [/s] tokens [/s] with a single language id."""
    ids = [vocab.sep_id] + list(token_ids) + [vocab.sep_id]
    n = len(ids)
    return SegmentedInput(
        token_ids=np.array(ids),
        position_ids=np.arange(n),
        language_ids=np.full(n, lang_id),
        pad_mask=np.zeros(n, dtype=bool),
        segment_bounds=[0, n - 1],
    )


def init_encoder_params(config: EncoderConfig, rng: np.random.Generator,
                        store: ParamStore | None = None,
                        dtype=np.float32) -> ParamStore:
    """Normal(0, 0.02) tables and projections, zero biases, unit LN gains."""
    if config.vocab_size <= 0:
        raise ValueError("EncoderConfig.vocab_size must be set before init")
    if store is None:
        store = ParamStore()

    def normal(name, *shape):
        store.add(name, rng.normal(0.0, 0.02, size=shape).astype(dtype))

    def zeros(name, *shape):
        store.add(name, np.zeros(shape, dtype=dtype))

    def ones(name, *shape):
        store.add(name, np.ones(shape, dtype=dtype))

    normal("emb.tok", config.vocab_size, config.d)
    normal("emb.pos", config.max_positions, config.d)
    normal("emb.lang", config.n_langs, config.d)
    for i in range(config.layers):
        p = f"enc.{i}"
        for w in ("wq", "wk", "wv", "wo"):
            normal(f"{p}.attn.{w}", config.d, config.d)
        ones(f"{p}.ln1.g", config.d)
        zeros(f"{p}.ln1.b", config.d)
        normal(f"{p}.ffn.w1", config.d, config.d_ff)
        zeros(f"{p}.ffn.b1", config.d_ff)
        normal(f"{p}.ffn.w2", config.d_ff, config.d)
        zeros(f"{p}.ffn.b2", config.d)
        ones(f"{p}.ln2.g", config.d)
        zeros(f"{p}.ln2.b", config.d)
    return store


def embed(inp: SegmentedInput, store: ParamStore, config: EncoderConfig,
          train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Sum of token, position and language embeddings per position."""
    for table, ids in (("emb.tok", inp.token_ids), ("emb.pos", inp.position_ids),
                       ("emb.lang", inp.language_ids)):
        size = store[table].data.shape[0]
        if len(ids) and (ids.min() < 0 or ids.max() >= size):
            raise IndexError(f"id out of bounds for table {table} (size {size})")
    x = add(
        add(embedding(store["emb.tok"], inp.token_ids),
            embedding(store["emb.pos"], inp.position_ids)),
        embedding(store["emb.lang"], inp.language_ids),
    )
    if train and config.dropout > 0.0:
        x = dropout(x, config.dropout, rng)
    return x


def encode(x: Tensor, pad_mask: np.ndarray | None, store: ParamStore,
           config: EncoderConfig, train: bool = False,
           rng: np.random.Generator | None = None,
           capture: list | None = None) -> Tensor:
    """Run the post-norm self-attention stack; padded keys never attend in."""
    h = x
    for i in range(config.layers):
        p = f"enc.{i}"
        attn = nn.multi_head_attention(
            h, h, h, pad_mask, config.heads,
            store[f"{p}.attn.wq"], store[f"{p}.attn.wk"],
            store[f"{p}.attn.wv"], store[f"{p}.attn.wo"],
            capture=capture,
        )
        if train and config.dropout > 0.0:
            attn = dropout(attn, config.dropout, rng)
        h = layer_norm(add(h, attn), store[f"{p}.ln1.g"], store[f"{p}.ln1.b"])
        ff = nn.ffn(h, store[f"{p}.ffn.w1"], store[f"{p}.ffn.b1"],
                    store[f"{p}.ffn.w2"], store[f"{p}.ffn.b2"])
        if train and config.dropout > 0.0:
            ff = dropout(ff, config.dropout, rng)
        h = layer_norm(add(h, ff), store[f"{p}.ln2.g"], store[f"{p}.ln2.b"])
        if not np.all(np.isfinite(h.data)):
            raise FloatingPointError(f"non-finite activations in encoder layer {i}")
    return h
