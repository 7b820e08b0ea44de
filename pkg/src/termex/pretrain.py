"""Cross-lingual pre-training: MLM over mixed monolingual titles, TLM over
concatenated aligned pairs. Output states are projected through the tied
token-embedding table, so pre-training adds no parameters beyond the encoder.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (
    ParamStore,
    Tensor,
    matmul,
    reshape,
    softmax_cross_entropy,
    take_rows,
    transpose,
)
from .bpe import Vocab
from .encoder import EncoderConfig, SegmentedInput, embed, encode, single_segment_input
from .extractor import build_concat_input

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskingPolicy:
    select_prob: float = 0.15
    mask_frac: float = 0.8
    random_frac: float = 0.1
    keep_frac: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.select_prob <= 1.0:
            raise ValueError("select_prob must be in [0, 1]")
        if abs(self.mask_frac + self.random_frac + self.keep_frac - 1.0) > 1e-9:
            raise ValueError("mask/random/keep fractions must sum to 1")


def mask_tokens(token_ids: np.ndarray, policy: MaskingPolicy, rng: np.random.Generator,
                vocab: Vocab) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corrupt a sequence for MLM.

    Non-special positions are selected independently with `select_prob`;
    selected positions become [MASK] / a random non-special token / unchanged
    with the policy's fractions. Labels keep the original ids at selected
    positions only. Special tokens are never selected.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    corrupted = ids.copy()
    eligible = ids >= vocab.n_specials
    selected = eligible & (rng.random(len(ids)) < policy.select_prob)
    positions = np.flatnonzero(selected)
    labels = ids[positions].copy()
    action = rng.random(len(positions))
    n_real = len(vocab) - vocab.n_specials
    for j, pos in enumerate(positions):
        if action[j] < policy.mask_frac:
            corrupted[pos] = vocab.mask_id
        elif action[j] < policy.mask_frac + policy.random_frac:
            corrupted[pos] = vocab.n_specials + int(rng.integers(n_real))
        # else: keep original
    return corrupted, positions, labels


@dataclass
class MaskedItem:
    """One corrupted sequence plus its reconstruction targets."""

    inp: SegmentedInput
    label_positions: np.ndarray
    label_ids: np.ndarray


def corrupt_input(inp: SegmentedInput, policy: MaskingPolicy,
                  rng: np.random.Generator, vocab: Vocab) -> MaskedItem:
    corrupted, positions, labels = mask_tokens(inp.token_ids, policy, rng, vocab)
    masked = SegmentedInput(
        token_ids=corrupted,
        position_ids=inp.position_ids,
        language_ids=inp.language_ids,
        pad_mask=inp.pad_mask,
        segment_bounds=list(inp.segment_bounds),
    )
    return MaskedItem(masked, positions, labels)


def mlm_loss(batch: Sequence[MaskedItem], store: ParamStore, config: EncoderConfig,
             train: bool = True, rng: np.random.Generator | None = None) -> Tensor | None:
    """Cross-entropy of reconstructing original ids at labeled positions.

    Averaged over all labeled positions in the batch; returns None (with a
    warning) when nothing is labeled. The batch runs as one padded stack.
    """
    from .extractor import pack_inputs

    labeled = [item for item in batch if len(item.label_positions)]
    if not labeled:
        log.warning("mlm batch has no labeled positions; skipping")
        return None
    if len(labeled) == 1:
        item = labeled[0]
        h = encode(embed(item.inp, store, config, train, rng), item.inp.pad_mask,
                   store, config, train, rng)
        states = take_rows(h, item.label_positions)
        labels = item.label_ids
    else:
        packed = pack_inputs([item.inp for item in labeled], Vocab.pad_id)
        b, l = packed.token_ids.shape
        h = encode(embed(packed, store, config, train, rng), packed.pad_mask,
                   store, config, train, rng)
        flat_idx = np.concatenate([item.label_positions + i * l
                                   for i, item in enumerate(labeled)])
        states = take_rows(reshape(h, (b * l, config.d)), flat_idx)
        labels = np.concatenate([item.label_ids for item in labeled])
    logits = matmul(states, transpose(store["emb.tok"], (1, 0)))
    return softmax_cross_entropy(logits, labels)


def make_tlm_pair(src_tokens: Sequence[str], tgt_tokens: Sequence[str],
                  langs: tuple[int, int], vocab: Vocab, max_len: int) -> SegmentedInput:
    """Aligned pair as one joint sequence [/s] src [/s] tgt [/s]; masking then
    applies to both sides."""
    if not src_tokens or not tgt_tokens:
        raise ValueError("both sides of a TLM pair must be non-empty")
    return build_concat_input(src_tokens, tgt_tokens, langs, vocab, max_len)


def run_pretraining(
    objective: str,
    stream: list[SegmentedInput],
    store: ParamStore,
    config: EncoderConfig,
    vocab: Vocab,
    policy: MaskingPolicy,
    adam,
    steps: int,
    batch_size: int,
    seed: int,
    log_every: int = 50,
    metrics: list[tuple[int, float]] | None = None,
) -> None:
    """Masked-prediction training over a prepared stream of inputs.

    The stream is a list of ready SegmentedInputs: single-segment title
    sequences for MLM, joint pair sequences for TLM (same loss either way).
    """
    from .optim import adam_step

    if objective not in ("mlm", "tlm"):
        raise ValueError(f"unknown pre-training objective {objective!r}")
    if not stream:
        raise ValueError("empty pre-training stream")
    rng = np.random.default_rng(seed)
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(stream), size=batch_size)
        batch = [corrupt_input(stream[int(i)], policy, rng, vocab) for i in idx]
        loss = mlm_loss(batch, store, config, train=True, rng=rng)
        if loss is None:
            continue
        store.zero_grad()
        loss.backward()
        adam_step(store, adam)
        if metrics is not None and (step % log_every == 0 or step == steps or step == 1):
            metrics.append((step, float(loss.data)))


def mlm_stream(title_token_ids: Sequence[tuple[list[int], int]],
               vocab: Vocab, max_len: int) -> list[SegmentedInput]:
    """Single-segment inputs from (token_ids, lang_id) title pairs; overlength
    titles are truncated to fit."""
    out = []
    budget = max_len - 2
    for ids, lang in title_token_ids:
        out.append(single_segment_input(list(ids)[:budget], lang, vocab))
    return out
