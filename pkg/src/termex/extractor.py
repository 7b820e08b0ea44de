"""Span extraction architectures and decoding.

Two routes produce the representation matrix H:
  - attn: term and sentence encoded separately by one shared encoder, fused
    by cross-attention, H = FFN(LayerNorm(H_tgt + F(H_tgt))).
  - concat: one joint sequence [/s] term [/s] sentence [/s] through the
    encoder's self-attention.

The span detector classifies each position twice (is-start, is-end) with
d-by-2 heads; position 0 (the leading separator) is the no-span sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .autodiff import (
    ParamStore,
    Tensor,
    add,
    layer_norm,
    masked_softmax,
    no_grad,
    picked_nll,
    scale,
)
from .bpe import MergeTable, Vocab, apply_bpe, detokenize
from .corpus import LabeledExample
from .encoder import (
    EncoderConfig,
    SegmentedInput,
    embed,
    encode,
    init_encoder_params,
    single_segment_input,
)


def init_fusion_params(config: EncoderConfig, rng: np.random.Generator,
                       store: ParamStore, dtype=np.float32) -> None:
    d, d_ff = config.d, config.d_ff
    for w in ("wq", "wk", "wv", "wo"):
        store.add(f"fuse.attn.{w}", rng.normal(0.0, 0.02, (d, d)).astype(dtype))
    store.add("fuse.ln.g", np.ones(d, dtype=dtype))
    store.add("fuse.ln.b", np.zeros(d, dtype=dtype))
    store.add("fuse.ffn.w1", rng.normal(0.0, 0.02, (d, d_ff)).astype(dtype))
    store.add("fuse.ffn.b1", np.zeros(d_ff, dtype=dtype))
    store.add("fuse.ffn.w2", rng.normal(0.0, 0.02, (d_ff, d)).astype(dtype))
    store.add("fuse.ffn.b2", np.zeros(d, dtype=dtype))


def init_span_params(config: EncoderConfig, rng: np.random.Generator,
                     store: ParamStore, tie_span_heads: bool = False,
                     dtype=np.float32) -> None:
    store.add("span.w_start", rng.normal(0.0, 0.02, (config.d, 2)).astype(dtype))
    if not tie_span_heads:
        store.add("span.w_end", rng.normal(0.0, 0.02, (config.d, 2)).astype(dtype))


@dataclass
class ExtractorModel:
    """Bundle of everything needed to run one extractor."""

    mode: str  # "attn" | "concat"
    config: EncoderConfig
    store: ParamStore
    tie_span_heads: bool = False
    drop_source: bool = False

    def __post_init__(self):
        if self.mode not in ("attn", "concat"):
            raise ValueError(f"unknown extractor mode {self.mode!r}")
        if self.mode == "attn" and self.drop_source:
            raise ValueError("drop_source is a concat-mode ablation")

    @property
    def w_end(self) -> Tensor:
        return self.store["span.w_start" if self.tie_span_heads else "span.w_end"]


def init_extractor(mode: str, config: EncoderConfig, rng: np.random.Generator,
                   tie_span_heads: bool = False, drop_source: bool = False,
                   dtype=np.float32) -> ExtractorModel:
    store = init_encoder_params(config, rng, dtype=dtype)
    if mode == "attn":
        init_fusion_params(config, rng, store, dtype=dtype)
    init_span_params(config, rng, store, tie_span_heads, dtype=dtype)
    return ExtractorModel(mode, config, store, tie_span_heads, drop_source)


# ---------------------------------------------------------------------------
# input layout


def build_concat_input(term_tokens: Sequence[str] | list[int],
                       sentence_tokens: Sequence[str] | list[int],
                       langs: tuple[int, int],
                       vocab: Vocab,
                       max_len: int,
                       drop_source: bool = False) -> SegmentedInput:
    """Joint layout [/s] s_1..s_m [/s] t_1..t_n [/s] (length m+n+3).

    With `drop_source` the source segment disappears: [/s] t_1..t_n [/s].
    Position ids restart at 0 on the target segment; language ids switch with
    the segment.
    """
    src_lang, tgt_lang = langs
    term_ids = _as_ids(term_tokens, vocab)
    sent_ids = _as_ids(sentence_tokens, vocab)
    if not sent_ids:
        raise ValueError("target sentence must be non-empty")
    if drop_source:
        m, n = 0, len(sent_ids)
        total = n + 2
        if total > max_len:
            raise ValueError(f"input length {total} exceeds max_len {max_len} "
                             f"(target {n} tokens)")
        ids = [vocab.sep_id] + sent_ids + [vocab.sep_id]
        pos = list(range(total))
        lang = [tgt_lang] * total
        bounds = [0, total - 1]
    else:
        if not term_ids:
            raise ValueError("source term must be non-empty")
        m, n = len(term_ids), len(sent_ids)
        total = m + n + 3
        if total > max_len:
            raise ValueError(f"input length {total} exceeds max_len {max_len} "
                             f"(term {m} + sentence {n} tokens)")
        ids = [vocab.sep_id] + term_ids + [vocab.sep_id] + sent_ids + [vocab.sep_id]
        pos = list(range(m + 2)) + list(range(n + 1))
        lang = [src_lang] * (m + 2) + [tgt_lang] * (n + 1)
        bounds = [0, m + 1, total - 1]
    return SegmentedInput(
        token_ids=np.array(ids),
        position_ids=np.array(pos),
        language_ids=np.array(lang),
        pad_mask=np.zeros(total, dtype=bool),
        segment_bounds=bounds,
    )


def _as_ids(tokens, vocab: Vocab) -> list[int]:
    if len(tokens) and isinstance(tokens[0], str):
        return vocab.encode(tokens)
    return [int(t) for t in tokens]


def target_offset(example: LabeledExample, mode: str, drop_source: bool = False) -> int:
    """Shift from sentence-local token coords to model-input coords."""
    if mode == "concat" and not drop_source:
        return len(example.src_term_tokens) + 2
    return 1


def to_model_span(example: LabeledExample, mode: str,
                  drop_source: bool = False) -> tuple[int, int]:
    """Gold span in model coordinates; negatives map to the (0, 0) sentinel."""
    if example.gold_span is None:
        return (0, 0)
    off = target_offset(example, mode, drop_source)
    s, e = example.gold_span
    return (s + off, e + off)


# ---------------------------------------------------------------------------
# forward paths


def fuse_attn(h_src: Tensor, h_tgt: Tensor, store: ParamStore,
              config: EncoderConfig,
              src_pad_mask: np.ndarray | None = None,
              capture: list | None = None) -> Tensor:
    """Cross-attention fusion: queries from the sentence, keys/values from the term."""
    if h_src.data.shape[-1] != h_tgt.data.shape[-1]:
        raise ValueError(
            f"fusion dim mismatch: src {h_src.data.shape} vs tgt {h_tgt.data.shape}")
    f = nn.multi_head_attention(
        h_tgt, h_src, h_src, src_pad_mask, config.heads,
        store["fuse.attn.wq"], store["fuse.attn.wk"],
        store["fuse.attn.wv"], store["fuse.attn.wo"],
        capture=capture,
    )
    normed = layer_norm(add(h_tgt, f), store["fuse.ln.g"], store["fuse.ln.b"])
    return nn.ffn(normed, store["fuse.ffn.w1"], store["fuse.ffn.b1"],
                  store["fuse.ffn.w2"], store["fuse.ffn.b2"])


def span_logits(h: Tensor, w_start: Tensor, w_end: Tensor,
                pad_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Per-position 2-class probabilities for span start and end.

    Padded positions get their class-1 logit pushed to -1e9 so they can never
    be predicted. Accepts (L, d) rows or (B, L, d) batches.
    """
    mask = None
    if pad_mask is not None and pad_mask.any():
        pad_mask = np.asarray(pad_mask, dtype=bool)
        mask = np.zeros(pad_mask.shape + (2,), dtype=h.data.dtype)
        mask[pad_mask, 1] = nn.NEG_INF
    p_start = masked_softmax(nn.linear(h, w_start), mask)
    p_end = masked_softmax(nn.linear(h, w_end), mask)
    return p_start, p_end


def span_loss(p_start: Tensor, p_end: Tensor, gold: tuple[int, int]) -> Tensor:
    """L = (L_start + L_end) / 2, cross-entropy over per-position binary labels."""
    s, e = gold
    n = p_start.data.shape[0]
    if not (0 <= s < n and 0 <= e < n):
        raise IndexError(f"gold span {gold} outside input of length {n}")
    y_start = np.zeros(n, dtype=np.int64)
    y_start[s] = 1
    y_end = np.zeros(n, dtype=np.int64)
    y_end[e] = 1
    l_start = picked_nll(p_start, y_start)
    l_end = picked_nll(p_end, y_end)
    return scale(add(l_start, l_end), 0.5)


@dataclass
class SpanPrediction:
    start_index: int
    end_index: int
    p_start: np.ndarray  # class-1 probability per position
    p_end: np.ndarray
    verdict: tuple[int, int] | None
    inconsistent: bool = False


def decode_span(p_start, p_end, target_segment_range: tuple[int, int]) -> SpanPrediction:
    """Argmax decode over {0} union the target segment, ties to smallest index.

    (0, 0) means no span; a start after its end, or exactly one index at the
    sentinel, is inconsistent and also decodes to none.
    """
    ps = p_start.data if isinstance(p_start, Tensor) else np.asarray(p_start)
    pe = p_end.data if isinstance(p_end, Tensor) else np.asarray(p_end)
    if ps.ndim == 2:
        ps = ps[:, 1]
    if pe.ndim == 2:
        pe = pe[:, 1]
    lo, hi = target_segment_range
    allowed = np.array([0] + list(range(lo, hi + 1)), dtype=np.int64)
    s = int(allowed[np.argmax(ps[allowed])])
    e = int(allowed[np.argmax(pe[allowed])])
    if s == 0 and e == 0:
        return SpanPrediction(s, e, ps, pe, verdict=None)
    if s == 0 or e == 0 or s > e:
        return SpanPrediction(s, e, ps, pe, verdict=None, inconsistent=True)
    return SpanPrediction(s, e, ps, pe, verdict=(s, e))


def forward_example(model: ExtractorModel, example: LabeledExample, vocab: Vocab,
                    max_len: int, train: bool = False,
                    rng: np.random.Generator | None = None,
                    capture: list | None = None,
                    ) -> tuple[Tensor, Tensor, SegmentedInput]:
    """Run one example through the chosen architecture to span probabilities."""
    cfg, store = model.config, model.store
    if model.mode == "concat":
        inp = build_concat_input(example.src_term_tokens, example.tgt_sentence_tokens,
                                 (example.src_lang, example.tgt_lang), vocab, max_len,
                                 drop_source=model.drop_source)
        h = encode(embed(inp, store, cfg, train, rng), inp.pad_mask, store, cfg,
                   train, rng, capture=capture)
        tgt_inp = inp
    else:
        src_inp = single_segment_input(vocab.encode(example.src_term_tokens),
                                       example.src_lang, vocab)
        tgt_inp = single_segment_input(vocab.encode(example.tgt_sentence_tokens),
                                       example.tgt_lang, vocab)
        if len(src_inp) > max_len or len(tgt_inp) > max_len:
            raise ValueError(
                f"input lengths {len(src_inp)}/{len(tgt_inp)} exceed max_len {max_len}")
        h_src = encode(embed(src_inp, store, cfg, train, rng), src_inp.pad_mask,
                       store, cfg, train, rng)
        h_tgt = encode(embed(tgt_inp, store, cfg, train, rng), tgt_inp.pad_mask,
                       store, cfg, train, rng)
        h = fuse_attn(h_src, h_tgt, store, cfg, src_inp.pad_mask, capture=capture)
    p_start, p_end = span_logits(h, store["span.w_start"], model.w_end,
                                 tgt_inp.pad_mask)
    return p_start, p_end, tgt_inp


def predict_example(model: ExtractorModel, example: LabeledExample, vocab: Vocab,
                    max_len: int) -> SpanPrediction:
    with no_grad():
        p_start, p_end, inp = forward_example(model, example, vocab, max_len)
    return decode_span(p_start, p_end, inp.target_range)


def extract(src_term_text: str, tgt_sentence_text: str, model: ExtractorModel,
            merges: MergeTable, vocab: Vocab, max_len: int,
            mode: str | None = None) -> str | None:
    """Tokenize, run the model, and return the extracted span text (or None)."""
    if mode is not None and mode != model.mode:
        raise ValueError(f"model is {model.mode!r}, requested {mode!r}")
    term_tokens = apply_bpe(src_term_text, merges)
    sent_tokens = apply_bpe(tgt_sentence_text, merges)
    example = LabeledExample(
        src_term_tokens=term_tokens, tgt_sentence_tokens=sent_tokens,
        gold_span=None, src_lang=0, tgt_lang=1, category="", polarity="negative",
    )
    pred = predict_example(model, example, vocab, max_len)
    if pred.verdict is None:
        return None
    off = target_offset(example, model.mode, model.drop_source)
    s, e = pred.verdict
    return detokenize(sent_tokens[s - off : e - off + 1])


# ---------------------------------------------------------------------------
# batched execution: same ops with a leading batch axis over padded inputs


@dataclass
class PackedBatch:
    """Padded stack of SegmentedInputs plus per-example bookkeeping."""

    token_ids: np.ndarray  # (B, L)
    position_ids: np.ndarray
    language_ids: np.ndarray
    pad_mask: np.ndarray  # (B, L), True at padding
    lengths: np.ndarray  # (B,)
    target_ranges: list[tuple[int, int]]


def pack_inputs(inputs: Sequence[SegmentedInput], pad_id: int) -> PackedBatch:
    b = len(inputs)
    lengths = np.array([len(inp) for inp in inputs])
    max_l = int(lengths.max())
    token_ids = np.full((b, max_l), pad_id, dtype=np.int64)
    position_ids = np.zeros((b, max_l), dtype=np.int64)
    language_ids = np.zeros((b, max_l), dtype=np.int64)
    pad_mask = np.ones((b, max_l), dtype=bool)
    ranges = []
    for i, inp in enumerate(inputs):
        n = len(inp)
        token_ids[i, :n] = inp.token_ids
        position_ids[i, :n] = inp.position_ids
        language_ids[i, :n] = inp.language_ids
        pad_mask[i, :n] = inp.pad_mask
        ranges.append(inp.target_range)
    return PackedBatch(token_ids, position_ids, language_ids, pad_mask,
                       lengths, ranges)


def forward_batch(model: ExtractorModel, batch: Sequence[LabeledExample],
                  vocab: Vocab, max_len: int, train: bool = False,
                  rng: np.random.Generator | None = None,
                  ) -> tuple[Tensor, Tensor, PackedBatch]:
    """Run a whole batch through the chosen architecture at once."""
    cfg, store = model.config, model.store
    if model.mode == "concat":
        inputs = [build_concat_input(ex.src_term_tokens, ex.tgt_sentence_tokens,
                                     (ex.src_lang, ex.tgt_lang), vocab, max_len,
                                     drop_source=model.drop_source)
                  for ex in batch]
        packed = pack_inputs(inputs, vocab.pad_id)
        h = encode(embed(packed, store, cfg, train, rng), packed.pad_mask,
                   store, cfg, train, rng)
        tgt_packed = packed
    else:
        src_packed = pack_inputs(
            [single_segment_input(vocab.encode(ex.src_term_tokens), ex.src_lang,
                                  vocab) for ex in batch], vocab.pad_id)
        tgt_packed = pack_inputs(
            [single_segment_input(vocab.encode(ex.tgt_sentence_tokens), ex.tgt_lang,
                                  vocab) for ex in batch], vocab.pad_id)
        if src_packed.token_ids.shape[1] > max_len or \
                tgt_packed.token_ids.shape[1] > max_len:
            raise ValueError("batch contains inputs exceeding max_len")
        h_src = encode(embed(src_packed, store, cfg, train, rng),
                       src_packed.pad_mask, store, cfg, train, rng)
        h_tgt = encode(embed(tgt_packed, store, cfg, train, rng),
                       tgt_packed.pad_mask, store, cfg, train, rng)
        h = fuse_attn(h_src, h_tgt, store, cfg, src_packed.pad_mask)
    p_start, p_end = span_logits(h, store["span.w_start"], model.w_end,
                                 tgt_packed.pad_mask)
    return p_start, p_end, tgt_packed


def batch_span_loss(model: ExtractorModel, batch: Sequence[LabeledExample],
                    vocab: Vocab, max_len: int, train: bool = True,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Mean over the batch of the per-example span loss, in one graph."""
    from .autodiff import picked_nll as weighted_nll
    from .autodiff import reshape

    p_start, p_end, packed = forward_batch(model, batch, vocab, max_len, train, rng)
    b, l = packed.token_ids.shape
    labels_start = np.zeros((b, l), dtype=np.int64)
    labels_end = np.zeros((b, l), dtype=np.int64)
    weights = np.zeros((b, l), dtype=np.float64)
    for i, ex in enumerate(batch):
        s, e = to_model_span(ex, model.mode, model.drop_source)
        n = int(packed.lengths[i])
        if not (0 <= s < n and 0 <= e < n):
            raise IndexError(f"gold span {(s, e)} outside input of length {n}")
        labels_start[i, s] = 1
        labels_end[i, e] = 1
        weights[i, :n] = 1.0 / (2.0 * b * n)
    flat_start = reshape(p_start, (b * l, 2))
    flat_end = reshape(p_end, (b * l, 2))
    return add(weighted_nll(flat_start, labels_start.ravel(), weights.ravel()),
               weighted_nll(flat_end, labels_end.ravel(), weights.ravel()))


def predict_batch(model: ExtractorModel, examples: Sequence[LabeledExample],
                  vocab: Vocab, max_len: int,
                  batch_size: int = 64) -> list[SpanPrediction]:
    preds = []
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo : lo + batch_size]
        with no_grad():
            p_start, p_end, packed = forward_batch(model, chunk, vocab, max_len)
        for i in range(len(chunk)):
            n = int(packed.lengths[i])
            preds.append(decode_span(p_start.data[i, :n], p_end.data[i, :n],
                                     packed.target_ranges[i]))
    return preds


def train_extractor(model: ExtractorModel, examples: Sequence[LabeledExample],
                    vocab: Vocab, adam, steps: int, batch_size: int,
                    max_len: int, seed: int,
                    log_every: int = 50,
                    metrics: list[tuple[int, float]] | None = None) -> None:
    """SGD loop: uniform example sampling, one Adam step per batch."""
    from .optim import adam_step

    if not examples:
        raise ValueError("no training examples")
    rng = np.random.default_rng(seed)
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(examples), size=min(batch_size, len(examples)))
        batch = [examples[int(i)] for i in idx]
        loss = batch_span_loss(model, batch, vocab, max_len, train=True, rng=rng)
        model.store.zero_grad()
        loss.backward()
        adam_step(model.store, adam)
        if metrics is not None and (step % log_every == 0 or step == steps or step == 1):
            metrics.append((step, float(loss.data)))
