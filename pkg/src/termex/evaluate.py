"""Exact-match span evaluation and attention-weight export."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import no_grad
from .bpe import Vocab
from .corpus import LabeledExample
from .extractor import ExtractorModel, SpanPrediction, forward_example, to_model_span


@dataclass
class EvalReport:
    total: int = 0
    correct: int = 0
    positive_total: int = 0
    positive_correct: int = 0
    negative_total: int = 0
    negative_correct: int = 0
    inconsistencies: int = 0
    per_category: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def precision(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0

    @property
    def positive_accuracy(self) -> float:
        return 100.0 * self.positive_correct / self.positive_total if self.positive_total else 0.0

    @property
    def negative_accuracy(self) -> float:
        return 100.0 * self.negative_correct / self.negative_total if self.negative_total else 0.0

    def to_text(self) -> str:
        lines = [
            f"total {self.total}",
            f"correct {self.correct}",
            f"precision {self.precision:.4f}",
            f"positive_total {self.positive_total}",
            f"positive_correct {self.positive_correct}",
            f"positive_accuracy {self.positive_accuracy:.4f}",
            f"negative_total {self.negative_total}",
            f"negative_correct {self.negative_correct}",
            f"negative_accuracy {self.negative_accuracy:.4f}",
            f"inconsistencies {self.inconsistencies}",
        ]
        for cat in sorted(self.per_category):
            t, c = self.per_category[cat]
            lines.append(f"category.{cat}.total {t}")
            lines.append(f"category.{cat}.correct {c}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())


def parse_report(text: str) -> dict[str, float]:
    out = {}
    for line in text.strip().splitlines():
        key, value = line.split(" ")
        out[key] = float(value)
    return out


def exact_match_precision(predictions: Sequence[SpanPrediction],
                          golds: Sequence[LabeledExample],
                          mode: str = "concat",
                          drop_source: bool = False) -> EvalReport:
    """A prediction is correct iff it reproduces both gold indices exactly,
    with verdict none matching gold negatives."""
    if len(predictions) != len(golds):
        raise ValueError(
            f"got {len(predictions)} predictions for {len(golds)} examples")
    rep = EvalReport()
    for pred, ex in zip(predictions, golds):
        rep.total += 1
        if pred.inconsistent:
            rep.inconsistencies += 1
        if ex.polarity == "positive":
            rep.positive_total += 1
            ok = pred.verdict == to_model_span(ex, mode, drop_source)
            rep.positive_correct += ok
        else:
            rep.negative_total += 1
            ok = pred.verdict is None
            rep.negative_correct += ok
        rep.correct += ok
        t, c = rep.per_category.get(ex.category, (0, 0))
        rep.per_category[ex.category] = (t + 1, c + ok)
    return rep


def evaluate_model(model: ExtractorModel, examples: Sequence[LabeledExample],
                   vocab: Vocab, max_len: int) -> EvalReport:
    from .extractor import predict_batch

    preds = predict_batch(model, examples, vocab, max_len)
    return exact_match_precision(preds, examples, model.mode, model.drop_source)


def export_attention(model: ExtractorModel, example: LabeledExample, layer: int,
                     path, vocab: Vocab, max_len: int,
                     per_head: bool = False) -> np.ndarray:
    """Dump one layer's self-attention restricted to source rows x target cols.

    Rows are the source segment [/s] s_1..s_m [/s]; columns are the target
    segment [/s] t_1..t_n [/s] (the middle separator opens the target side).
    Values are averaged over heads unless `per_head`. Returns the averaged
    sub-matrix; writes a TSV grid with token headers.
    """
    if model.mode != "concat" or model.drop_source:
        raise ValueError("attention export requires a concat-mode model with a source segment")
    if not 0 <= layer < model.config.layers:
        raise IndexError(
            f"layer {layer} out of range for {model.config.layers}-layer encoder")
    capture: list[np.ndarray] = []
    with no_grad():
        forward_example(model, example, vocab, max_len, capture=capture)
    weights = capture[layer]  # (heads, L, L)
    m = len(example.src_term_tokens)
    n = len(example.tgt_sentence_tokens)
    rows = np.arange(0, m + 2)
    cols = np.arange(m + 1, m + n + 3)
    tokens = [vocab.id_to_token[i] for i in
              _concat_token_ids(example, vocab)]
    averaged = weights.mean(axis=0)[np.ix_(rows, cols)]
    with open(path, "w", encoding="utf-8") as f:
        if per_head:
            for h in range(weights.shape[0]):
                f.write(f"#head {h}\n")
                _write_grid(f, weights[h][np.ix_(rows, cols)], tokens, rows, cols)
        else:
            _write_grid(f, averaged, tokens, rows, cols)
    return averaged


def _concat_token_ids(example: LabeledExample, vocab: Vocab) -> list[int]:
    return ([vocab.sep_id] + vocab.encode(example.src_term_tokens)
            + [vocab.sep_id] + vocab.encode(example.tgt_sentence_tokens)
            + [vocab.sep_id])


def _write_grid(f, grid: np.ndarray, tokens: list[str],
                rows: np.ndarray, cols: np.ndarray) -> None:
    f.write("\t".join([""] + [tokens[c] for c in cols]) + "\n")
    for ri, r in enumerate(rows):
        cells = [tokens[r]] + [repr(float(v)) for v in grid[ri]]
        f.write("\t".join(cells) + "\n")


def parse_attention_grid(path) -> tuple[list[str], list[str], np.ndarray]:
    """Read back an averaged TSV grid as (row tokens, col tokens, matrix)."""
    with open(path, encoding="utf-8") as f:
        lines = [l.rstrip("\n") for l in f if l.strip() and not l.startswith("#head")]
    header = lines[0].split("\t")[1:]
    row_tokens = []
    values = []
    for line in lines[1:]:
        cells = line.split("\t")
        row_tokens.append(cells[0])
        values.append([float(v) for v in cells[1:]])
    return row_tokens, header, np.array(values, dtype=np.float64)
