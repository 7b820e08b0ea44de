"""Span-labeled example construction from terminology pairs and title corpora.

Positives come from target titles containing the target term as a contiguous
BPE-token subsequence (first occurrence is gold); each positive is matched by
a sampled negative title lacking the term. A synthetic bilingual world
generator provides a fully controlled substrate for evaluation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .bpe import MergeTable, apply_bpe

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TermPair:
    src_term: str
    tgt_term: str
    category: str = ""

    def __post_init__(self):
        if not self.src_term or not self.tgt_term:
            raise ValueError("both sides of a term pair must be non-empty")


@dataclass
class LabeledExample:
    src_term_tokens: list[str]
    tgt_sentence_tokens: list[str]
    gold_span: tuple[int, int] | None  # inclusive, sentence-local token coords
    src_lang: int
    tgt_lang: int
    category: str
    polarity: str  # "positive" | "negative"

    def __post_init__(self):
        if (self.polarity == "positive") != (self.gold_span is not None):
            raise ValueError("positive examples must carry a gold span, negatives must not")
        if self.gold_span is not None:
            s, e = self.gold_span
            if not 0 <= s <= e < len(self.tgt_sentence_tokens):
                raise ValueError(f"gold span {self.gold_span} out of sentence bounds")


def find_term_occurrences(term_tokens: Sequence[str],
                          sentence_tokens: Sequence[str]) -> list[tuple[int, int]]:
    """All greedy left-to-right non-overlapping contiguous matches (inclusive)."""
    if not term_tokens or not sentence_tokens:
        raise ValueError("term and sentence token sequences must be non-empty")
    term = list(term_tokens)
    sent = list(sentence_tokens)
    hits = []
    i = 0
    limit = len(sent) - len(term)
    while i <= limit:
        if sent[i : i + len(term)] == term:
            hits.append((i, i + len(term) - 1))
            i += len(term)
        else:
            i += 1
    return hits


@dataclass
class BuildResult:
    splits: dict[str, list[LabeledExample]]
    report: dict

    def __getitem__(self, split: str) -> list[LabeledExample]:
        return self.splits[split]


def build_examples(
    pairs: Sequence[TermPair],
    src_titles: Sequence[str],
    tgt_titles: Sequence[str],
    merges: MergeTable,
    neg_ratio: float = 1.0,
    max_len: int = 100,
    seed: int = 0,
    src_lang: int = 0,
    tgt_lang: int = 1,
    split_fracs: tuple[float, float, float] = (0.8, 0.1, 0.1),
    split_sizes: tuple[int, int, int] | None = None,
    hard_negatives: bool = False,
) -> BuildResult:
    """Construct train/valid/test splits of LabeledExamples.

    Splits are disjoint by (src_term, tgt_sentence) key and the whole build is
    a pure function of the inputs and `seed`. `max_len` drops examples whose
    joint layout m+n+3 would overflow the model input.
    """
    if not tgt_titles:
        raise ValueError("empty target title pool")
    rng = np.random.default_rng(seed)
    tok_titles = [apply_bpe(t, merges) for t in tgt_titles]
    title_index: dict[str, list[int]] = {}
    for i, toks in enumerate(tok_titles):
        for t in set(toks):
            title_index.setdefault(t, []).append(i)

    report = {
        "pairs": len(pairs),
        "positives": 0,
        "negatives": 0,
        "dropped_overlength": 0,
        "boundary_drops": 0,
        "terms_without_positives": 0,
        "negative_shortfall": 0,
    }
    src_title_text = " \n ".join(f" {t} " for t in src_titles)
    examples: list[LabeledExample] = []
    containing: dict[int, list[int]] = {}
    term_tok_cache: list[tuple[list[str], list[str]]] = []

    for pi, pair in enumerate(pairs):
        src_toks = apply_bpe(pair.src_term, merges)
        tgt_toks = apply_bpe(pair.tgt_term, merges)
        term_tok_cache.append((src_toks, tgt_toks))
        if not 2 <= len(pair.tgt_term.split()) <= 5:
            log.warning("term %r is outside the preferred 2-5 gram range", pair.tgt_term)
        if src_titles and f" {pair.src_term} " not in src_title_text:
            log.debug("source term %r absent from the source title corpus", pair.src_term)
        candidates = title_index.get(tgt_toks[0], [])
        found = []
        for ti in candidates:
            occ = find_term_occurrences(tgt_toks, tok_titles[ti])
            if occ:
                found.append((ti, occ[0]))
        containing[pi] = [ti for ti, _ in found]
        if not found:
            report["terms_without_positives"] += 1
            log.info("term %r matched no target title", pair.tgt_term)
        for ti, (s, e) in found:
            if len(src_toks) + len(tok_titles[ti]) + 3 > max_len:
                report["dropped_overlength"] += 1
                continue
            examples.append(LabeledExample(
                src_term_tokens=src_toks,
                tgt_sentence_tokens=list(tok_titles[ti]),
                gold_span=(s, e),
                src_lang=src_lang, tgt_lang=tgt_lang,
                category=pair.category, polarity="positive",
            ))
            report["positives"] += 1
        # text-level hits whose BPE tokens did not align contiguously
        needle = f" {pair.tgt_term} "
        text_hits = sum(1 for t in tgt_titles if needle in f" {t} ")
        if text_hits > len(found):
            report["boundary_drops"] += text_hits - len(found)

    for pi, pair in enumerate(pairs):
        src_toks, tgt_toks = term_tok_cache[pi]
        n_pos = len(containing[pi])
        wanted = int(round(neg_ratio * n_pos))
        if wanted == 0:
            continue
        contained = set(containing[pi])
        if hard_negatives:
            pool = sorted({ti for pj, tis in containing.items() if pj != pi for ti in tis}
                          - contained)
            if not pool:
                pool = [i for i in range(len(tgt_titles)) if i not in contained]
        else:
            pool = [i for i in range(len(tgt_titles)) if i not in contained]
        pool = [ti for ti in pool
                if len(src_toks) + len(tok_titles[ti]) + 3 <= max_len]
        if not pool:
            raise ValueError(f"empty negative title pool for term {pair.tgt_term!r}")
        take = min(wanted, len(pool))
        if take < wanted:
            report["negative_shortfall"] += wanted - take
        chosen = rng.choice(len(pool), size=take, replace=False)
        for ci in sorted(int(c) for c in chosen):
            ti = pool[ci]
            examples.append(LabeledExample(
                src_term_tokens=src_toks,
                tgt_sentence_tokens=list(tok_titles[ti]),
                gold_span=None,
                src_lang=src_lang, tgt_lang=tgt_lang,
                category=pair.category, polarity="negative",
            ))
            report["negatives"] += 1

    order = rng.permutation(len(examples))
    shuffled = [examples[i] for i in order]
    if split_sizes is not None:
        n_train, n_valid, n_test = split_sizes
        if n_train + n_valid + n_test > len(shuffled):
            raise ValueError(
                f"requested split sizes {split_sizes} exceed {len(shuffled)} examples")
    else:
        f_train, f_valid, _ = split_fracs
        n_train = int(round(f_train * len(shuffled)))
        n_valid = int(round(f_valid * len(shuffled)))
        n_test = max(0, len(shuffled) - n_train - n_valid)
    splits = {
        "train": shuffled[:n_train],
        "valid": shuffled[n_train : n_train + n_valid],
        "test": shuffled[n_train + n_valid : n_train + n_valid + n_test],
    }
    report["split_sizes"] = {k: len(v) for k, v in splits.items()}
    return BuildResult(splits, report)


# ---------------------------------------------------------------------------
# synthetic bilingual world


@dataclass(frozen=True)
class SyntheticWorldConfig:
    src_vocab: int = 200
    tgt_vocab: int = 200
    n_pairs: int = 50
    term_len: tuple[int, int] = (2, 5)
    title_len: tuple[int, int] = (6, 12)
    n_src_titles: int = 3000
    n_tgt_titles: int = 6000
    embed_frac: float = 0.5
    seed: int = 0

    def __post_init__(self):
        counts = (self.src_vocab, self.tgt_vocab, self.n_pairs,
                  self.n_src_titles, self.n_tgt_titles)
        if min(counts) <= 0:
            raise ValueError("all world counts must be positive")
        lo, hi = self.term_len
        if not (2 <= lo <= hi <= 5):
            raise ValueError("term length range must sit within [2, 5]")
        if not 0.0 <= self.embed_frac <= 1.0:
            raise ValueError("embed_frac must be in [0, 1]")
        if hi > self.title_len[1]:
            raise ValueError("infeasible config: term longer than any title")


_SRC_ALPHABET = "abcdefghij"
_TGT_ALPHABET = "klmnopqrst"


def _make_words(rng: np.random.Generator, alphabet: str, n: int) -> list[str]:
    words: list[str] = []
    seen = set()
    letters = list(alphabet)
    while len(words) < n:
        length = int(rng.integers(3, 8))
        w = "".join(rng.choice(letters) for _ in range(length))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _contains_term(title_words: list[str], term_words: tuple[str, ...]) -> bool:
    k = len(term_words)
    return any(tuple(title_words[i : i + k]) == term_words
               for i in range(len(title_words) - k + 1))


def _gen_titles(rng, words, term_word_seqs, cfg: SyntheticWorldConfig,
                n_titles: int) -> tuple[list[str], dict[int, int]]:
    """Random word titles; a fraction embed exactly one term, the rest none.

    Titles accidentally containing any term are resampled so containment is
    fully controlled by the generator.
    """
    lo, hi = cfg.title_len
    first_words = {seq[0]: [] for seq in term_word_seqs}
    for ti, seq in enumerate(term_word_seqs):
        first_words[seq[0]].append(ti)

    def contained_terms(title_words: list[str]) -> set[int]:
        out = set()
        for j, w in enumerate(title_words):
            for ti in first_words.get(w, ()):
                seq = term_word_seqs[ti]
                if tuple(title_words[j : j + len(seq)]) == seq:
                    out.add(ti)
        return out

    titles: list[str] = []
    embed_counts: dict[int, int] = {ti: 0 for ti in range(len(term_word_seqs))}
    for _ in range(n_titles):
        embed = rng.random() < cfg.embed_frac
        term_i = int(rng.integers(len(term_word_seqs))) if embed else -1
        for _attempt in range(200):
            if embed:
                seq = term_word_seqs[term_i]
                length = int(rng.integers(max(lo, len(seq)), hi + 1))
                title = [words[int(rng.integers(len(words)))] for _ in range(length)]
                start = int(rng.integers(length - len(seq) + 1))
                title[start : start + len(seq)] = list(seq)
                if contained_terms(title) == {term_i}:
                    embed_counts[term_i] += 1
                    break
            else:
                length = int(rng.integers(lo, hi + 1))
                title = [words[int(rng.integers(len(words)))] for _ in range(length)]
                if not contained_terms(title):
                    break
        else:
            raise RuntimeError("could not sample a title satisfying containment rules")
        titles.append(" ".join(title))
    return titles, embed_counts


def gen_synthetic_world(
    config: SyntheticWorldConfig,
) -> tuple[list[TermPair], list[str], list[str]]:
    """Deterministic bilingual world: word i of each language are translations.

    Returns (term pairs, source titles, target titles). Every term is
    guaranteed at least one containing and one non-containing target title.
    """
    rng = np.random.default_rng(config.seed)
    src_words = _make_words(rng, _SRC_ALPHABET, config.src_vocab)
    tgt_words = _make_words(rng, _TGT_ALPHABET, config.tgt_vocab)

    lo, hi = config.term_len
    pair_seqs: list[tuple[int, ...]] = []
    seen = set()
    while len(pair_seqs) < config.n_pairs:
        length = int(rng.integers(lo, hi + 1))
        idx = tuple(int(i) for i in rng.integers(0, config.src_vocab, size=length))
        if idx not in seen:
            seen.add(idx)
            pair_seqs.append(idx)
    pairs = [
        TermPair(
            src_term=" ".join(src_words[i] for i in idx),
            tgt_term=" ".join(tgt_words[i] for i in idx),
            category=f"cat{pi % 3}",
        )
        for pi, idx in enumerate(pair_seqs)
    ]

    src_seqs = [tuple(src_words[i] for i in idx) for idx in pair_seqs]
    tgt_seqs = [tuple(tgt_words[i] for i in idx) for idx in pair_seqs]
    src_titles, _ = _gen_titles(rng, src_words, src_seqs, config, config.n_src_titles)
    tgt_titles, embeds = _gen_titles(rng, tgt_words, tgt_seqs, config, config.n_tgt_titles)

    if config.embed_frac > 0.0:
        # guarantee at least one positive candidate per term
        for ti, count in embeds.items():
            if count == 0:
                seq = tgt_seqs[ti]
                length = int(rng.integers(max(lo, len(seq)), hi + 1))
                title = [tgt_words[int(rng.integers(config.tgt_vocab))] for _ in range(length)]
                start = int(rng.integers(length - len(seq) + 1))
                title[start : start + len(seq)] = list(seq)
                tgt_titles.append(" ".join(title))
    # guarantee at least one negative candidate per term: if some term occurs
    # in every title, one term-free title fixes it for all terms at once
    title_words = [t.split() for t in tgt_titles]
    if any(all(_contains_term(tw, seq) for tw in title_words) for seq in tgt_seqs):
        extra, _ = _gen_titles(rng, tgt_words, tgt_seqs,
                               replace(config, embed_frac=0.0), 1)
        tgt_titles.extend(extra)
    return pairs, src_titles, tgt_titles


# ---------------------------------------------------------------------------
# file formats


def load_term_pairs(path) -> list[TermPair]:
    """TSV: src_term<TAB>tgt_term<TAB>category."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ValueError(f"malformed term pair line: {line!r}")
            pairs.append(TermPair(parts[0], parts[1], parts[2] if len(parts) > 2 else ""))
    return pairs


def save_term_pairs(pairs: Sequence[TermPair], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(f"{p.src_term}\t{p.tgt_term}\t{p.category}\n")


def load_titles(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def save_titles(titles: Iterable[str], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in titles:
            f.write(t + "\n")


def save_examples(examples: Sequence[LabeledExample], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps({
                "src_term_tokens": ex.src_term_tokens,
                "tgt_sentence_tokens": ex.tgt_sentence_tokens,
                "span": list(ex.gold_span) if ex.gold_span else None,
                "src_lang": ex.src_lang,
                "tgt_lang": ex.tgt_lang,
                "category": ex.category,
                "polarity": ex.polarity,
            }, ensure_ascii=False) + "\n")


def load_examples(path) -> list[LabeledExample]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            out.append(LabeledExample(
                src_term_tokens=list(d["src_term_tokens"]),
                tgt_sentence_tokens=list(d["tgt_sentence_tokens"]),
                gold_span=tuple(d["span"]) if d["span"] is not None else None,
                src_lang=int(d["src_lang"]),
                tgt_lang=int(d["tgt_lang"]),
                category=d.get("category", ""),
                polarity=d["polarity"],
            ))
    return out
