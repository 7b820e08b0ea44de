"""Joint byte-pair encoding over mixed-language corpora, with a shared vocab.

Words are whitespace tokens; BPE symbols start from single characters, so
unsegmented CJK runs fall out of the same mechanism (each character is a
symbol until merges say otherwise). Continuation pieces carry an ``@@``
suffix, e.g. one word "ababc" tokenized as ``ab@@ ab@@ c``.
"""

from __future__ import annotations

import hashlib
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

SEP = "[/s]"
MASK = "[MASK]"
PAD = "[PAD]"
UNK = "[UNK]"
SPECIALS = (SEP, MASK, PAD, UNK)


def _norm(line: str) -> str:
    return unicodedata.normalize("NFC", line)


class MergeTable:
    """Ordered BPE merge rules; earlier rules have higher priority."""

    def __init__(self, rules: Sequence[tuple[str, str]], fingerprint: str = ""):
        rules = tuple((str(a), str(b)) for a, b in rules)
        if len(set(rules)) != len(rules):
            raise ValueError("merge rules must be unique")
        self.rules = rules
        self.fingerprint = fingerprint
        self._ranks = {pair: i for i, pair in enumerate(rules)}
        self._cache: dict[str, tuple[str, ...]] = {}

    def __len__(self) -> int:
        return len(self.rules)

    def segment_word(self, word: str) -> tuple[str, ...]:
        """Split one word into subword pieces (without @@ decoration)."""
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = list(word)
        while len(symbols) > 1:
            best = None
            best_rank = None
            for pair in zip(symbols, symbols[1:]):
                rank = self._ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best, best_rank = pair, rank
            if best is None:
                break
            symbols = _merge_once(symbols, best)
        pieces = tuple(symbols)
        self._cache[word] = pieces
        return pieces


def _merge_once(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    """Merge every left-to-right occurrence of `pair` in `symbols`."""
    out = []
    i = 0
    a, b = pair
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def corpus_fingerprint(lines: Iterable[str]) -> str:
    """Content hash of a corpus, independent of line enumeration order."""
    h = hashlib.sha256()
    for line in sorted(_norm(line) for line in lines):
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def learn_bpe(corpora: Iterable[str], num_merges: int) -> MergeTable:
    """Greedy most-frequent-pair merging; ties break to the smaller pair.

    `corpora` is a flat iterable of pre-tokenized text lines from all
    languages together (joint BPE).
    """
    lines = [_norm(line) for line in corpora]
    word_counts = Counter()
    for line in lines:
        word_counts.update(line.split())
    if not word_counts:
        raise ValueError("cannot learn BPE from empty corpora")
    fingerprint = corpus_fingerprint(lines)

    words = [(list(w), c) for w, c in sorted(word_counts.items())]
    pair_counts: Counter = Counter()
    pair_words: dict[tuple[str, str], set[int]] = {}
    for idx, (symbols, count) in enumerate(words):
        for pair in zip(symbols, symbols[1:]):
            pair_counts[pair] += count
            pair_words.setdefault(pair, set()).add(idx)

    rules: list[tuple[str, str]] = []
    for _ in range(num_merges):
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        best = min(p for p, c in pair_counts.items() if c == best_count)
        rules.append(best)
        for idx in sorted(pair_words.pop(best, ())):
            symbols, count = words[idx]
            for pair in zip(symbols, symbols[1:]):
                pair_counts[pair] -= count
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
                refs = pair_words.get(pair)
                if refs is not None:
                    refs.discard(idx)
                    if not refs:
                        del pair_words[pair]
            merged = _merge_once(symbols, best)
            words[idx] = (merged, count)
            for pair in zip(merged, merged[1:]):
                pair_counts[pair] += count
                pair_words.setdefault(pair, set()).add(idx)
    return MergeTable(rules, fingerprint)


def apply_bpe(line: str, merges: MergeTable) -> list[str]:
    """Tokenize one pre-tokenized line; non-final pieces get an @@ suffix."""
    tokens: list[str] = []
    for word in _norm(line).split():
        pieces = merges.segment_word(word)
        tokens.extend(p + "@@" for p in pieces[:-1])
        tokens.append(pieces[-1])
    return tokens


def detokenize(tokens: Sequence[str]) -> str:
    """Join subword tokens back into text, dissolving @@ continuations."""
    return " ".join(tokens).replace("@@ ", "")


@dataclass
class Vocab:
    """Shared token<->id table; specials occupy the lowest ids."""

    token_to_id: dict[str, int]
    id_to_token: list[str]
    lang_to_id: dict[str, int] = field(default_factory=dict)

    sep_id = 0
    mask_id = 1
    pad_id = 2
    unk_id = 3
    n_specials = len(SPECIALS)

    def __post_init__(self):
        for i, tok in enumerate(SPECIALS):
            if self.id_to_token[i] != tok:
                raise ValueError(f"special token {tok} must sit at id {i}")
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("token table is not a bijection")

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def n_langs(self) -> int:
        return len(self.lang_to_id)

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, self.unk_id) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def is_special(self, token_id: int) -> bool:
        return token_id < self.n_specials

    def lang_id(self, lang: str) -> int:
        try:
            return self.lang_to_id[lang]
        except KeyError:
            raise KeyError(f"unknown language {lang!r}; known: {sorted(self.lang_to_id)}")


def build_vocab(
    tokenized_corpora: Iterable[Sequence[str]],
    min_count: int = 0,
    languages: Sequence[str] = (),
) -> Vocab:
    """Vocabulary of all tokens with count >= min_count, plus specials.

    Ordering is deterministic: count descending, then lexicographic, so the
    result is independent of corpus file enumeration order.
    """
    counts = Counter()
    for tokens in tokenized_corpora:
        counts.update(tokens)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count and t not in SPECIALS),
        key=lambda t: (-counts[t], t),
    )
    id_to_token = list(SPECIALS) + kept
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    lang_to_id = {lang: i for i, lang in enumerate(dict.fromkeys(languages))}
    return Vocab(token_to_id, id_to_token, lang_to_id)


# ---------------------------------------------------------------------------
# file formats: merges as "left right" lines, vocab as "token<TAB>id" lines.
# Header comments ("#key value") carry the fingerprint and language table.


def save_merges(merges: MergeTable, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        if merges.fingerprint:
            f.write(f"#fingerprint {merges.fingerprint}\n")
        for a, b in merges.rules:
            f.write(f"{a} {b}\n")


def load_merges(path) -> MergeTable:
    rules = []
    fingerprint = ""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f):
            line = line.rstrip("\n")
            if not line:
                continue
            if lineno == 0 and line.startswith("#fingerprint "):
                fingerprint = line.split(" ", 1)[1]
                continue
            a, b = line.split(" ")
            rules.append((a, b))
    return MergeTable(rules, fingerprint)


def save_vocab(vocab: Vocab, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for lang, i in vocab.lang_to_id.items():
            f.write(f"#lang {lang} {i}\n")
        for i, tok in enumerate(vocab.id_to_token):
            f.write(f"{tok}\t{i}\n")


def load_vocab(path) -> Vocab:
    id_to_token: list[str] = []
    lang_to_id: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#lang "):
                _, lang, idx = line.split(" ")
                lang_to_id[lang] = int(idx)
                continue
            tok, idx = line.split("\t")
            if int(idx) != len(id_to_token):
                raise ValueError(f"vocab ids must be dense and ordered, got {line!r}")
            id_to_token.append(tok)
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    return Vocab(token_to_id, id_to_token, lang_to_id)


def artifacts_fingerprint(merges: MergeTable, vocab: Vocab) -> str:
    """Joint hash of merges and vocab contents, pinned inside checkpoints."""
    h = hashlib.sha256()
    for a, b in merges.rules:
        h.update(f"{a} {b}\n".encode("utf-8"))
    h.update(b"--\n")
    for tok in vocab.id_to_token:
        h.update(tok.encode("utf-8"))
        h.update(b"\n")
    for lang, i in sorted(vocab.lang_to_id.items()):
        h.update(f"{lang}={i}\n".encode("utf-8"))
    return h.hexdigest()
