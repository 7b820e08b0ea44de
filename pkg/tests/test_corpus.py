"""Corpus construction: occurrence search vs brute force, build invariants,
synthetic world self-consistency."""

import numpy as np
import pytest

from termex.bpe import MergeTable, apply_bpe, detokenize, learn_bpe
from termex.corpus import (
    LabeledExample,
    SyntheticWorldConfig,
    TermPair,
    build_examples,
    find_term_occurrences,
    gen_synthetic_world,
    load_examples,
    load_term_pairs,
    save_examples,
    save_term_pairs,
)

import oracles


# ---------------------------------------------------------------------------
# find_term_occurrences


def test_single_literal_match():
    assert find_term_occurrences(["a", "b"], ["x", "a", "b", "y"]) == [(1, 2)]


def test_two_disjoint_matches():
    assert find_term_occurrences(["a"], ["a", "a"]) == [(0, 0), (1, 1)]


def test_overlapping_matches_resolved_greedily():
    assert find_term_occurrences(["a", "a"], ["a", "a", "a"]) == [(0, 1)]


def test_no_match_returns_empty():
    assert find_term_occurrences(["q"], ["a", "b"]) == []


def test_empty_sequences_rejected():
    with pytest.raises(ValueError):
        find_term_occurrences([], ["a"])
    with pytest.raises(ValueError):
        find_term_occurrences(["a"], [])


def test_random_cases_match_bruteforce_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        term = [str(rng.integers(0, 4)) for _ in range(int(rng.integers(1, 4)))]
        sentence = [str(rng.integers(0, 4)) for _ in range(int(rng.integers(1, 15)))]
        assert find_term_occurrences(term, sentence) == \
            oracles.find_occurrences_bruteforce(term, sentence)


# ---------------------------------------------------------------------------
# build_examples on a hand-enumerated world


PAIRS = [
    TermPair("s1 s2", "t1 t2", "catA"),
    TermPair("s3 s4", "t3 t4", "catB"),
    TermPair("s5 s6", "t9 t9", "catA"),  # appears in no title
]
TGT_TITLES = [
    "t1 t2 w",      # P0
    "w t1 t2",      # P0
    "t3 t4 y",      # P1
    "y z w",
    "t1 t2 t3 t4",  # P0 and P1
    "z z y",
    "w y z",
    "z w y",
    "y y z",
    "w w z",
]


def _build(**kwargs):
    table = MergeTable([])  # character pieces; spans are hand-computable
    defaults = dict(split_fracs=(1.0, 0.0, 0.0), seed=5, max_len=64)
    defaults.update(kwargs)
    return build_examples(PAIRS, [], TGT_TITLES, table, **defaults)


def test_hand_enumerated_positives():
    result = _build()
    positives = [ex for ex in result["train"] if ex.polarity == "positive"]
    got = {(detokenize(ex.src_term_tokens), detokenize(ex.tgt_sentence_tokens),
            ex.gold_span) for ex in positives}
    expected = {
        ("s1 s2", "t1 t2 w", (0, 3)),
        ("s1 s2", "w t1 t2", (1, 4)),
        ("s1 s2", "t1 t2 t3 t4", (0, 3)),
        ("s3 s4", "t3 t4 y", (0, 3)),
        ("s3 s4", "t1 t2 t3 t4", (4, 7)),
    }
    assert got == expected
    assert result.report["positives"] == 5
    assert result.report["terms_without_positives"] == 1


def test_absent_term_contributes_nothing():
    result = _build()
    assert all(detokenize(ex.src_term_tokens) != "s5 s6" for ex in result["train"])


def test_one_to_one_negative_balance():
    result = _build(neg_ratio=1.0)
    train = result["train"]
    n_pos = sum(ex.polarity == "positive" for ex in train)
    n_neg = sum(ex.polarity == "negative" for ex in train)
    assert n_pos == n_neg == 5


def test_negatives_never_contain_their_term():
    table = MergeTable([])
    result = _build()
    by_src = {p.src_term: p for p in PAIRS}
    for ex in result["train"]:
        if ex.polarity == "negative":
            pair = by_src[detokenize(ex.src_term_tokens)]
            term_toks = apply_bpe(pair.tgt_term, table)
            assert find_term_occurrences(term_toks, ex.tgt_sentence_tokens) == []
            assert ex.gold_span is None


def test_positive_spans_detokenize_to_term():
    result = _build()
    by_src = {p.src_term: p for p in PAIRS}
    for ex in result["train"]:
        if ex.polarity == "positive":
            s, e = ex.gold_span
            pair = by_src[detokenize(ex.src_term_tokens)]
            assert detokenize(ex.tgt_sentence_tokens[s : e + 1]) == pair.tgt_term


def test_build_is_pure_function_of_seed():
    r1, r2 = _build(seed=9), _build(seed=9)
    for split in ("train", "valid", "test"):
        assert [vars(a) for a in r1[split]] == [vars(b) for b in r2[split]]
    assert [vars(a) for a in _build(seed=10)["train"]] != \
        [vars(b) for b in r1["train"]]


def test_splits_disjoint_by_term_sentence_key():
    result = _build(split_fracs=(0.5, 0.25, 0.25))
    seen = {}
    for split, examples in result.splits.items():
        for ex in examples:
            key = (tuple(ex.src_term_tokens), tuple(ex.tgt_sentence_tokens))
            assert key not in seen, f"{key} in both {seen.get(key)} and {split}"
            seen[key] = split


def test_overlength_examples_dropped_and_counted():
    # m=4, the four-word title has n=8, so 15 > 13 drops exactly those two
    result = _build(max_len=13)
    assert result.report["dropped_overlength"] == 2
    assert result.report["positives"] == 3


def test_exact_split_sizes():
    result = _build(split_sizes=(6, 2, 2))
    assert [len(result[s]) for s in ("train", "valid", "test")] == [6, 2, 2]
    with pytest.raises(ValueError):
        _build(split_sizes=(100, 5, 5))


def test_empty_negative_pool_is_an_error():
    pairs = [TermPair("s1 s2", "t1 t2", "c")]
    titles = ["t1 t2", "t1 t2 w"]
    with pytest.raises(ValueError, match="negative"):
        build_examples(pairs, [], titles, MergeTable([]), seed=0, max_len=64)


def test_empty_title_pool_is_an_error():
    with pytest.raises(ValueError):
        build_examples(PAIRS, [], [], MergeTable([]), seed=0)


def test_hard_negative_sampling_draws_from_other_terms_titles():
    result = _build(hard_negatives=True)
    table = MergeTable([])
    contains_any = []
    for ex in result["train"]:
        if ex.polarity == "negative":
            hits = [
                p for p in PAIRS
                if find_term_occurrences(apply_bpe(p.tgt_term, table),
                                         ex.tgt_sentence_tokens)
            ]
            contains_any.append(bool(hits))
    assert contains_any and all(contains_any)


# ---------------------------------------------------------------------------
# labeled example invariants


def test_labeled_example_polarity_span_coupling():
    with pytest.raises(ValueError):
        LabeledExample(["a"], ["b"], None, 0, 1, "", "positive")
    with pytest.raises(ValueError):
        LabeledExample(["a"], ["b"], (0, 0), 0, 1, "", "negative")
    with pytest.raises(ValueError):
        LabeledExample(["a"], ["b"], (0, 5), 0, 1, "", "positive")


def test_term_pair_requires_both_sides():
    with pytest.raises(ValueError):
        TermPair("", "x")


# ---------------------------------------------------------------------------
# synthetic world


def test_world_deterministic_given_seed():
    cfg = SyntheticWorldConfig(src_vocab=30, tgt_vocab=30, n_pairs=5,
                               n_src_titles=40, n_tgt_titles=60, seed=3)
    assert gen_synthetic_world(cfg) == gen_synthetic_world(cfg)


def test_world_embed_zero_yields_no_positives():
    cfg = SyntheticWorldConfig(src_vocab=40, tgt_vocab=40, n_pairs=6,
                               n_src_titles=30, n_tgt_titles=80,
                               embed_frac=0.0, seed=7)
    pairs, _, tgt_titles = gen_synthetic_world(cfg)
    merges = learn_bpe(tgt_titles, 40)
    result = build_examples(pairs, [], tgt_titles, merges, seed=0, max_len=200)
    assert result.report["positives"] == 0


def test_world_infeasible_term_length_rejected():
    with pytest.raises(ValueError, match="[Ii]nfeasible|longer"):
        SyntheticWorldConfig(term_len=(2, 5), title_len=(2, 4))


def test_world_term_length_outside_2_5_rejected():
    with pytest.raises(ValueError):
        SyntheticWorldConfig(term_len=(1, 3))
    with pytest.raises(ValueError):
        SyntheticWorldConfig(term_len=(2, 6))


def test_world_every_term_has_positive_and_negative_candidates():
    cfg = SyntheticWorldConfig(src_vocab=50, tgt_vocab=50, n_pairs=8,
                               n_src_titles=30, n_tgt_titles=120,
                               embed_frac=0.3, seed=11)
    pairs, _, tgt_titles = gen_synthetic_world(cfg)
    title_words = [t.split() for t in tgt_titles]
    for p in pairs:
        seq = p.tgt_term.split()
        containing = [tw for tw in title_words
                      if oracles.find_occurrences_bruteforce(seq, tw)]
        assert containing, f"{p.tgt_term} has no positive candidate"
        assert len(containing) < len(title_words), f"{p.tgt_term} has no negative"


def test_full_world_gold_spans_detokenize_exhaustively():
    # full-scale self-consistency scan: 200/200 words, 50 pairs, 5000 titles
    cfg = SyntheticWorldConfig(src_vocab=200, tgt_vocab=200, n_pairs=50,
                               n_src_titles=200, n_tgt_titles=5000,
                               embed_frac=0.5, seed=13)
    pairs, _, tgt_titles = gen_synthetic_world(cfg)
    merges = learn_bpe(tgt_titles, 300)
    result = build_examples(pairs, [], tgt_titles, merges, seed=1, max_len=200)
    by_src = {tuple(apply_bpe(p.src_term, merges)): p for p in pairs}
    checked = 0
    for split in ("train", "valid", "test"):
        for ex in result[split]:
            pair = by_src[tuple(ex.src_term_tokens)]
            if ex.polarity == "positive":
                s, e = ex.gold_span
                assert detokenize(ex.tgt_sentence_tokens[s : e + 1]) == pair.tgt_term
                checked += 1
            else:
                toks = apply_bpe(pair.tgt_term, merges)
                assert find_term_occurrences(toks, ex.tgt_sentence_tokens) == []
    assert checked > 1000


# ---------------------------------------------------------------------------
# file round trips


def test_term_pair_tsv_round_trip(tmp_path):
    path = tmp_path / "pairs.tsv"
    save_term_pairs(PAIRS, path)
    assert load_term_pairs(path) == PAIRS


def test_examples_jsonl_round_trip(tmp_path):
    result = _build()
    path = tmp_path / "train.jsonl"
    save_examples(result["train"], path)
    loaded = load_examples(path)
    assert [vars(a) for a in loaded] == [vars(b) for b in result["train"]]
