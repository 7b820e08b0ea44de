"""Synthetic-world trend experiments: init ablations, source ablation, sizes.

The full-scale corpora behind the published numbers are proprietary, so these
runs check directions, not absolute values: pre-trained inits should beat
random, the joint-sequence extractor should beat the fusion one, and dropping
the source segment should hurt.
"""

from __future__ import annotations

import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bpe import MergeTable, Vocab, apply_bpe, build_vocab, learn_bpe
from .config import RunConfig
from .corpus import BuildResult, LabeledExample, TermPair, build_examples, gen_synthetic_world
from .encoder import init_encoder_params
from .evaluate import evaluate_model
from .extractor import init_extractor, train_extractor
from .pretrain import make_tlm_pair, mlm_stream, run_pretraining

log = logging.getLogger(__name__)

SRC_LANG = "src"
TGT_LANG = "tgt"


@dataclass
class SyntheticData:
    """Everything downstream of corpus construction for one world."""

    pairs: list[TermPair]
    src_titles: list[str]
    tgt_titles: list[str]
    merges: MergeTable
    vocab: Vocab
    build: BuildResult

    @property
    def splits(self) -> dict[str, list[LabeledExample]]:
        return self.build.splits


def derive_seed(*parts: int) -> int:
    ss = np.random.SeedSequence(list(parts))
    return int(ss.generate_state(1)[0])


def prepare_synthetic(cfg: RunConfig, world_seed: int | None = None,
                      split_sizes: tuple[int, int, int] | None = None) -> SyntheticData:
    """Generate a world, learn joint BPE, and build labeled splits."""
    world_cfg = cfg.world_config(seed=world_seed)
    pairs, src_titles, tgt_titles = gen_synthetic_world(world_cfg)
    corpora = src_titles + tgt_titles
    merges = learn_bpe(corpora, cfg["data.bpe_merges"])
    tokenized = [apply_bpe(line, merges) for line in corpora]
    vocab = build_vocab(tokenized, min_count=cfg["data.min_count"],
                        languages=(SRC_LANG, TGT_LANG))
    build = build_examples(
        pairs, src_titles, tgt_titles, merges,
        neg_ratio=cfg["data.neg_ratio"], max_len=cfg["data.max_len"],
        seed=world_cfg.seed,
        src_lang=vocab.lang_id(SRC_LANG), tgt_lang=vocab.lang_id(TGT_LANG),
        split_fracs=cfg.split_fracs(), split_sizes=split_sizes,
    )
    return SyntheticData(pairs, src_titles, tgt_titles, merges, vocab, build)


def pretraining_stream(data: SyntheticData, cfg: RunConfig, objective: str):
    """MLM: every title, both languages. TLM: terminology pairs plus the
    positive portion of the training split (optionally mixed with MLM titles)."""
    vocab, merges = data.vocab, data.merges
    src_id, tgt_id = vocab.lang_id(SRC_LANG), vocab.lang_id(TGT_LANG)
    max_len = cfg["data.max_len"]
    titles = [(vocab.encode(apply_bpe(t, merges)), src_id) for t in data.src_titles]
    titles += [(vocab.encode(apply_bpe(t, merges)), tgt_id) for t in data.tgt_titles]
    mlm_inputs = mlm_stream(titles, vocab, max_len)
    if objective == "mlm":
        return mlm_inputs
    tlm_inputs = []
    for pair in data.pairs:
        tlm_inputs.append(make_tlm_pair(
            apply_bpe(pair.src_term, merges), apply_bpe(pair.tgt_term, merges),
            (src_id, tgt_id), vocab, max_len))
    for ex in data.splits["train"]:
        if ex.polarity == "positive":
            tlm_inputs.append(make_tlm_pair(
                ex.src_term_tokens, ex.tgt_sentence_tokens,
                (ex.src_lang, ex.tgt_lang), vocab, max_len))
    if cfg["pretrain.tlm_mix_mlm"]:
        return mlm_inputs + tlm_inputs
    return tlm_inputs


def pretrain_encoder(data: SyntheticData, cfg: RunConfig, objective: str,
                     seed: int, steps: int | None = None,
                     metrics: list | None = None) -> dict[str, np.ndarray]:
    """One pre-training run; returns the encoder tensors by name."""
    vocab = data.vocab
    config = cfg.encoder_config(len(vocab), vocab.n_langs)
    rng = np.random.default_rng(derive_seed(seed, 11))
    store = init_encoder_params(config, rng)
    stream = pretraining_stream(data, cfg, objective)
    adam = cfg.adam()
    run_pretraining(objective, stream, store, config, vocab, cfg.masking_policy(),
                    adam, steps or cfg["pretrain.steps"], cfg["train.batch_size"],
                    seed=derive_seed(seed, 13), metrics=metrics)
    return store.state_dict()


@dataclass(frozen=True)
class TrendCell:
    mode: str  # "attn" | "concat"
    init: str  # "rand" | "mlm" | "tlm"
    drop_source: bool = False
    size: float = 1.0
    seed: int = 0

    @property
    def group(self) -> str:
        src = "nosrc" if self.drop_source else "src"
        return f"{self.mode}|{self.init}|{src}|size{self.size:g}"

    @property
    def key(self) -> str:
        return f"{self.group}|seed{self.seed}"


def default_grid(seeds: list[int], sizes: list[float]) -> list[TrendCell]:
    cells = []
    for seed in seeds:
        for mode in ("concat", "attn"):
            for init in ("rand", "mlm", "tlm"):
                cells.append(TrendCell(mode, init, seed=seed))
        cells.append(TrendCell("concat", "rand", drop_source=True, seed=seed))
        for size in sizes:
            if size != 1.0:
                cells.append(TrendCell("concat", "tlm", size=size, seed=seed))
    return cells


def run_cell(data: SyntheticData, cfg: RunConfig, cell: TrendCell,
             init_arrays: dict[str, np.ndarray] | None,
             steps: int | None = None) -> dict:
    """Train one grid member and evaluate it on the test split."""
    vocab = data.vocab
    config = cfg.encoder_config(len(vocab), vocab.n_langs)
    rng = np.random.default_rng(derive_seed(cell.seed, 17))
    model = init_extractor(cell.mode, config, rng,
                           tie_span_heads=cfg["model.tie_span_heads"],
                           drop_source=cell.drop_source)
    if init_arrays is not None:
        model.store.load_arrays(init_arrays)
    train = data.splits["train"]
    if cell.size != 1.0:
        train = train[: max(1, int(round(cell.size * len(train))))]
    steps = steps or cfg["trend.train_steps"]
    train_extractor(model, train, vocab, cfg.adam(), steps,
                    cfg["train.batch_size"], cfg["data.max_len"],
                    seed=derive_seed(cell.seed, 19))
    report = evaluate_model(model, data.splits["test"], vocab, cfg["data.max_len"])
    result = {
        "mode": cell.mode, "init": cell.init,
        "drop_source": cell.drop_source, "size": cell.size, "seed": cell.seed,
        "status": "ok",
        "precision": report.precision,
        "positive_accuracy": report.positive_accuracy,
        "negative_accuracy": report.negative_accuracy,
        "inconsistencies": report.inconsistencies,
        "train_examples": len(train), "train_steps": steps,
    }
    if cell.mode == "concat" and not cell.drop_source and cell.size == 1.0:
        result["attention_gold_fraction"] = attention_gold_fraction(
            model, data, cfg["data.max_len"])
    return result


def attention_gold_fraction(model, data: SyntheticData, max_len: int,
                            sample: int = 50) -> float:
    """Fraction of source-term rows whose last-layer attention argmax falls
    inside the gold span, over sampled test positives (a soft diagnostic)."""
    import os
    import tempfile

    from .evaluate import export_attention

    positives = [ex for ex in data.splits["test"]
                 if ex.polarity == "positive"][:sample]
    scratch = os.path.join(tempfile.gettempdir(),
                           f"termex_attn_{os.getpid()}.tsv")
    inside = total = 0
    last = model.config.layers - 1
    try:
        for ex in positives:
            grid = export_attention(model, ex, last, scratch, data.vocab, max_len)
            s, e = ex.gold_span
            for row in range(1, len(ex.src_term_tokens) + 1):
                col = int(np.argmax(grid[row]))
                inside += s + 1 <= col <= e + 1
                total += 1
    finally:
        if os.path.exists(scratch):
            os.remove(scratch)
    return inside / total if total else 0.0


def _pretrain_worker(args):
    data, cfg, objective, seed, steps = args
    try:
        arrays = pretrain_encoder(data, cfg, objective, seed, steps)
        return (objective, seed, "ok", arrays)
    except Exception as exc:  # cell isolation: the suite continues
        log.exception("pretraining %s seed %d failed", objective, seed)
        return (objective, seed, f"failed: {exc}", None)


def _cell_worker(args):
    data, cfg, cell, arrays, steps = args
    try:
        return run_cell(data, cfg, cell, arrays, steps)
    except Exception as exc:
        log.exception("cell %s failed", cell.key)
        return {
            "mode": cell.mode, "init": cell.init, "drop_source": cell.drop_source,
            "size": cell.size, "seed": cell.seed,
            "status": f"failed: {exc}",
        }


def run_trend_suite(cfg: RunConfig, seeds: list[int] | None = None,
                    out_dir=None, jobs: int | None = None,
                    split_sizes: tuple[int, int, int] | None = None,
                    pretrain_steps: int | None = None,
                    train_steps: int | None = None) -> dict:
    """Train the init/architecture/source grid and report seed medians."""
    if seeds is None:
        seeds = list(range(cfg["trend.seeds"]))
    jobs = jobs or cfg["trend.jobs"]
    sizes = cfg.trend_sizes()
    data = prepare_synthetic(cfg, split_sizes=split_sizes)
    cells = default_grid(seeds, sizes)
    pretrain_steps = pretrain_steps or cfg["trend.pretrain_steps"]

    needed = sorted({(c.init, c.seed) for c in cells if c.init != "rand"})
    pre_args = [(data, cfg, obj, seed, pretrain_steps) for obj, seed in needed]
    checkpoints: dict[tuple[str, int], dict | None] = {}
    pre_status: dict[tuple[str, int], str] = {}
    for objective, seed, status, arrays in _map_maybe_parallel(_pretrain_worker, pre_args, jobs):
        checkpoints[(objective, seed)] = arrays
        pre_status[(objective, seed)] = status

    cell_args = []
    for cell in cells:
        arrays = checkpoints.get((cell.init, cell.seed)) if cell.init != "rand" else None
        if cell.init != "rand" and arrays is None:
            cell_args.append(None)  # pretraining failed; mark below
        else:
            cell_args.append((data, cfg, cell, arrays, train_steps))
    results = []
    runnable = [a for a in cell_args if a is not None]
    outputs = iter(_map_maybe_parallel(_cell_worker, runnable, jobs))
    for cell, args in zip(cells, cell_args):
        if args is None:
            results.append({
                "mode": cell.mode, "init": cell.init, "drop_source": cell.drop_source,
                "size": cell.size, "seed": cell.seed,
                "status": "failed: " + pre_status.get((cell.init, cell.seed), "no checkpoint"),
            })
        else:
            results.append(next(outputs))

    report = summarize_trends(results)
    report["pretraining"] = {f"{o}|seed{s}": st for (o, s), st in pre_status.items()}
    report["budgets"] = {
        "pretrain_steps": pretrain_steps,
        "train_steps": train_steps or cfg["trend.train_steps"],
        "batch_size": cfg["train.batch_size"],
        "seeds": seeds,
    }
    report["data"] = dict(data.build.report)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "trend_report.json", "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
    return report


def _map_maybe_parallel(fn, args_list, jobs: int):
    if jobs <= 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args_list))


def summarize_trends(results: list[dict]) -> dict:
    """Seed medians per cell group plus the sign of each claimed ordering."""
    groups: dict[str, list[float]] = {}
    neg_acc: dict[str, list[float]] = {}
    attn_gold: dict[str, list[float]] = {}
    for r in results:
        if r.get("status") != "ok":
            continue
        group = TrendCell(r["mode"], r["init"], r["drop_source"], r["size"], 0).group
        groups.setdefault(group, []).append(r["precision"])
        neg_acc.setdefault(group, []).append(r["negative_accuracy"])
        if "attention_gold_fraction" in r:
            attn_gold.setdefault(group, []).append(r["attention_gold_fraction"])
    medians = {g: statistics.median(v) for g, v in groups.items()}
    neg_medians = {g: statistics.median(v) for g, v in neg_acc.items()}
    attn_medians = {g: statistics.median(v) for g, v in attn_gold.items()}

    def med(mode, init, src="src", size=1.0):
        return medians.get(f"{mode}|{init}|{src}|size{size:g}")

    orderings = {}
    diffs = {}
    if med("concat", "tlm") is not None and med("concat", "mlm") is not None:
        orderings["concat_tlm_ge_mlm"] = med("concat", "tlm") >= med("concat", "mlm")
        diffs["concat_tlm_minus_mlm"] = med("concat", "tlm") - med("concat", "mlm")
    if med("concat", "mlm") is not None and med("concat", "rand") is not None:
        orderings["concat_mlm_ge_rand"] = med("concat", "mlm") >= med("concat", "rand")
        diffs["concat_mlm_minus_rand"] = med("concat", "mlm") - med("concat", "rand")
    if med("attn", "tlm") is not None and med("attn", "mlm") is not None:
        orderings["attn_tlm_ge_mlm"] = med("attn", "tlm") >= med("attn", "mlm")
    if med("attn", "mlm") is not None and med("attn", "rand") is not None:
        orderings["attn_mlm_ge_rand"] = med("attn", "mlm") >= med("attn", "rand")
    concat_all = [v for g, vs in groups.items()
                  if g.startswith("concat|") and g.endswith("|src|size1") for v in vs]
    attn_all = [v for g, vs in groups.items()
                if g.startswith("attn|") and g.endswith("|src|size1") for v in vs]
    if concat_all and attn_all:
        orderings["concat_ge_attn"] = (
            statistics.median(concat_all) >= statistics.median(attn_all))
        diffs["concat_minus_attn"] = (
            statistics.median(concat_all) - statistics.median(attn_all))
    for init in ("rand", "mlm", "tlm"):
        if med("concat", init) is not None and med("attn", init) is not None:
            orderings[f"concat_ge_attn_{init}"] = med("concat", init) >= med("attn", init)
    if med("concat", "rand") is not None and med("concat", "rand", "nosrc") is not None:
        orderings["src_gt_nosrc"] = med("concat", "rand") > med("concat", "rand", "nosrc")
        diffs["src_minus_nosrc"] = med("concat", "rand") - med("concat", "rand", "nosrc")
    return {
        "cells": results,
        "medians": medians,
        "negative_accuracy_medians": neg_medians,
        "attention_gold_medians": attn_medians,
        "orderings": orderings,
        "differences": diffs,
    }
