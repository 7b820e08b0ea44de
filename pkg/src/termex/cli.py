"""Command-line pipeline: world generation, BPE, corpus building,
pre-training, extractor training, evaluation, extraction, and trend runs.

Every training command writes its resolved config and a step/loss CSV next to
its artifacts, so runs are reproducible from the output directory alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bpe as bpe_mod
from .bpe import apply_bpe, build_vocab, learn_bpe, load_merges, load_vocab, save_merges, save_vocab
from .checkpoint import checkpoint_meta, load_checkpoint, load_into_store, save_checkpoint
from .config import RunConfig
from .corpus import (
    build_examples,
    gen_synthetic_world,
    load_examples,
    load_term_pairs,
    load_titles,
    save_examples,
    save_term_pairs,
    save_titles,
)
from .encoder import EncoderConfig
from .evaluate import evaluate_model, export_attention
from .extractor import ExtractorModel, extract, init_extractor, train_extractor
from .pretrain import make_tlm_pair, mlm_stream, run_pretraining
from .trends import run_trend_suite


def _resolved_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return RunConfig.resolve(profile=args.profile,
                             config_path=getattr(args, "config", None),
                             overrides=overrides)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_metrics(path: Path, rows: list[tuple[int, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for step, loss in rows:
            w.writerow([step, f"{loss:.6f}"])


def _load_artifacts(bpe_dir):
    d = Path(bpe_dir)
    merges = load_merges(d / "merges.txt")
    vocab = load_vocab(d / "vocab.txt")
    return merges, vocab


def _load_manifest(path) -> list[tuple[Path, str]]:
    base = Path(path).parent
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            p, lang = line.split("\t")
            p = Path(p)
            entries.append((p if p.is_absolute() else base / p, lang))
    if not entries:
        raise ValueError(f"empty corpus manifest {path}")
    return entries


def _load_model(ckpt_path, merges, vocab, allow_vocab_mismatch: bool = False
                ) -> tuple[ExtractorModel, dict]:
    arrays, meta = load_checkpoint(ckpt_path)
    fp = bpe_mod.artifacts_fingerprint(merges, vocab)
    if meta.get("vocab_fingerprint") != fp and not allow_vocab_mismatch:
        raise ValueError("checkpoint vocab fingerprint mismatch; "
                         "pass --allow-vocab-mismatch to load anyway")
    kind = meta.get("kind")
    if kind not in ("attn", "concat"):
        raise ValueError(f"checkpoint kind {kind!r} is not an extractor model")
    config = EncoderConfig(**meta["config"])
    model = init_extractor(kind, config, np.random.default_rng(0),
                           tie_span_heads=meta.get("tie_span_heads", False),
                           drop_source=meta.get("drop_source", False))
    loaded = model.store.load_arrays(arrays)
    missing = set(model.store.names()) - set(loaded)
    if missing:
        raise ValueError(f"checkpoint is missing model tensors: {sorted(missing)}")
    return model, meta


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synthetic(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args)
    pairs, src_titles, tgt_titles = gen_synthetic_world(cfg.world_config())
    save_term_pairs(pairs, out / "pairs.tsv")
    save_titles(src_titles, out / "src_titles.txt")
    save_titles(tgt_titles, out / "tgt_titles.txt")
    with open(out / "manifest.tsv", "w", encoding="utf-8") as f:
        f.write("src_titles.txt\tsrc\n")
        f.write("tgt_titles.txt\ttgt\n")
    cfg.save(out / "config.resolved.json")
    print(f"wrote {len(pairs)} pairs, {len(src_titles)} src titles, "
          f"{len(tgt_titles)} tgt titles to {out}")
    return 0


def cmd_learn_bpe(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args)
    entries = _load_manifest(args.manifest)
    corpora = []
    langs = []
    for path, lang in entries:
        corpora.extend(load_titles(path))
        langs.append(lang)
    merges = learn_bpe(corpora, cfg["data.bpe_merges"])
    tokenized = (apply_bpe(line, merges) for line in corpora)
    vocab = build_vocab(tokenized, min_count=cfg["data.min_count"], languages=langs)
    save_merges(merges, out / "merges.txt")
    save_vocab(vocab, out / "vocab.txt")
    cfg.save(out / "config.resolved.json")
    print(f"learned {len(merges)} merges, vocab size {len(vocab)}")
    return 0


def cmd_build_corpus(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args)
    merges, vocab = _load_artifacts(args.bpe)
    pairs = load_term_pairs(args.pairs)
    src_titles = load_titles(args.src_titles) if args.src_titles else []
    tgt_titles = load_titles(args.tgt_titles)
    result = build_examples(
        pairs, src_titles, tgt_titles, merges,
        neg_ratio=cfg["data.neg_ratio"], max_len=cfg["data.max_len"],
        seed=cfg["seed"],
        src_lang=vocab.lang_id(args.src_lang), tgt_lang=vocab.lang_id(args.tgt_lang),
        split_fracs=cfg.split_fracs(),
        hard_negatives=args.hard_negatives,
    )
    for split, examples in result.splits.items():
        save_examples(examples, out / f"{split}.jsonl")
    with open(out / "build_report.json", "w", encoding="utf-8") as f:
        json.dump(result.report, f, indent=2, sort_keys=True)
    cfg.save(out / "config.resolved.json")
    print(json.dumps(result.report))
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args)
    merges, vocab = _load_artifacts(args.bpe)
    config = cfg.encoder_config(len(vocab), vocab.n_langs)
    max_len = cfg["data.max_len"]

    title_stream = []
    if args.manifest:
        for path, lang in _load_manifest(args.manifest):
            lang_id = vocab.lang_id(lang)
            for line in load_titles(path):
                title_stream.append((vocab.encode(apply_bpe(line, merges)), lang_id))
    stream = mlm_stream(title_stream, vocab, max_len) if title_stream else []

    if args.objective == "tlm":
        tlm_inputs = []
        if args.pairs:
            for pair in load_term_pairs(args.pairs):
                tlm_inputs.append(make_tlm_pair(
                    apply_bpe(pair.src_term, merges), apply_bpe(pair.tgt_term, merges),
                    (vocab.lang_id(args.src_lang), vocab.lang_id(args.tgt_lang)),
                    vocab, max_len))
        if args.train_data:
            for ex in load_examples(args.train_data):
                if ex.polarity == "positive":
                    tlm_inputs.append(make_tlm_pair(
                        ex.src_term_tokens, ex.tgt_sentence_tokens,
                        (ex.src_lang, ex.tgt_lang), vocab, max_len))
        if not tlm_inputs:
            raise ValueError("tlm objective needs --pairs and/or --train-data")
        stream = stream + tlm_inputs if cfg["pretrain.tlm_mix_mlm"] else tlm_inputs
    elif not stream:
        raise ValueError("mlm objective needs a --manifest of title corpora")

    rng = np.random.default_rng(cfg["seed"])
    from .encoder import init_encoder_params

    store = init_encoder_params(config, rng)
    metrics: list[tuple[int, float]] = []
    run_pretraining(args.objective, stream, store, config, vocab,
                    cfg.masking_policy(), cfg.adam(),
                    steps=cfg["pretrain.steps"], batch_size=cfg["train.batch_size"],
                    seed=cfg["seed"], log_every=cfg["train.log_every"],
                    metrics=metrics)
    meta = checkpoint_meta(config, args.objective,
                           bpe_mod.artifacts_fingerprint(merges, vocab))
    save_checkpoint(store, meta, out / "model.btxe")
    _write_metrics(out / "metrics.csv", metrics)
    cfg.save(out / "config.resolved.json")
    print(f"pretrained {args.objective} for {cfg['pretrain.steps']} steps; "
          f"final loss {metrics[-1][1]:.4f}" if metrics else "pretrained")
    return 0


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args)
    merges, vocab = _load_artifacts(args.bpe)
    config = cfg.encoder_config(len(vocab), vocab.n_langs)
    examples = load_examples(args.train_data)
    rng = np.random.default_rng(cfg["seed"])
    tie = args.tie_span_heads or cfg["model.tie_span_heads"]
    model = init_extractor(args.extractor, config, rng, tie_span_heads=tie,
                           drop_source=args.no_source_term)
    fp = bpe_mod.artifacts_fingerprint(merges, vocab)
    if args.init != "rand":
        load_into_store(model.store, args.init, config, fp,
                        override_fingerprint=args.allow_vocab_mismatch)
    metrics: list[tuple[int, float]] = []
    train_extractor(model, examples, vocab, cfg.adam(),
                    steps=cfg["train.steps"], batch_size=cfg["train.batch_size"],
                    max_len=cfg["data.max_len"], seed=cfg["seed"],
                    log_every=cfg["train.log_every"], metrics=metrics)
    meta = checkpoint_meta(config, args.extractor, fp,
                           tie_span_heads=tie, drop_source=args.no_source_term)
    save_checkpoint(model.store, meta, out / "model.btxe")
    _write_metrics(out / "metrics.csv", metrics)
    cfg.save(out / "config.resolved.json")
    if args.valid_data:
        report = evaluate_model(model, load_examples(args.valid_data), vocab,
                                cfg["data.max_len"])
        report.save(out / "valid_eval.txt")
        print(report.to_text(), end="")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args)
    merges, vocab = _load_artifacts(args.bpe)
    model, _ = _load_model(args.model, merges, vocab, args.allow_vocab_mismatch)
    examples = load_examples(args.data)
    report = evaluate_model(model, examples, vocab, cfg["data.max_len"])
    report.save(out / "eval.txt")
    cfg.save(out / "config.resolved.json")
    print(report.to_text(), end="")
    return 0


def cmd_extract(args) -> int:
    cfg = _resolved_config(args)
    merges, vocab = _load_artifacts(args.bpe)
    model, _ = _load_model(args.model, merges, vocab, args.allow_vocab_mismatch)
    span = extract(args.src, args.tgt, model, merges, vocab, cfg["data.max_len"])
    print(span if span is not None else "NONE")
    return 0


def cmd_export_attention(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args)
    merges, vocab = _load_artifacts(args.bpe)
    model, _ = _load_model(args.model, merges, vocab, args.allow_vocab_mismatch)
    examples = load_examples(args.data)
    if not 0 <= args.index < len(examples):
        raise IndexError(f"example index {args.index} out of range ({len(examples)})")
    path = out / f"attention_l{args.layer}_ex{args.index}.tsv"
    export_attention(model, examples[args.index], args.layer, path, vocab,
                     cfg["data.max_len"], per_head=args.per_head)
    cfg.save(out / "config.resolved.json")
    print(str(path))
    return 0


def cmd_trend_suite(args) -> int:
    cfg = _resolved_config(args)
    out = _out_dir(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    report = run_trend_suite(cfg, seeds=seeds, out_dir=out, jobs=args.jobs)
    cfg.save(out / "config.resolved.json")
    print(json.dumps({"medians": report["medians"],
                      "orderings": report["orderings"],
                      "differences": report["differences"]}, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="termex",
        description="Bilingual terminology span extraction from comparable corpora.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", default=None, help="JSON config of flat keys")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--profile", choices=("desk", "paper"), default="desk")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-synthetic", help="generate a synthetic bilingual world")
    common(p)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("learn-bpe", help="learn joint BPE and the shared vocab")
    common(p)
    p.add_argument("--manifest", required=True, help="TSV of title-file path and language")
    p.set_defaults(func=cmd_learn_bpe)

    p = sub.add_parser("build-corpus", help="build span-labeled examples")
    common(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--src-titles", default=None)
    p.add_argument("--tgt-titles", required=True)
    p.add_argument("--bpe", required=True, help="directory with merges.txt/vocab.txt")
    p.add_argument("--src-lang", default="src")
    p.add_argument("--tgt-lang", default="tgt")
    p.add_argument("--hard-negatives", action="store_true")
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("pretrain", help="MLM/TLM pre-training")
    common(p)
    p.add_argument("--objective", choices=("mlm", "tlm"), required=True)
    p.add_argument("--bpe", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--pairs", default=None)
    p.add_argument("--train-data", default=None, help="JSONL whose positives feed TLM")
    p.add_argument("--src-lang", default="src")
    p.add_argument("--tgt-lang", default="tgt")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train a span extractor")
    common(p)
    p.add_argument("--extractor", choices=("attn", "concat"), required=True)
    p.add_argument("--train-data", required=True)
    p.add_argument("--valid-data", default=None)
    p.add_argument("--bpe", required=True)
    p.add_argument("--init", default="rand", help="'rand' or a checkpoint path")
    p.add_argument("--no-source-term", action="store_true")
    p.add_argument("--tie-span-heads", action="store_true")
    p.add_argument("--allow-vocab-mismatch", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="exact-match evaluation of a checkpoint")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bpe", required=True)
    p.add_argument("--allow-vocab-mismatch", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract", help="extract one terminology span")
    common(p, out=False)
    p.add_argument("--model", required=True)
    p.add_argument("--bpe", required=True)
    p.add_argument("--src", required=True, help="source terminology text")
    p.add_argument("--tgt", required=True, help="target sentence text")
    p.add_argument("--allow-vocab-mismatch", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("export-attention", help="dump attention weights as TSV")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bpe", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--per-head", action="store_true")
    p.add_argument("--allow-vocab-mismatch", action="store_true")
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("trend-suite", help="init/architecture/source trend grid")
    common(p)
    p.add_argument("--seeds", default=None, help="comma list, e.g. 0,1,2")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_trend_suite)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
