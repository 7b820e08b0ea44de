"""Flat-key run configuration with desk and paper profiles."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from .corpus import SyntheticWorldConfig
from .encoder import EncoderConfig
from .optim import AdamState
from .pretrain import MaskingPolicy

# key -> (type, desk default, paper default)
_KEYS: dict[str, tuple[type, Any, Any]] = {
    "model.d": (int, 128, 1024),
    "model.d_ff": (int, 512, 4096),
    "model.layers": (int, 4, 6),
    "model.heads": (int, 4, 8),
    "model.max_positions": (int, 128, 128),
    "model.dropout": (float, 0.1, 0.1),
    "model.tie_span_heads": (bool, False, False),
    "train.batch_size": (int, 32, 128),
    "train.steps": (int, 2000, 100000),
    "train.lr": (float, 3e-4, 1e-4),
    "train.warmup_steps": (int, 200, 4000),
    "train.grad_clip": (float, 0.0, 0.0),
    "train.log_every": (int, 50, 100),
    "pretrain.steps": (int, 2000, 100000),
    "pretrain.tlm_mix_mlm": (bool, True, True),
    "data.max_len": (int, 64, 100),
    "data.neg_ratio": (float, 1.0, 1.0),
    "data.min_count": (int, 2, 2),
    "data.bpe_merges": (int, 8000, 8000),
    "data.split_train": (float, 0.8, 0.8),
    "data.split_valid": (float, 0.1, 0.1),
    "data.split_test": (float, 0.1, 0.1),
    "mask.select_prob": (float, 0.15, 0.15),
    "mask.mask_frac": (float, 0.8, 0.8),
    "mask.random_frac": (float, 0.1, 0.1),
    "mask.keep_frac": (float, 0.1, 0.1),
    "world.src_vocab": (int, 200, 200),
    "world.tgt_vocab": (int, 200, 200),
    "world.n_pairs": (int, 50, 50),
    "world.term_len_min": (int, 2, 2),
    "world.term_len_max": (int, 5, 5),
    "world.title_len_min": (int, 6, 6),
    "world.title_len_max": (int, 12, 12),
    "world.n_src_titles": (int, 3000, 3000),
    "world.n_tgt_titles": (int, 6000, 6000),
    "world.embed_frac": (float, 0.5, 0.5),
    "trend.pretrain_steps": (int, 1500, 20000),
    "trend.train_steps": (int, 1600, 20000),
    "trend.seeds": (int, 3, 3),
    "trend.jobs": (int, 1, 1),
    "trend.sizes": (str, "1.0", "1.0"),
    "seed": (int, 0, 0),
}

PROFILES = ("desk", "paper")


@dataclass
class RunConfig:
    values: dict[str, Any]

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @classmethod
    def resolve(cls, profile: str = "desk", config_path=None,
                overrides: dict[str, Any] | None = None) -> "RunConfig":
        """Profile defaults, then config-file entries, then explicit overrides.

        Unknown keys are rejected so typos fail loudly.
        """
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; expected one of {PROFILES}")
        col = 1 if profile == "desk" else 2
        values = {k: entry[col] for k, entry in _KEYS.items()}
        layers = []
        if config_path is not None:
            with open(config_path, encoding="utf-8") as f:
                layers.append(json.load(f))
        if overrides:
            layers.append(overrides)
        for layer in layers:
            for key, raw in layer.items():
                if key not in _KEYS:
                    raise KeyError(f"unknown config key {key!r}")
                typ = _KEYS[key][0]
                values[key] = typ(raw) if not isinstance(raw, typ) else raw
        return cls(values)

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")

    # convenient builders -------------------------------------------------

    def encoder_config(self, vocab_size: int, n_langs: int) -> EncoderConfig:
        return EncoderConfig(
            d=self["model.d"], d_ff=self["model.d_ff"],
            layers=self["model.layers"], heads=self["model.heads"],
            max_positions=self["model.max_positions"],
            vocab_size=vocab_size, n_langs=n_langs,
            dropout=self["model.dropout"],
        )

    def masking_policy(self) -> MaskingPolicy:
        return MaskingPolicy(
            select_prob=self["mask.select_prob"],
            mask_frac=self["mask.mask_frac"],
            random_frac=self["mask.random_frac"],
            keep_frac=self["mask.keep_frac"],
        )

    def world_config(self, seed: int | None = None) -> SyntheticWorldConfig:
        return SyntheticWorldConfig(
            src_vocab=self["world.src_vocab"],
            tgt_vocab=self["world.tgt_vocab"],
            n_pairs=self["world.n_pairs"],
            term_len=(self["world.term_len_min"], self["world.term_len_max"]),
            title_len=(self["world.title_len_min"], self["world.title_len_max"]),
            n_src_titles=self["world.n_src_titles"],
            n_tgt_titles=self["world.n_tgt_titles"],
            embed_frac=self["world.embed_frac"],
            seed=self["seed"] if seed is None else seed,
        )

    def adam(self) -> AdamState:
        return AdamState(
            base_lr=self["train.lr"],
            warmup_steps=self["train.warmup_steps"],
            grad_clip=self["train.grad_clip"],
        )

    def split_fracs(self) -> tuple[float, float, float]:
        return (self["data.split_train"], self["data.split_valid"], self["data.split_test"])

    def trend_sizes(self) -> list[float]:
        return [float(s) for s in str(self["trend.sizes"]).split(",") if s.strip()]
