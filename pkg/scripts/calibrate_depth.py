"""Second calibration pass: does encoder depth restore the concat advantage?"""

import time

import numpy as np

from termex.config import RunConfig
from termex.evaluate import evaluate_model
from termex.extractor import init_extractor, train_extractor
from termex.trends import derive_seed, prepare_synthetic, pretrain_encoder

BASE = {
    "world.src_vocab": 200, "world.tgt_vocab": 200, "world.n_pairs": 50,
    "world.n_src_titles": 3000, "world.n_tgt_titles": 6000,
    "world.embed_frac": 0.55,
    "data.bpe_merges": 8000, "data.min_count": 2, "data.max_len": 64,
    "model.d": 64, "model.d_ff": 256, "model.heads": 4, "model.dropout": 0.0,
    "train.lr": 1e-3, "train.warmup_steps": 100, "train.batch_size": 32,
    "seed": 0,
}


def run(layers: int, seed: int):
    overrides = dict(BASE)
    overrides["model.layers"] = layers
    cfg = RunConfig.resolve(overrides=overrides)
    data = prepare_synthetic(cfg, split_sizes=(5000, 500, 500))
    t0 = time.time()
    ckpts = {"rand": None,
             "mlm": pretrain_encoder(data, cfg, "mlm", seed, steps=1500)}
    print(f"L{layers} s{seed} pretrain mlm: {time.time()-t0:.0f}s", flush=True)
    config = cfg.encoder_config(len(data.vocab), data.vocab.n_langs)
    points = [800, 1200, 1600]
    for mode in ("concat", "attn"):
        for init in ("rand", "mlm"):
            model = init_extractor(mode, config,
                                   np.random.default_rng(derive_seed(seed, 17)))
            if ckpts[init] is not None:
                model.store.load_arrays(ckpts[init])
            row, prev, t0 = [], 0, time.time()
            for point in points:
                train_extractor(model, data.splits["train"], data.vocab, cfg.adam(),
                                steps=point - prev, batch_size=32, max_len=64,
                                seed=derive_seed(seed, 19, point))
                prev = point
                rep = evaluate_model(model, data.splits["test"], data.vocab, 64)
                row.append(f"{point}:{rep.precision:.1f}")
            print(f"L{layers} s{seed} {mode}/{init}: {' '.join(row)} "
                  f"[{time.time()-t0:.0f}s]", flush=True)


if __name__ == "__main__":
    for layers in (4,):
        for seed in (0, 1):
            run(layers, seed)
