"""Exploratory calibration: precision vs training steps per init and mode.

Not part of the test suite; used to pick trend-suite budgets.
"""

import time

import numpy as np

from termex.config import RunConfig
from termex.evaluate import evaluate_model
from termex.extractor import init_extractor, train_extractor
from termex.trends import derive_seed, prepare_synthetic, pretrain_encoder

OVERRIDES = {
    "world.src_vocab": 200, "world.tgt_vocab": 200, "world.n_pairs": 50,
    "world.n_src_titles": 3000, "world.n_tgt_titles": 6000,
    "world.embed_frac": 0.55,
    "data.bpe_merges": 8000, "data.min_count": 2, "data.max_len": 64,
    "model.d": 64, "model.d_ff": 256, "model.layers": 2, "model.heads": 4,
    "model.dropout": 0.0,
    "train.lr": 1e-3, "train.warmup_steps": 100, "train.batch_size": 32,
    "seed": 0,
}


def main():
    cfg = RunConfig.resolve(overrides=OVERRIDES)
    t0 = time.time()
    data = prepare_synthetic(cfg, split_sizes=(5000, 500, 500))
    print(f"prepare: {time.time()-t0:.0f}s vocab={len(data.vocab)} "
          f"report={data.build.report}", flush=True)

    seed = 0
    ckpts = {"rand": None}
    for obj in ("mlm", "tlm"):
        t0 = time.time()
        ckpts[obj] = pretrain_encoder(data, cfg, obj, seed, steps=1500)
        print(f"pretrain {obj}: {time.time()-t0:.0f}s", flush=True)

    eval_points = [200, 400, 600, 800, 1200, 1600]
    config = cfg.encoder_config(len(data.vocab), data.vocab.n_langs)
    for mode in ("concat", "attn"):
        for init in ("rand", "mlm", "tlm"):
            model = init_extractor(mode, config, np.random.default_rng(derive_seed(seed, 17)))
            if ckpts[init] is not None:
                model.store.load_arrays(ckpts[init])
            t0 = time.time()
            prev = 0
            row = []
            for point in eval_points:
                train_extractor(model, data.splits["train"], data.vocab, cfg.adam(),
                                steps=point - prev, batch_size=32, max_len=64,
                                seed=derive_seed(seed, 19, point))
                prev = point
                rep = evaluate_model(model, data.splits["test"], data.vocab, 64)
                row.append(f"{point}:{rep.precision:.1f}(neg{rep.negative_accuracy:.0f})")
            print(f"{mode}/{init}: {' '.join(row)} [{time.time()-t0:.0f}s]", flush=True)

    # source ablation, rand init
    model = init_extractor("concat", config, np.random.default_rng(derive_seed(seed, 17)),
                           drop_source=True)
    train_extractor(model, data.splits["train"], data.vocab, cfg.adam(),
                    steps=1200, batch_size=32, max_len=64, seed=derive_seed(seed, 19))
    rep = evaluate_model(model, data.splits["test"], data.vocab, 64)
    print(f"concat/rand/nosrc @1200: {rep.precision:.1f}", flush=True)


if __name__ == "__main__":
    main()
