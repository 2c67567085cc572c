"""Count-head kernel multiplier across training regimes."""

import time

import numpy as np

from countgrad.datagen import SceneSpec, make_corpus
from countgrad.harness import StageData, TrainConfig, evaluate, train_stage
from countgrad.model import CountModel, ModelConfig

regimes = {
    "small 1-8": (SceneSpec(count_range=(1, 8), seed=5), 300, 10),
    "diverse 2-12": (SceneSpec(count_range=(2, 12), radius_range=(1.5, 5.0), seed=17), 1500, 15),
}

for name, (spec, n, epochs) in regimes.items():
    train = make_corpus(spec, n)
    val = make_corpus(spec, 80, split="val", first_id=400000)
    for kmul in (1.0, 2.0, 4.0, 8.0):
        for seed in (0, 1):
            model = CountModel.create(ModelConfig(seed=0))
            model.weights["cnt_out_k"] *= kmul  # on top of the baked-in 5x
            cfg = TrainConfig(stage="strong", epochs=epochs, batch_size=16, patience=epochs, seed=seed)
            t0 = time.time()
            model, log = train_stage(model, StageData(train, val), cfg)
            tail = " ".join(f"{r['val_mae']:5.2f}" for r in log[-4:])
            best = min(r["val_mae"] for r in log)
            print(
                f"{name:13s} k${5*kmul:4.0f} seed{seed} [{time.time()-t0:4.0f}s] "
                f"best {best:5.2f} | tail {tail}",
                flush=True,
            )
