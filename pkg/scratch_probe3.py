"""Escape-reliability grid on the realistic 2000-scene strong stage."""

import sys
import time

import numpy as np

from countgrad.datagen import SceneSpec, make_corpus
from countgrad.harness import StageData, TrainConfig, evaluate, train_stage
from countgrad.model import CountModel, ModelConfig

spec = SceneSpec(count_range=(1, 15), seed=11)
train = make_corpus(spec, 2000)
val = make_corpus(spec, 120, split="val", first_id=400000)
test = make_corpus(spec, 200, split="test", first_id=500000)
data = StageData(train, val)
print("corpora ready", flush=True)

grid = [
    ("ctl   seed0", dict(seed=0), 1.0, 1e-3),
    ("ctl   seed1", dict(seed=1), 1.0, 1e-3),
    ("ctl   seed2", dict(seed=2), 1.0, 1e-3),
    ("k*5   seed0", dict(seed=0), 5.0, 1e-3),
    ("k*5   seed1", dict(seed=1), 5.0, 1e-3),
    ("k*5   seed2", dict(seed=2), 5.0, 1e-3),
    ("k*10  seed0", dict(seed=0), 10.0, 1e-3),
    ("lrh3  seed0", dict(seed=0), 1.0, 3e-3),
    ("k5lr3 seed0", dict(seed=0), 5.0, 3e-3),
]

for label, kw, kmul, lrh in grid:
    model = CountModel.create(ModelConfig(seed=0))
    model.weights["cnt_out_k"] *= kmul
    cfg = TrainConfig(
        stage="strong", epochs=15, batch_size=16, patience=15, lr_heads=lrh, **kw
    )
    t0 = time.time()
    model, log = train_stage(model, data, cfg)
    maes = " ".join(f"{r['val_mae']:5.2f}" for r in log)
    tm = evaluate(model, test)
    print(
        f"{label} [{time.time()-t0:5.0f}s] TEST MAE {tm.mae:.2f} RMSE {tm.rmse:.2f} | val {maes}",
        flush=True,
    )
