import time

import numpy as np

from countgrad.datagen import SceneSpec, make_corpus
from countgrad.harness.train import StageData, TrainConfig, evaluate, train_stage
from countgrad.model import CountModel

t0 = time.time()
spec = SceneSpec(count_range=(1, 15), seed=11)
train = make_corpus(spec, 2000)
val = make_corpus(spec, 120, split="val", first_id=400000)
test = make_corpus(spec, 200, split="test", first_id=500000)
print(f"gen: {time.time()-t0:.1f}s", flush=True)

model = CountModel.create()
cfg = TrainConfig(stage="strong", epochs=30, batch_size=16, patience=6, seed=0)
t0 = time.time()
model, log = train_stage(model, StageData(train, val), cfg)
print(f"train: {(time.time()-t0)/60:.1f} min, {len(log)} epochs", flush=True)
for rec in log:
    print(
        f"ep {rec['epoch']:02d} cnt {rec['loss_cnt']:7.3f} cls {rec['loss_cls']:.4f} "
        f"val MAE {rec['val_mae']:.3f} RMSE {rec['val_rmse']:.3f}",
        flush=True,
    )
m = evaluate(model, test)
print(f"TEST MAE {m.mae:.3f} RMSE {m.rmse:.3f} (targets: 1.5 / 2.5)")
