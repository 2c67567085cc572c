"""C9 analysis: per-scene error structure vs composite error accumulation."""

import math
import time

import numpy as np

from countgrad.datagen import SceneSpec, make_corpus
from countgrad.harness import StageData, TrainConfig, evaluate, train_stage
from countgrad.model import CountModel, ModelConfig, save_checkpoint

t0 = time.process_time()
spec = SceneSpec(count_range=(1, 15), seed=11)
train = make_corpus(spec, 2000)
val = make_corpus(spec, 120, split="val", first_id=400_000)
test = make_corpus(spec, 200, split="test", first_id=500_000)
model = CountModel.create(ModelConfig(seed=0))
cfg = TrainConfig(stage="strong", epochs=20, batch_size=16, patience=5, seed=0)
model, _ = train_stage(model, StageData(train, val), cfg)
m = evaluate(model, test)
print(f"train {time.process_time() - t0:.0f}s  eval MAE {m.mae:.4f} RMSE {m.rmse:.4f}")
save_checkpoint(model, "scratch_strong.ckpt")

# per-scene signed errors
errs = []
for s in test.samples():
    pred = model.thresholded_count(s.scene.image, s.category_id, 0.0)
    errs.append(pred - s.scene.count(s.category_id))
errs = np.array(errs)
print(f"per-scene: mean {errs.mean():+.4f} median {np.median(errs):+.4f} "
      f"MAE {np.abs(errs).mean():.4f} RMSE {np.sqrt((errs**2).mean()):.4f}")
q = np.quantile(np.abs(errs), [0.5, 0.75, 0.9, 0.95, 1.0])
print("abs-err quantiles 50/75/90/95/100:", np.round(q, 3))

# composites exactly as the acceptance test builds them
samples = test.samples()
by_cat = {}
for s in samples:
    by_cat.setdefault(s.category_id, []).append(s)
comp_err = []
for cat, group in sorted(by_cat.items()):
    for i in range(0, len(group) - 3, 4):
        quad = group[i : i + 4]
        top = np.hstack([quad[0].scene.image, quad[1].scene.image])
        bottom = np.hstack([quad[2].scene.image, quad[3].scene.image])
        image = np.vstack([top, bottom])
        truth = sum(s.scene.count(cat) for s in quad)
        tiled = model.tiled_count(image, cat, tile_size=64)
        comp_err.append(tiled - truth)
comp_err = np.array(comp_err)
first20 = comp_err[:20]
print(f"\ncomposites: n={comp_err.size}")
print(f"first 20: mean|e| {np.abs(first20).mean():.4f} signed mean {first20.mean():+.4f}")
print(f"all     : mean|e| {np.abs(comp_err).mean():.4f} signed mean {comp_err.mean():+.4f} "
      f"median|e| {np.median(np.abs(comp_err)):.4f}")
print("composite signed errors (first 20):", np.round(first20, 3))
print(f"bound 2x eval MAE = {2 * m.mae:.4f}")
