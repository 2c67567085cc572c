"""Probe count-head bias init and Adam eps against the saturation collapse."""

import time

import numpy as np

from countgrad.datagen import SceneSpec, make_corpus
from countgrad.harness import StageData, TrainConfig, evaluate, train_stage
from countgrad.model import CountModel, ModelConfig

spec = SceneSpec(count_range=(1, 15), seed=11)
train = make_corpus(spec, 400)
val = make_corpus(spec, 80, split="val", first_id=400000)
data = StageData(train, val)

variants = [
    ("b=-3.0 eps=1e-8", -3.0, 1e-8),
    ("b=-1.5 eps=1e-8", -1.5, 1e-8),
    ("b=-1.5 eps=1e-4", -1.5, 1e-4),
    ("b=-3.0 eps=1e-4", -3.0, 1e-4),
    ("b= 0.0 eps=1e-4", 0.0, 1e-4),
    ("b=-2.0 eps=1e-3", -2.0, 1e-3),
]

for label, bias, eps in variants:
    model = CountModel.create(ModelConfig(seed=0))
    model.weights["cnt_out_b"][...] = bias
    cfg = TrainConfig(stage="strong", epochs=12, batch_size=16, patience=12, seed=0, adam_eps=eps)
    t0 = time.time()
    model, log = train_stage(model, data, cfg)
    maes = " ".join(f"{r['val_mae']:5.2f}" for r in log)
    preds = [model.predict_count(it.sample.scene.image, it.sample.category_id) for it in val.items[:8]]
    print(f"{label}  [{time.time()-t0:5.1f}s]  val MAE: {maes}")
    print(f"          sample preds: {np.round(preds, 2)}")
