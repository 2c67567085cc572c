"""Two-stage training: strong pretraining, then weak finetuning.

The strong stage fits the cardinality map and the cell classification
grid from full instance masks. The weak stage has only point clicks and
the scalar count per image; it aligns the predicted total with the count
and nudges the classifier at the annotated cells, while a small fraction
gamma of each batch replays strong samples so dense structure is not
forgotten.

Runs on a reduced corpus so it finishes in a few minutes; the
acceptance suite trains the full-size version. The corpus cannot be
shrunk much further: with only a few hundred scenes the count head
tends to settle into predicting the corpus mean and never recovers.
"""

import numpy as np

from countgrad.datagen import SceneSpec, make_corpus
from countgrad.harness import StageData, TrainConfig, evaluate, train_stage
from countgrad.losses import LossWeights
from countgrad.model import CountModel, ModelConfig

spec = SceneSpec(count_range=(1, 8), seed=5)
train = make_corpus(spec, 800)
val = make_corpus(spec, 100, split="val", first_id=10_000)
test = make_corpus(spec, 100, split="test", first_id=20_000)

model = CountModel.create(ModelConfig(seed=0))
print(f"untrained MAE: {evaluate(model, test).mae:.2f}")

# Strong stage: dense supervision from masks.
strong_cfg = TrainConfig(stage="strong", epochs=12, batch_size=16, patience=6, seed=0)
model, log = train_stage(model, StageData(train, val), strong_cfg)
print("\nstrong stage:")
for rec in log:
    print(
        f"  epoch {rec['epoch']}: count loss {rec['loss_cnt']:6.3f}, "
        f"cls loss {rec['loss_cls']:.3f}, val MAE {rec['val_mae']:.2f}"
    )
print(f"after strong stage MAE: {evaluate(model, test).mae:.2f}")

# Weak stage: points and totals only, on scenes with more objects than the
# strong corpus ever showed. gamma=0.05 of each batch replays strong data.
shift = SceneSpec(count_range=(8, 14), seed=6)
weak_train = make_corpus(shift, 400)
weak_val = make_corpus(shift, 80, split="val", first_id=10_000)
shift_test = make_corpus(shift, 80, split="test", first_id=20_000)

print(f"\nbefore finetune, shifted-corpus MAE: {evaluate(model, shift_test).mae:.2f}")
weak_cfg = TrainConfig(
    stage="weak", weights=LossWeights(gamma=0.05), epochs=8, batch_size=16, patience=6, seed=0
)
model, log = train_stage(model, StageData(weak_train, weak_val, strong_mix=train), weak_cfg)
for rec in log:
    print(
        f"  epoch {rec['epoch']}: strong/weak {rec['n_strong']}/{rec['n_weak']}, "
        f"val MAE {rec['val_mae']:.2f}"
    )
print(f"after finetune, shifted-corpus MAE: {evaluate(model, shift_test).mae:.2f}")
print(f"original-corpus MAE is retained:    {evaluate(model, test).mae:.2f}")
