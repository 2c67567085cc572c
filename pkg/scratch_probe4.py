"""Physics probe for acceptance criteria 3-6: hybrid ordering, twins, guidance."""

import time

import numpy as np

from countgrad import autodiff as ad
from countgrad.datagen import SceneSpec, make_corpus
from countgrad.harness import (
    GuidanceConfig,
    StageData,
    TrainConfig,
    evaluate,
    guide_optimize,
    init_blob_params,
    render_blob_scene,
    size_bias_sweep,
    size_class_drift,
    train_stage,
)
from countgrad.losses import LossWeights
from countgrad.model import CountModel, ModelConfig
from countgrad.raster import oracle_count_components

t_all = time.time()


def clock(label, t0):
    print(f"[{time.time()-t0:6.1f}s] {label}", flush=True)


def copy_model(m):
    return CountModel(m.config, {k: v.copy() for k, v in m.weights.items()})


# --- corpora ---------------------------------------------------------------
t0 = time.time()
strong_spec = SceneSpec(count_range=(1, 15), seed=11)
shifted_spec = SceneSpec(
    count_range=(15, 40), radius_range=(1.5, 3.0), min_separation=0.9, seed=13
)
mixed_spec = SceneSpec(
    count_range=(1, 40), radius_range=(1.5, 3.0), min_separation=0.9, seed=19
)

s_train = make_corpus(strong_spec, 2000)
s_val = make_corpus(strong_spec, 120, split="val", first_id=400000)
s_test = make_corpus(strong_spec, 200, split="test", first_id=500000)
w_train = make_corpus(shifted_spec, 1200)
w_val = make_corpus(shifted_spec, 120, split="val", first_id=400000)
shifted_eval = make_corpus(shifted_spec, 200, split="eval", first_id=500000)
mixed_eval = make_corpus(mixed_spec, 200, split="eval", first_id=500000)
clock("corpora", t0)

# --- criterion 3: strong stage ----------------------------------------------
t0 = time.time()
model_s = CountModel.create(ModelConfig(seed=0))
cfg_s = TrainConfig(stage="strong", epochs=20, batch_size=16, patience=5, seed=0)
model_s, log_s = train_stage(model_s, StageData(s_train, s_val), cfg_s)
m_test = evaluate(model_s, s_test)
clock(f"strong: TEST MAE {m_test.mae:.3f} RMSE {m_test.rmse:.3f} epochs {len(log_s)}", t0)

s_shifted = evaluate(model_s, shifted_eval)
s_mixed = evaluate(model_s, mixed_eval)
print(f"  S on shifted: MAE {s_shifted.mae:.3f} | on mixed: MAE {s_mixed.mae:.3f}", flush=True)

# --- criterion 4: weak finetune vs weak-only ---------------------------------
t0 = time.time()
weak_weights = LossWeights(gamma=0.05)
cfg_w = TrainConfig(stage="weak", weights=weak_weights, epochs=15, batch_size=16, patience=4, seed=0)
model_w = copy_model(model_s)
model_w, log_w = train_stage(model_w, StageData(w_train, w_val, strong_mix=s_train), cfg_w)
w_shifted = evaluate(model_w, shifted_eval)
w_mixed = evaluate(model_w, mixed_eval)
clock(
    f"weak finetune: shifted MAE {w_shifted.mae:.3f} mixed {w_mixed.mae:.3f} epochs {len(log_w)}",
    t0,
)

t0 = time.time()
cfg_o = TrainConfig(
    stage="weak", weights=LossWeights(gamma=0.0), epochs=15, batch_size=16, patience=4, seed=0
)
model_o = CountModel.create(ModelConfig(seed=0))
model_o, log_o = train_stage(model_o, StageData(w_train, w_val), cfg_o)
o_shifted = evaluate(model_o, shifted_eval)
o_mixed = evaluate(model_o, mixed_eval)
clock(f"weak-only: shifted MAE {o_shifted.mae:.3f} mixed {o_mixed.mae:.3f}", t0)

improvement = (s_shifted.mae - w_shifted.mae) / s_shifted.mae
print(
    f"C4: improvement {improvement:.1%} (need >=20%) | "
    f"mixed: S {s_mixed.mae:.2f} W {w_mixed.mae:.2f} O {o_mixed.mae:.2f} "
    f"(need S<O and W<O)",
    flush=True,
)

# --- criterion 5: twins ------------------------------------------------------
t0 = time.time()
diverse_spec = SceneSpec(count_range=(2, 12), radius_range=(1.5, 5.0), seed=17)
d_train = make_corpus(diverse_spec, 1500)
d_val = make_corpus(diverse_spec, 100, split="val", first_id=400000)
d_eval = make_corpus(diverse_spec, 150, split="eval", first_id=500000)
clock("diverse corpora", t0)

t0 = time.time()
twin_cfg = TrainConfig(stage="strong", epochs=15, batch_size=16, patience=5, seed=0)
twin_card = CountModel.create(ModelConfig(seed=0))
twin_card, _ = train_stage(twin_card, StageData(d_train, d_val), twin_cfg)
clock(f"card twin val MAE {evaluate(twin_card, d_val).mae:.3f}", t0)

t0 = time.time()
den_cfg = TrainConfig(stage="strong", target="density", epochs=15, batch_size=16, patience=5, seed=0)
twin_den = CountModel.create(ModelConfig(seed=0))
twin_den, _ = train_stage(twin_den, StageData(d_train, d_val), den_cfg)
clock(f"density twin val MAE {evaluate(twin_den, d_val).mae:.3f}", t0)

t0 = time.time()
rows = size_bias_sweep({"card": twin_card, "den": twin_den}, d_eval, ratios=(1.0, 1.5, 2.0, 3.0))
for r in rows:
    print(f"  {r.model} ratio {r.ratio}: drift {r.mean_drift:+.3f} |drift| {r.mean_abs_drift:.3f} MAE {r.mae:.3f}")
for ratio in (1.5, 2.0, 3.0):
    card = next(r for r in rows if r.model == "card" and r.ratio == ratio)
    den = next(r for r in rows if r.model == "den" and r.ratio == ratio)
    print(f"  C5a ratio {ratio}: |card| {card.mean_abs_drift:.3f} < |den| {den.mean_abs_drift:.3f} ? {card.mean_abs_drift < den.mean_abs_drift}")
cls_rows = size_class_drift(twin_den, "den", d_eval, (1.5, 2.0, 3.0))
agg = {c: np.mean([r.mean_drift for r in cls_rows if r.size_class == c]) for c in (0, 1, 2)}
print(f"  C5b density drift by size class: {agg}", flush=True)
clock("sweep", t0)

# --- criterion 6: guidance ----------------------------------------------------
t0 = time.time()
ok = 0
total = 0
worst_rise = 0.0
step_counts = []
for q in range(3, 10):
    for seed in range(4):
        rng = np.random.default_rng((q, seed))
        params = init_blob_params(rng, n_slots=12, n_on=5)
        best, traj = guide_optimize(model_s, params, GuidanceConfig(q_req=float(q)), category_id=0)
        img = render_blob_scene(ad.Tape(), best).values
        pred = model_s.predict_count(img, 0)
        comps = oracle_count_components(img, 0.35)
        losses = np.array([r.loss for r in traj])
        if len(losses) >= 5:
            sm = np.convolve(losses, np.ones(5) / 5, mode="valid")
            worst_rise = max(worst_rise, float(np.diff(sm).max(initial=0.0)))
        hit = abs(pred - q) <= 0.5 and comps == q
        ok += hit
        total += 1
        step_counts.append(len(traj))
        if not hit:
            print(f"  miss q={q} seed={seed}: pred {pred:.2f} comps {comps} steps {len(traj)}")
clock(f"guidance: {ok}/{total} ({ok/total:.0%}), steps med {int(np.median(step_counts))}, worst smoothed rise {worst_rise:.2e}", t0)

print(f"TOTAL {time.time()-t_all:.0f}s", flush=True)
