"""Probe 6: twins drift (crit 5) and guidance (crit 6) after x10 init + presence temp."""

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
from countgrad.model import CountModel, ModelConfig
from countgrad.raster import oracle_count_components

t_all = time.time()


def clock(label, t0):
    print(f"[{time.time()-t0:6.1f}s] {label}", flush=True)


# --- criterion 5: twins -------------------------------------------------------
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
den_cfg = TrainConfig(
    stage="strong", target="density", epochs=15, batch_size=16, patience=5, seed=0
)
twin_den = CountModel.create(ModelConfig(seed=0))
twin_den, _ = train_stage(twin_den, StageData(d_train, d_val), den_cfg)
clock(f"density twin (adaptive sigma) val MAE {evaluate(twin_den, d_val).mae:.3f}", t0)

t0 = time.time()
denf_cfg = TrainConfig(
    stage="strong", target="density", sigma=2.0, epochs=15, batch_size=16, patience=5, seed=0
)
twin_denf = CountModel.create(ModelConfig(seed=0))
twin_denf, _ = train_stage(twin_denf, StageData(d_train, d_val), denf_cfg)
clock(f"density twin (sigma 2.0) val MAE {evaluate(twin_denf, d_val).mae:.3f}", t0)

t0 = time.time()
rows = size_bias_sweep(
    {"card": twin_card, "den": twin_den, "denf": twin_denf}, d_eval, ratios=(1.0, 1.5, 2.0, 3.0)
)
for r in rows:
    print(
        f"  {r.model} ratio {r.ratio}: drift {r.mean_drift:+.3f} "
        f"|drift| {r.mean_abs_drift:.3f} MAE {r.mae:.3f}"
    )
for den_name in ("den", "denf"):
    for ratio in (1.5, 2.0, 3.0):
        card = next(r for r in rows if r.model == "card" and r.ratio == ratio)
        den = next(r for r in rows if r.model == den_name and r.ratio == ratio)
        print(
            f"  C5a {den_name} ratio {ratio}: |card| {card.mean_abs_drift:.3f} < "
            f"|den| {den.mean_abs_drift:.3f} ? {card.mean_abs_drift < den.mean_abs_drift}"
        )
for den_name, m in (("den", twin_den), ("denf", twin_denf)):
    cls_rows = size_class_drift(m, den_name, d_eval, (1.5, 2.0, 3.0))
    agg = {
        c: float(np.mean([r.mean_drift for r in cls_rows if r.size_class == c]))
        for c in (0, 1, 2)
    }
    print(f"  C5b {den_name} drift by size class: {agg}", flush=True)
clock("sweep", t0)

# --- criterion 6: guidance ----------------------------------------------------
t0 = time.time()
strong_spec = SceneSpec(count_range=(1, 15), seed=11)
s_train = make_corpus(strong_spec, 2000)
s_val = make_corpus(strong_spec, 120, split="val", first_id=400000)
model_s = CountModel.create(ModelConfig(seed=0))
cfg_s = TrainConfig(stage="strong", epochs=20, batch_size=16, patience=5, seed=0)
model_s, _ = train_stage(model_s, StageData(s_train, s_val), cfg_s)
clock(f"counter val MAE {evaluate(model_s, s_val).mae:.3f}", t0)

t0 = time.time()
ok = 0
total = 0
worst_rise = 0.0
step_counts = []
for q in range(3, 10):
    for seed in range(4):
        rng = np.random.default_rng((q, seed))
        params = init_blob_params(rng, n_slots=12, n_on=5)
        best, traj = guide_optimize(
            model_s, params, GuidanceConfig(q_req=float(q)), category_id=0
        )
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
clock(
    f"guidance: {ok}/{total} ({ok/total:.0%}), steps med {int(np.median(step_counts))}, "
    f"worst smoothed rise {worst_rise:.2e}",
    t0,
)

print(f"TOTAL {time.time()-t_all:.0f}s", flush=True)
