"""Probe 7: density-twin rescue (sigma/init grid), big-blob size-bias, guidance matrix."""

import os
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
from countgrad.harness import blob as blobmod
from countgrad.model import CountModel, ModelConfig, load_checkpoint, save_checkpoint
from countgrad.raster import oracle_count_components

t_all = time.time()


def clock(label, t0):
    print(f"[{time.time()-t0:6.1f}s] {label}", flush=True)


# --- corpora -----------------------------------------------------------------
t0 = time.time()
diverse_spec = SceneSpec(count_range=(2, 12), radius_range=(1.5, 5.0), seed=17)
d_train = make_corpus(diverse_spec, 1500)
d_val = make_corpus(diverse_spec, 100, split="val", first_id=400000)
d_eval = make_corpus(diverse_spec, 150, split="eval", first_id=500000)
big_spec = SceneSpec(count_range=(2, 6), radius_range=(4.0, 5.0), seed=23)
b_eval = make_corpus(big_spec, 100, split="eval", first_id=600000)
clock("corpora", t0)

# --- part A: density twins under sigma / extra-init grid ----------------------
twin_cfg = dict(stage="strong", epochs=15, batch_size=16, patience=5, seed=0)
density_twins = {}
for sigma, extra in ((4.0, 1.0), (3.0, 1.0), (None, 2.0), (None, 4.0), (4.0, 2.0)):
    t0 = time.time()
    m = CountModel.create(ModelConfig(seed=0))
    if extra != 1.0:
        m.weights["cnt_out_k"] *= extra
    cfg = TrainConfig(target="density", sigma=sigma, **twin_cfg)
    m, _ = train_stage(m, StageData(d_train, d_val), cfg)
    mae = evaluate(m, d_val).mae
    name = f"den(sigma={sigma},extra={extra})"
    clock(f"{name} val MAE {mae:.3f}", t0)
    if mae < 2.0:
        density_twins[name] = m

t0 = time.time()
twin_card = CountModel.create(ModelConfig(seed=0))
twin_card, _ = train_stage(twin_card, StageData(d_train, d_val), TrainConfig(**twin_cfg))
clock(f"card val MAE {evaluate(twin_card, d_val).mae:.3f}", t0)

# --- part B: size-bias sweeps on both eval corpora -----------------------------
for label, corpus in (("diverse", d_eval), ("big", b_eval)):
    t0 = time.time()
    models = {"card": twin_card, **density_twins}
    rows = size_bias_sweep(models, corpus, ratios=(1.0, 1.5, 2.0, 3.0))
    for r in rows:
        if r.ratio == 1.0:
            continue
        print(
            f"  [{label}] {r.model} ratio {r.ratio}: drift {r.mean_drift:+.3f} "
            f"|drift| {r.mean_abs_drift:.3f} MAE {r.mae:.3f}"
        )
    card_by_ratio = {r.ratio: r for r in rows if r.model == "card"}
    for name in density_twins:
        verdicts = []
        for ratio in (1.5, 2.0, 3.0):
            den = next(r for r in rows if r.model == name and r.ratio == ratio)
            verdicts.append(card_by_ratio[ratio].mean_abs_drift < den.mean_abs_drift)
        print(f"  [{label}] C5a card<{name}: {verdicts}")
        cls_rows = size_class_drift(models[name], name, corpus, (1.5, 2.0, 3.0))
        agg = {
            c: float(np.mean([r.mean_drift for r in cls_rows if r.size_class == c]))
            for c in (0, 1, 2)
        }
        print(f"  [{label}] C5b {name} drift by class: "
              f"{{0: {agg[0]:+.3f}, 1: {agg[1]:+.3f}, 2: {agg[2]:+.3f}}}", flush=True)
    clock(f"sweep {label}", t0)

# --- part C: guidance matrix ----------------------------------------------------
t0 = time.time()
ckpt = "scratch_counter.ckpt"
if os.path.exists(ckpt):
    model_s = load_checkpoint(ckpt)
    clock("counter loaded", t0)
else:
    strong_spec = SceneSpec(count_range=(1, 15), seed=11)
    s_train = make_corpus(strong_spec, 2000)
    s_val = make_corpus(strong_spec, 120, split="val", first_id=400000)
    model_s = CountModel.create(ModelConfig(seed=0))
    cfg_s = TrainConfig(stage="strong", epochs=20, batch_size=16, patience=5, seed=0)
    model_s, _ = train_stage(model_s, StageData(s_train, s_val), cfg_s)
    save_checkpoint(model_s, ckpt)
    clock(f"counter trained val MAE {evaluate(model_s, s_val).mae:.3f}", t0)

# single-blob response curve: model count vs presence, to see where the
# counter's soft decision sits relative to the component oracle's threshold
base = init_blob_params(np.random.default_rng(0), n_slots=1, n_on=1)
for temp in (0.12, 0.05):
    blobmod.PRESENCE_TEMP = temp
    curve = []
    for u in (0.1, 0.25, 0.35, 0.45, 0.55, 0.7, 0.9):
        z = float(np.log(u / (1 - u))) * temp
        p = base.with_values({**base.as_dict(), "presence": np.array([z])})
        img = render_blob_scene(ad.Tape(), p).values
        pred = model_s.predict_count(img, 0)
        vis35 = oracle_count_components(img, 0.35)
        vis45 = oracle_count_components(img, 0.45)
        curve.append(f"u={u:.2f}:pred={pred:+.2f},v35={vis35},v45={vis45}")
    print(f"  response T={temp}: " + " ".join(curve), flush=True)

for temp in (0.12, 0.05):
    for lr in (5e-3, 2e-3):
        blobmod.PRESENCE_TEMP = temp
        t0 = time.time()
        ok35 = ok45 = 0
        worst_rise = 0.0
        steps = []
        misses = []
        for q in range(3, 10):
            for seed in range(4):
                rng = np.random.default_rng((q, seed))
                params = init_blob_params(rng, n_slots=12, n_on=5)
                gcfg = GuidanceConfig(q_req=float(q), step_size=lr)
                best, traj = guide_optimize(model_s, params, gcfg, category_id=0)
                img = render_blob_scene(ad.Tape(), best).values
                pred = model_s.predict_count(img, 0)
                c35 = oracle_count_components(img, 0.35)
                c45 = oracle_count_components(img, 0.45)
                losses = np.array([r.loss for r in traj])
                if len(losses) >= 5:
                    sm = np.convolve(losses, np.ones(5) / 5, mode="valid")
                    worst_rise = max(worst_rise, float(np.diff(sm).max(initial=0.0)))
                hit_pred = abs(pred - q) <= 0.5
                ok35 += hit_pred and c35 == q
                ok45 += hit_pred and c45 == q
                steps.append(len(traj))
                if not (hit_pred and c35 == q):
                    misses.append(f"q{q}s{seed}:p{pred:.2f}/c{c35}")
        clock(
            f"T={temp} lr={lr}: ok35 {ok35}/28 ok45 {ok45}/28 steps med "
            f"{int(np.median(steps))} worst rise {worst_rise:.2e}",
            t0,
        )
        if misses:
            print("   misses: " + " ".join(misses), flush=True)

print(f"TOTAL {time.time()-t_all:.0f}s", flush=True)
