"""Probe 10: staggered-z init, intensity calibration, oracle-threshold alignment."""

import time

import numpy as np

from countgrad import autodiff as ad
from countgrad.harness import GuidanceConfig, guide_optimize, init_blob_params, render_blob_scene
from countgrad.harness import blob as blobmod
from countgrad.model import load_checkpoint
from countgrad.raster import oracle_count_components

model = load_checkpoint("scratch_counter.ckpt")

# in-context per-blob calibration vs intensity setting
for iraw in (0.0, 0.5, 1.0):
    cal = []
    for k in (3, 6, 9, 12):
        rng = np.random.default_rng(99)
        params = init_blob_params(rng, n_slots=12, n_on=k)
        hard = params.with_values(
            {
                **params.as_dict(),
                "presence": np.where(params.presence > 0, 30.0, -30.0),
                "intensity_raw": np.full(12, iraw),
            }
        )
        img = render_blob_scene(ad.Tape(), hard).values
        cal.append(f"k={k}:pred={model.predict_count(img, 0):.2f}")
    print(f"  intensity_raw={iraw}: " + " ".join(cal), flush=True)

THRESHOLDS = (0.38, 0.42, 0.46, 0.50)
for temp in (0.05, 0.03):
    blobmod.PRESENCE_TEMP = temp
    t0 = time.time()
    ok = {t: 0 for t in THRESHOLDS}
    pred_ok = 0
    worst_rise = 0.0
    steps = []
    detail = {t: [] for t in THRESHOLDS}
    for q in range(3, 10):
        for seed in range(8):
            rng = np.random.default_rng((q, seed))
            params = init_blob_params(rng, n_slots=12, n_on=2)
            best, traj = guide_optimize(
                model, params, GuidanceConfig(q_req=float(q), step_size=8e-3), category_id=0
            )
            img = render_blob_scene(ad.Tape(), best).values
            pred = model.predict_count(img, 0)
            hit_pred = abs(pred - q) <= 0.5
            pred_ok += hit_pred
            losses = np.array([r.loss for r in traj])
            if len(losses) >= 5:
                sm = np.convolve(losses, np.ones(5) / 5, mode="valid")
                worst_rise = max(worst_rise, float(np.diff(sm).max(initial=0.0)))
            steps.append(len(traj))
            for t in THRESHOLDS:
                comps = oracle_count_components(img, t)
                if hit_pred and comps == q:
                    ok[t] += 1
                else:
                    detail[t].append(f"q{q}s{seed}:p{pred:.2f}/c{comps}")
    n = len(steps)
    summary = " ".join(f"thr{t}:{ok[t]}/{n}" for t in THRESHOLDS)
    print(
        f"[{time.time()-t0:6.1f}s] T={temp}: pred-ok {pred_ok}/{n} | {summary} | "
        f"steps med {int(np.median(steps))} max {max(steps)} worst rise {worst_rise:.2e}",
        flush=True,
    )
    best_t = max(THRESHOLDS, key=lambda t: ok[t])
    print(f"   misses@thr{best_t}: " + " ".join(detail[best_t][:30]), flush=True)
