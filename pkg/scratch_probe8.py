"""Probe 8: up-only guidance (n_on=2, staggered presence init) across step sizes."""

import time

import numpy as np

from countgrad import autodiff as ad
from countgrad.harness import GuidanceConfig, guide_optimize, init_blob_params, render_blob_scene
from countgrad.model import load_checkpoint
from countgrad.raster import oracle_count_components

model = load_checkpoint("scratch_counter.ckpt")

for lr in (5e-3, 8e-3, 1e-2):
    t0 = time.time()
    ok = 0
    worst_rise = 0.0
    steps = []
    misses = []
    for q in range(3, 10):
        for seed in range(8):
            rng = np.random.default_rng((q, seed))
            params = init_blob_params(rng, n_slots=12, n_on=2)
            best, traj = guide_optimize(
                model, params, GuidanceConfig(q_req=float(q), step_size=lr), category_id=0
            )
            img = render_blob_scene(ad.Tape(), best).values
            pred = model.predict_count(img, 0)
            comps = oracle_count_components(img, 0.35)
            losses = np.array([r.loss for r in traj])
            if len(losses) >= 5:
                sm = np.convolve(losses, np.ones(5) / 5, mode="valid")
                worst_rise = max(worst_rise, float(np.diff(sm).max(initial=0.0)))
            hit = abs(pred - q) <= 0.5 and comps == q
            ok += hit
            steps.append(len(traj))
            if not hit:
                misses.append(f"q{q}s{seed}:p{pred:.2f}/c{comps}/st{len(traj)}")
    n = len(steps)
    print(
        f"[{time.time()-t0:6.1f}s] lr={lr}: ok {ok}/{n} ({ok/n:.0%}) steps med "
        f"{int(np.median(steps))} max {max(steps)} worst rise {worst_rise:.2e}",
        flush=True,
    )
    if misses:
        print("   misses: " + " ".join(misses), flush=True)
