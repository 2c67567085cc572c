"""Probe 9: in-domain compositing; edge softness and response-curve calibration."""

import time

import numpy as np

from countgrad import autodiff as ad
from countgrad.harness import GuidanceConfig, guide_optimize, init_blob_params, render_blob_scene
from countgrad.harness import blob as blobmod
from countgrad.model import load_checkpoint
from countgrad.raster import oracle_count_components

model = load_checkpoint("scratch_counter.ckpt")

for softness in (0.5, 0.35):
    blobmod.EDGE_SOFTNESS = softness
    base = init_blob_params(np.random.default_rng(0), n_slots=1, n_on=1)
    curve = []
    for u in (0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 0.95):
        z = float(np.log(u / (1 - u))) * blobmod.PRESENCE_TEMP
        p = base.with_values({**base.as_dict(), "presence": np.array([z])})
        img = render_blob_scene(ad.Tape(), p).values
        pred = model.predict_count(img, 0)
        vis = oracle_count_components(img, 0.35)
        curve.append(f"u={u:.2f}:pred={pred:+.2f},v={vis}")
    print(f"  softness={softness}: " + " ".join(curve), flush=True)

    # multi-blob calibration: k fully-on blobs, what does the model say?
    cal = []
    for k in (3, 6, 9, 12):
        rng = np.random.default_rng(99)
        params = init_blob_params(rng, n_slots=12, n_on=k)
        hard = params.with_values(
            {**params.as_dict(), "presence": np.where(params.presence > 0, 30.0, -30.0)}
        )
        img = render_blob_scene(ad.Tape(), hard).values
        cal.append(f"k={k}:pred={model.predict_count(img, 0):.2f}")
    print(f"  softness={softness} calibration: " + " ".join(cal), flush=True)

    for lr in (8e-3,):
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
            f"[{time.time()-t0:6.1f}s] softness={softness} lr={lr}: ok {ok}/{n} "
            f"({ok/n:.0%}) steps med {int(np.median(steps))} max {max(steps)} "
            f"worst rise {worst_rise:.2e}",
            flush=True,
        )
        if misses:
            print("   misses: " + " ".join(misses), flush=True)
