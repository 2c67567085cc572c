"""Probe 13: instrument stalling high-q guidance runs under the ladder init.

Logs per-step predicted count and per-slot presence (in band units z/T)
to see whether deep-rung slots crawl, stall, or get pushed away.
"""
import numpy as np

from countgrad import autodiff as ad
from countgrad.harness import GuidanceConfig, init_blob_params
from countgrad.harness import blob as blobmod
from countgrad.losses import guidance_loss
from countgrad.model import load_checkpoint
from countgrad.harness.optim import Adam

model = load_checkpoint("scratch_counter.ckpt")
blobmod.PRESENCE_TEMP = 0.03
T = 0.03


def trace_run(q, seed, lr=8e-3, steps=150):
    rng = np.random.default_rng((q, seed))
    params = init_blob_params(rng, n_slots=12, n_on=2)
    gcfg = GuidanceConfig(q_req=float(q), step_size=lr)
    values = {k: v.copy() for k, v in params.as_dict().items()}
    opt = Adam({k: gcfg.step_size for k in gcfg.optimize})
    print(f"=== q{q}s{seed}  init z/T: "
          + " ".join(f"{z/T:+.1f}" for z in np.sort(values['presence'])))
    for step in range(steps):
        tape = ad.Tape()
        nodes = {k: ad.new_param(tape, v) for k, v in values.items()}
        image = blobmod.render_blob_scene(tape, params.with_values(values), nodes)
        fp = model.forward_on_tape(tape, image, 0, trainable=False)
        loss = guidance_loss(fp.y_cnt, float(q))
        grads = ad.backward(tape, loss)
        gpres = grads.wrt(nodes["presence"])
        if step % 10 == 0 or step == steps - 1:
            z = values["presence"] / T
            order = np.argsort(-z)
            ztxt = " ".join(f"{z[i]:+5.1f}" for i in order)
            gtxt = " ".join(f"{gpres[i]:+.0e}" for i in order)
            print(f"step {step:3d} pred {float(fp.y_cnt.values.sum()):5.2f} "
                  f"loss {float(loss.values):5.2f}\n   z/T {ztxt}\n   g   {gtxt}")
        opt.step(values, {k: grads.wrt(nodes[k]) for k in gcfg.optimize})


trace_run(8, 1)
trace_run(9, 2)
