"""Differentiable blob-scene generator and the count-guidance loop.

A scene is parameterized by S slots, each carrying a presence logit, a
continuous center, a radius (softplus reparameterized, hence positive) and
an intensity. Rendering composites soft-edged disks additively over a flat
background, so every pixel is differentiable with respect to every slot
parameter. Guidance freezes a trained counter and walks these latents down
the gradient of |predicted count - requested count|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .. import autodiff as ad
from ..losses import guidance_loss
from ..model import CountModel
from .optim import Adam
from .train import TrainingDivergence

__all__ = [
    "BlobSceneParams",
    "GuidanceConfig",
    "GuidanceRecord",
    "init_blob_params",
    "render_blob_scene",
    "guide_optimize",
]

BACKGROUND = 0.1
# Edge ramp of about a pixel: wide enough that centers and radii keep
# useful gradients, crisp enough that rendered blobs look like the hard
# disks counters train on. Soft, low-contrast blobs are out of
# distribution for the counter and let the latent optimizer satisfy the
# count loss without actually changing how many blobs are visible.
EDGE_SOFTNESS = 0.35
# Blob pixel value = background + opacity * edge * intensity, so a fully-on
# blob peaks at BACKGROUND + intensity. The intensity range is chosen so
# those peaks span the same absolute brightness generated scenes use for
# their instances; counters are calibrated to that brightness, and blobs
# composited brighter or dimmer read to them as fractional objects.
_INTENSITY_LO = 0.45
_INTENSITY_SPAN = 0.35
# opacity = sigmoid(presence / PRESENCE_TEMP). Adam moves each coordinate
# by at most about step_size per step, so over a 150-step budget a latent
# travels roughly 0.75 units. With a plain sigmoid that is nowhere near
# enough to flip a decisively-off slot on; the temperature compresses the
# decision band so a flip costs a fraction of that travel while on/off
# slots still render fully opaque/invisible.
PRESENCE_TEMP = 0.04


@dataclass(frozen=True)
class BlobSceneParams:
    """Latent scene description: S slots of (presence, center, radius, intensity)."""

    presence: np.ndarray  # (S,) logits; sigmoid(presence / PRESENCE_TEMP) is opacity
    center_row: np.ndarray  # (S,) pixels, clamped to the canvas at render time
    center_col: np.ndarray  # (S,)
    radius_raw: np.ndarray  # (S,) softplus gives the radius in pixels
    intensity_raw: np.ndarray  # (S,) sigmoid-mapped into the visible range
    canvas: int = 64

    def __post_init__(self):
        n = self.presence.shape[0]
        for name in ("center_row", "center_col", "radius_raw", "intensity_raw"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")

    @property
    def n_slots(self) -> int:
        return self.presence.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "presence": self.presence,
            "center_row": self.center_row,
            "center_col": self.center_col,
            "radius_raw": self.radius_raw,
            "intensity_raw": self.intensity_raw,
        }

    def with_values(self, values: dict[str, np.ndarray]) -> "BlobSceneParams":
        return replace(self, **values)


@dataclass(frozen=True)
class GuidanceConfig:
    q_req: float
    max_steps: int = 150
    step_size: float = 5e-3
    plateau_patience: int = 20  # steps without improvement > plateau_delta
    plateau_delta: float = 1e-3
    # Latents the optimizer is allowed to move. Counts change by switching
    # blobs on or off and nudging them around, so only presence and centers
    # are steered by default; appearance latents (radius, intensity) stay
    # frozen. Letting the optimizer restyle existing blobs opens a shortcut
    # where the predicted count reaches the request while the number of
    # visible blobs never changes.
    optimize: tuple[str, ...] = ("presence", "center_row", "center_col")

    def __post_init__(self):
        if self.q_req < 0:
            raise ValueError("q_req must be non-negative")
        if self.max_steps < 1 or self.plateau_patience < 1:
            raise ValueError("step budgets must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        allowed = {"presence", "center_row", "center_col", "radius_raw", "intensity_raw"}
        if not self.optimize or not set(self.optimize) <= allowed:
            raise ValueError(f"optimize must be a non-empty subset of {sorted(allowed)}")


@dataclass(frozen=True)
class GuidanceRecord:
    step: int
    loss: float
    count: float


def inverse_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


def init_blob_params(
    rng: np.random.Generator,
    n_slots: int = 12,
    n_on: int = 2,
    canvas: int = 64,
    radius: float = 3.0,
) -> BlobSceneParams:
    """Stratified start: slots jittered on a grid, ``n_on`` of them switched on.

    Spreading slots out keeps their gradients distinct; which slots start
    active is randomized so repeated runs explore different bases. The
    default starts nearly empty: the counter's response to a blob is flat
    once it is fully visible, so guidance can reliably add blobs but has
    almost no gradient for removing one, and requests are best approached
    from below.

    Presence logits start on a ladder: rung k sits (1.5 + 1.5k)
    band-widths from zero, off slots below, on slots above, with the
    rung-to-slot assignment shuffled. The optimizer moves every latent at
    roughly the same speed, so the fixed rung gap keeps slots from
    crossing the on/off band as a block: near-equal starts would cross
    together and split the requested count increase between two
    half-visible blobs. The gap cannot be made much wider either; the
    counter's gradient with respect to a nearly invisible blob is tiny
    and of unreliable sign, so slots parked more than a few band-widths
    out never get pulled in. That same reach limit is why callers should
    start with n_on near the requested count rather than far below it.
    """
    if not 0 <= n_on <= n_slots:
        raise ValueError("n_on must lie in [0, n_slots]")
    side = math.ceil(math.sqrt(n_slots))
    pitch = canvas / side
    rows, cols = [], []
    for s in range(n_slots):
        r = (s // side + 0.5) * pitch
        c = (s % side + 0.5) * pitch
        rows.append(r + rng.uniform(-0.25, 0.25) * pitch)
        cols.append(c + rng.uniform(-0.25, 0.25) * pitch)
    presence = np.empty(n_slots)
    perm = rng.permutation(n_slots)
    presence[perm[:n_on]] = PRESENCE_TEMP * (1.5 + 1.5 * np.arange(n_on))
    presence[perm[n_on:]] = -PRESENCE_TEMP * (1.5 + 1.5 * np.arange(n_slots - n_on))
    return BlobSceneParams(
        presence=presence,
        center_row=np.asarray(rows),
        center_col=np.asarray(cols),
        radius_raw=np.full(n_slots, inverse_softplus(radius)),
        intensity_raw=np.zeros(n_slots),
        canvas=canvas,
    )


def render_blob_scene(
    tape: ad.Tape,
    params: BlobSceneParams,
    param_nodes: dict[str, ad.DiffArray] | None = None,
) -> ad.DiffArray:
    """Differentiable composite of all slots; returns the (canvas, canvas) image.

    Pass ``param_nodes`` (as made by new_param from params.as_dict()) to
    optimize the latents; otherwise fresh leaves are created on the tape.
    """
    n = params.canvas
    if param_nodes is None:
        param_nodes = {k: ad.new_param(tape, v) for k, v in params.as_dict().items()}
    lim = float(n - 1)
    opacity = ad.sigmoid(ad.scale(param_nodes["presence"], 1.0 / PRESENCE_TEMP))
    rows_c = ad.clamp(param_nodes["center_row"], 0.0, lim)
    cols_c = ad.clamp(param_nodes["center_col"], 0.0, lim)
    radius = ad.softplus(param_nodes["radius_raw"])
    intensity = ad.add(
        ad.scale(ad.sigmoid(param_nodes["intensity_raw"]), _INTENSITY_SPAN), _INTENSITY_LO
    )

    rr = np.arange(n, dtype=np.float64)[:, None]  # (n, 1)
    cc = np.arange(n, dtype=np.float64)[None, :]  # (1, n)
    image = None
    for s in range(params.n_slots):
        dr = ad.sub(rr, ad.take_index(rows_c, s))
        dc = ad.sub(cc, ad.take_index(cols_c, s))
        d2 = ad.add(ad.mul(dr, dr), ad.mul(dc, dc))
        dist = ad.sqrt(ad.add(d2, 1e-9))
        edge = ad.scale(ad.sub(ad.take_index(radius, s), dist), 1.0 / EDGE_SOFTNESS)
        blob = ad.sigmoid(edge)
        height = ad.mul(ad.take_index(opacity, s), ad.take_index(intensity, s))
        contrib = ad.mul(blob, height)
        image = contrib if image is None else ad.add(image, contrib)
    if image is None:
        return ad.new_param(tape, np.full((n, n), BACKGROUND))
    return ad.add(image, BACKGROUND)


def guide_optimize(
    model: CountModel,
    params: BlobSceneParams,
    gcfg: GuidanceConfig,
    category_id: int = 0,
) -> tuple[BlobSceneParams, list[GuidanceRecord]]:
    """Drive the blob latents toward the requested count through a frozen model.

    The model enters every forward as constants, so its weights cannot
    change. Descends guidance loss with Adam over the latents named in
    ``gcfg.optimize``; the rest keep their initial values. Stops at the
    step budget or once the best loss has not improved by more than
    plateau_delta for plateau_patience consecutive steps. Returns the
    best-loss parameters and the full (step, loss, predicted count)
    trajectory.
    """
    values = {k: v.copy() for k, v in params.as_dict().items()}
    opt = Adam({k: gcfg.step_size for k in gcfg.optimize})
    trajectory: list[GuidanceRecord] = []
    best_loss = math.inf
    best_values = {k: v.copy() for k, v in values.items()}
    stale = 0

    for step in range(gcfg.max_steps):
        tape = ad.Tape()
        nodes = {k: ad.new_param(tape, v) for k, v in values.items()}
        image = render_blob_scene(tape, params.with_values(values), nodes)
        fp = model.forward_on_tape(tape, image, category_id, trainable=False)
        count = float(fp.y_cnt.values.sum())
        loss = guidance_loss(fp.y_cnt, gcfg.q_req)
        loss_v = float(loss.values)
        if not math.isfinite(loss_v):
            raise TrainingDivergence(f"guidance loss became non-finite at step {step}")
        trajectory.append(GuidanceRecord(step, loss_v, count))

        if loss_v < best_loss - gcfg.plateau_delta:
            best_loss = loss_v
            best_values = {k: v.copy() for k, v in values.items()}
            stale = 0
        else:
            if loss_v < best_loss:
                best_loss = loss_v
                best_values = {k: v.copy() for k, v in values.items()}
            stale += 1
            if stale >= gcfg.plateau_patience:
                break

        grads = ad.backward(tape, loss)
        opt.step(values, {k: grads.wrt(nodes[k]) for k in gcfg.optimize})

    return params.with_values(best_values), trajectory
