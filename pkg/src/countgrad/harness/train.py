"""Two-stage hybrid training and count-metric evaluation.

The strong stage regresses dense per-cell targets (cardinality by default,
Gaussian density for the ablation twin) alongside per-cell classification.
The weak stage sees only point-derived labels and the scalar count, with a
gamma fraction of every batch drawn from strongly labeled data so dense
supervision is not forgotten. Early stopping tracks validation MAE and the
best-validation weights are restored at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..datagen import Corpus
from ..losses import (
    LossWeights,
    density_loss,
    strong_cls_loss,
    strong_count_loss,
    weak_cls_loss,
    weak_count_loss,
    weighted_total,
)
from ..model import CountModel
from ..targets import (
    default_sigma,
    gaussian_density,
    grid_cardinality,
    pixel_cardinality,
    strong_class_grid,
    weak_label_grids,
)
from .optim import Adam

__all__ = [
    "TrainConfig",
    "StageData",
    "Metrics",
    "TrainingDivergence",
    "compute_metrics",
    "evaluate",
    "train_stage",
]


class TrainingDivergence(RuntimeError):
    """Loss became non-finite; carries where it happened."""


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "strong"  # "strong" or "weak"
    weights: LossWeights = field(default_factory=LossWeights)
    lr_heads: float = 1e-3
    lr_trunk: float = 1e-4  # 10x slower, mirroring the two-group rate policy
    epochs: int = 20
    batch_size: int = 16
    patience: int = 5  # epochs without val-MAE improvement before stopping
    seed: int = 0
    target: str = "cardinality"  # strong regression target; "density" for the ablation twin
    sigma: float | None = None  # density bandwidth override (default: area-adaptive)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.stage not in ("strong", "weak"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.target not in ("cardinality", "density"):
            raise ValueError(f"unknown target {self.target!r}")
        if self.lr_heads <= 0 or self.lr_trunk <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size, and patience must be >= 1")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")


@dataclass(frozen=True)
class StageData:
    """Corpora for one stage; ``strong_mix`` feeds the weak stage's gamma share."""

    train: Corpus
    val: Corpus
    strong_mix: Corpus | None = None


@dataclass(frozen=True)
class Metrics:
    mae: float
    rmse: float
    n: int


def compute_metrics(preds, truths) -> Metrics:
    """MAE and RMSE of per-image count errors."""
    preds = np.asarray(preds, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if preds.shape != truths.shape or preds.ndim != 1 or preds.size == 0:
        raise ValueError("need matching non-empty 1-d predictions and truths")
    err = preds - truths
    return Metrics(float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err))), preds.size)


def evaluate(
    model: CountModel,
    corpus: Corpus,
    kappa: float = 0.0,
    tile_size: int | None = None,
) -> Metrics:
    """Count-error metrics over a corpus; tiling engages for oversized images."""
    if len(corpus) == 0:
        raise ValueError("cannot evaluate on an empty corpus")
    preds, truths = [], []
    for sample in corpus.samples():
        if tile_size is not None:
            pred = model.tiled_count(sample.scene.image, sample.category_id, tile_size, kappa=kappa)
        else:
            pred = model.thresholded_count(sample.scene.image, sample.category_id, kappa)
        preds.append(pred)
        truths.append(sample.scene.count(sample.category_id))
    return compute_metrics(preds, truths)


# -- target preparation -------------------------------------------------------


@dataclass
class _StrongExample:
    image: np.ndarray
    category_id: int
    count_target: np.ndarray  # dense grid
    cls_target: np.ndarray  # bool grid


@dataclass
class _WeakExample:
    image: np.ndarray
    category_id: int
    weak_grids: object
    count: int


def _prepare_strong(corpus: Corpus, cfg: TrainConfig, factor: int) -> list[_StrongExample]:
    out = []
    for sample in corpus.samples():
        scene = sample.scene
        if any(i.mask is None for i in scene.instances if i.category_id == sample.category_id):
            raise ValueError("strong stage needs full masks; corpus has subpixel instances")
        masks = scene.masks(sample.category_id)
        shape = scene.shape
        if cfg.target == "cardinality":
            grid = grid_cardinality(pixel_cardinality(masks, shape), factor).grid
        else:
            sigma = cfg.sigma if cfg.sigma is not None else default_sigma(masks)
            grid = gaussian_density(sample.points.positive, sigma, shape, factor).grid
        cls = strong_class_grid(masks, shape, factor).grid
        out.append(_StrongExample(scene.image, sample.category_id, grid, cls))
    return out


def _prepare_weak(corpus: Corpus, factor: int) -> list[_WeakExample]:
    out = []
    for sample in corpus.samples():
        wg = weak_label_grids(sample.points, sample.scene.shape, factor)
        out.append(_WeakExample(sample.scene.image, sample.category_id, wg, wg.count))
    return out


# -- gradient accumulation ----------------------------------------------------


def _strong_losses(model: CountModel, ex: _StrongExample, w: LossWeights):
    tape = ad.Tape()
    fp = model.forward_on_tape(tape, ex.image, ex.category_id, trainable=True)
    if w.alpha1 > 0:
        cnt = strong_count_loss(fp.y_cnt, ex.count_target)
    else:
        cnt = ad.new_param(tape, np.asarray(0.0))
    if w.beta1 > 0:
        cls = strong_cls_loss(fp.y_cls, ex.cls_target)
    else:
        cls = ad.new_param(tape, np.asarray(0.0))
    total = weighted_total(cnt, cls, w.alpha1, w.beta1)
    return tape, fp, total, float(cnt.values), float(cls.values)


def _weak_losses(model: CountModel, ex: _WeakExample, w: LossWeights):
    tape = ad.Tape()
    fp = model.forward_on_tape(tape, ex.image, ex.category_id, trainable=True)
    if w.alpha2 > 0:
        cnt = weak_count_loss(fp.y_cnt, ex.count)
    else:
        cnt = ad.new_param(tape, np.asarray(0.0))
    if w.beta2 > 0 and ex.weak_grids.annotated.any():
        cls = weak_cls_loss(fp.y_cls, ex.weak_grids)
    else:
        cls = ad.new_param(tape, np.asarray(0.0))
    total = weighted_total(cnt, cls, w.alpha2, w.beta2)
    return tape, fp, total, float(cnt.values), float(cls.values)


def _accumulate(model, batch, losses_fn, weights_cfg, grad_sums, where):
    """Forward/backward each example on its own tape, summing gradients."""
    cnt_sum = cls_sum = 0.0
    for ex in batch:
        tape, fp, total, cnt_v, cls_v = losses_fn(model, ex, weights_cfg)
        if not math.isfinite(float(total.values)):
            raise TrainingDivergence(f"non-finite loss at {where}")
        grads = ad.backward(tape, total)
        for name, node in fp.params.items():
            grad_sums[name] += grads.wrt(node)
        cnt_sum += cnt_v
        cls_sum += cls_v
    return cnt_sum, cls_sum


def train_stage(model: CountModel, data: StageData, config: TrainConfig):
    """Optimize ``model`` in place for one stage; returns (model, epoch log).

    The log carries one record per epoch: mean loss components, validation
    MAE/RMSE, and the per-epoch strong/weak sample tally (for auditing the
    gamma mix). Deterministic given the config seed.
    """
    if config.stage == "weak" and config.weights.gamma > 0 and data.strong_mix is None:
        raise ValueError("weak stage with gamma > 0 needs a strong_mix corpus")
    if len(data.train) == 0:
        raise ValueError("empty training corpus")

    factor = model.config.grid_factor
    rng = np.random.default_rng(config.seed)
    w = config.weights

    if config.stage == "strong":
        strong_pool = _prepare_strong(data.train, config, factor)
        weak_pool: list[_WeakExample] = []
    else:
        weak_pool = _prepare_weak(data.train, factor)
        strong_pool = (
            _prepare_strong(data.strong_mix, config, factor) if data.strong_mix is not None else []
        )

    lr_map = {}
    for name in model.param_groups()["trunk"]:
        lr_map[name] = config.lr_trunk
    for name in model.param_groups()["heads"]:
        lr_map[name] = config.lr_heads
    opt = Adam(lr_map, eps=config.adam_eps)

    best_mae = math.inf
    best_weights = {k: v.copy() for k, v in model.weights.items()}
    stale = 0
    log = []
    mix_pos = 0

    for epoch in range(config.epochs):
        if config.stage == "strong":
            order = rng.permutation(len(strong_pool))
            batches = [
                [(True, strong_pool[i]) for i in order[b : b + config.batch_size]]
                for b in range(0, len(order), config.batch_size)
            ]
        else:
            order = rng.permutation(len(weak_pool))
            n_strong = round(w.gamma * config.batch_size) if strong_pool else 0
            batches = []
            for b in range(0, len(order), config.batch_size):
                weak_part = [(False, weak_pool[i]) for i in order[b : b + config.batch_size]]
                strong_part = []
                for _ in range(min(n_strong, len(weak_part))):
                    strong_part.append((True, strong_pool[mix_pos % len(strong_pool)]))
                    mix_pos += 1
                # strong samples replace weak ones, keeping batch size fixed
                batches.append(strong_part + weak_part[len(strong_part) :])

        cnt_total = cls_total = 0.0
        n_strong_seen = n_weak_seen = 0
        n_images = 0
        for bi, batch in enumerate(batches):
            grad_sums = {k: np.zeros_like(v) for k, v in model.weights.items()}
            strong_items = [ex for is_strong, ex in batch if is_strong]
            weak_items = [ex for is_strong, ex in batch if not is_strong]
            where = f"epoch {epoch}, batch {bi}"
            c1, l1 = _accumulate(model, strong_items, _strong_losses, w, grad_sums, where)
            c2, l2 = _accumulate(model, weak_items, _weak_losses, w, grad_sums, where)
            n = len(batch)
            opt.step(model.weights, {k: g / n for k, g in grad_sums.items()})
            for name, arr in model.weights.items():
                if not np.all(np.isfinite(arr)):
                    raise TrainingDivergence(f"non-finite weight {name} after {where}")
            cnt_total += c1 + c2
            cls_total += l1 + l2
            n_strong_seen += len(strong_items)
            n_weak_seen += len(weak_items)
            n_images += n

        val = evaluate(model, data.val)
        log.append(
            {
                "epoch": epoch,
                "loss_cnt": cnt_total / n_images,
                "loss_cls": cls_total / n_images,
                "val_mae": val.mae,
                "val_rmse": val.rmse,
                "n_strong": n_strong_seen,
                "n_weak": n_weak_seen,
            }
        )
        if val.mae < best_mae:
            best_mae = val.mae
            best_weights = {k: v.copy() for k, v in model.weights.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.weights = best_weights
    return model, log
