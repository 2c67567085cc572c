"""Comparative experiments: size-bias sweep, threshold sweep, ablations.

These return plain row dataclasses; persistence (CSV, summaries) is the
command-line layer's job.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..datagen import Corpus
from ..losses import LossWeights
from ..model import CountModel, ModelConfig
from ..raster import downscale_and_pad
from .train import StageData, TrainConfig, compute_metrics, evaluate, train_stage

__all__ = [
    "SizeBiasRow",
    "SizeClassRow",
    "ThresholdRow",
    "AblationRow",
    "ABLATION_VARIANTS",
    "size_bias_sweep",
    "size_class_drift",
    "threshold_sweep",
    "run_ablation",
]


@dataclass(frozen=True)
class SizeBiasRow:
    model: str
    ratio: float
    mean_drift: float  # signed mean of pred(ratio) - pred(1.0)
    mean_abs_drift: float
    mae: float


@dataclass(frozen=True)
class SizeClassRow:
    model: str
    ratio: float
    size_class: int  # 0 = smallest third of mean instance area, 2 = largest
    mean_drift: float
    n: int


@dataclass(frozen=True)
class ThresholdRow:
    kappa: float
    mae: float
    rmse: float


@dataclass(frozen=True)
class AblationRow:
    variant: str
    weights: LossWeights
    mae: float
    rmse: float


def _base_predictions(model: CountModel, corpus: Corpus) -> list[float]:
    return [
        model.thresholded_count(s.scene.image, s.category_id, 0.0) for s in corpus.samples()
    ]


def _drifts(model: CountModel, corpus: Corpus, ratio: float, base: list[float]):
    """Per-scene drift and prediction at one ratio; ratio 1.0 reuses base."""
    preds = []
    for i, sample in enumerate(corpus.samples()):
        if ratio == 1.0:
            preds.append(base[i])
        else:
            scaled = downscale_and_pad(sample.scene, ratio)
            preds.append(model.thresholded_count(scaled.image, sample.category_id, 0.0))
    drifts = [p - b for p, b in zip(preds, base)]
    return np.asarray(drifts), preds


def size_bias_sweep(
    models: dict[str, CountModel], corpus: Corpus, ratios: tuple[float, ...] = (1.0, 1.5, 2.0, 3.0, 4.0)
) -> list[SizeBiasRow]:
    """Count drift under progressive downscaling, per model and ratio.

    Drift compares against each scene's own full-size prediction, so the
    ratio-1.0 rows are identically zero by construction. Ground-truth
    counts are unchanged by rescaling, which is what makes MAE at high
    ratios meaningful.
    """
    if 1.0 not in ratios:
        raise ValueError("ratios must include 1.0 as the reference")
    if any(s.scene.count(s.category_id) > 30 for s in corpus.samples()):
        raise ValueError("size-bias protocol expects counts of at most 30")
    rows = []
    for name, model in models.items():
        base = _base_predictions(model, corpus)
        truths = [s.scene.count(s.category_id) for s in corpus.samples()]
        for ratio in ratios:
            drifts, preds = _drifts(model, corpus, ratio, base)
            m = compute_metrics(preds, truths)
            rows.append(
                SizeBiasRow(
                    name,
                    ratio,
                    float(drifts.mean()),
                    float(np.abs(drifts).mean()),
                    m.mae,
                )
            )
    return rows


def _size_classes(corpus: Corpus) -> np.ndarray:
    """Tercile label per scene by mean instance area (0 small, 2 large)."""
    areas = []
    for s in corpus.samples():
        masks = s.scene.masks(s.category_id)
        areas.append(np.mean([m.area for m in masks]) if masks else 0.0)
    areas = np.asarray(areas)
    lo, hi = np.quantile(areas, [1 / 3, 2 / 3])
    return np.digitize(areas, [lo, hi])


def size_class_drift(
    model: CountModel, name: str, corpus: Corpus, ratios: tuple[float, ...]
) -> list[SizeClassRow]:
    """Signed drift broken down by object size class, per ratio."""
    classes = _size_classes(corpus)
    base = _base_predictions(model, corpus)
    rows = []
    for ratio in ratios:
        drifts, _ = _drifts(model, corpus, ratio, base)
        for cls in (0, 1, 2):
            sel = classes == cls
            if sel.any():
                rows.append(
                    SizeClassRow(name, ratio, cls, float(drifts[sel].mean()), int(sel.sum()))
                )
    return rows


def threshold_sweep(
    model: CountModel, corpus: Corpus, kappas: tuple[float, ...]
) -> tuple[list[ThresholdRow], float]:
    """Evaluate at each classification threshold; returns rows and argmin kappa."""
    if any(not 0.0 <= k < 1.0 for k in kappas):
        raise ValueError("kappa values must lie in [0, 1)")
    rows = []
    for kappa in kappas:
        m = evaluate(model, corpus, kappa=kappa)
        rows.append(ThresholdRow(kappa, m.mae, m.rmse))
    best = min(rows, key=lambda r: r.mae)
    return rows, best.kappa


ABLATION_VARIANTS = ("full", "no-pretrain", "no-weak", "density-target", "no-alignment")


def run_ablation(
    variants: tuple[str, ...],
    model_config: ModelConfig,
    strong_data: StageData,
    weak_data: StageData,
    eval_corpus: Corpus,
    strong_cfg: TrainConfig,
    weak_cfg: TrainConfig,
) -> list[AblationRow]:
    """Train each variant from the same seed and corpora, evaluate, compare.

    Variants toggle one ingredient each: no-pretrain skips the strong
    stage, no-weak skips the finetune, density-target swaps the strong
    regression target, and no-alignment zeroes both classification terms.
    """
    for v in variants:
        if v not in ABLATION_VARIANTS:
            raise ValueError(f"unknown variant {v!r}; choose from {ABLATION_VARIANTS}")
    rows = []
    for variant in variants:
        s_cfg, w_cfg = strong_cfg, weak_cfg
        if variant == "density-target":
            s_cfg = replace(s_cfg, target="density")
        if variant == "no-alignment":
            s_cfg = replace(s_cfg, weights=replace(s_cfg.weights, beta1=0.0, beta2=0.0))
            w_cfg = replace(w_cfg, weights=replace(w_cfg.weights, beta1=0.0, beta2=0.0))
        model = CountModel.create(model_config)
        used = s_cfg.weights
        if variant != "no-pretrain":
            model, _ = train_stage(model, strong_data, s_cfg)
        if variant not in ("no-weak",):
            model, _ = train_stage(model, weak_data, w_cfg)
            used = w_cfg.weights
        m = evaluate(model, eval_corpus)
        rows.append(AblationRow(variant, used, m.mae, m.rmse))
    return rows
