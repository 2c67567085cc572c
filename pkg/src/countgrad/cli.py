"""Command-line front end: data generation, training, evaluation, experiments.

Every subcommand reads an INI config (sections of flat key=value pairs),
takes ``--seed`` and ``--out``, writes its artifacts into the output
directory, and exits 0 only when every declared artifact was produced.
The key set per section is documented in the README.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys

import numpy as np

from . import autodiff as ad
from .datagen import Corpus, SceneSpec, make_corpus, read_corpus, write_corpus
from .harness import (
    ABLATION_VARIANTS,
    GuidanceConfig,
    StageData,
    TrainConfig,
    evaluate,
    guide_optimize,
    init_blob_params,
    render_blob_scene,
    run_ablation,
    size_bias_sweep,
    size_class_drift,
    threshold_sweep,
    train_stage,
)
from .losses import LossWeights
from .model import CountModel, ModelConfig, load_checkpoint, save_checkpoint
from .raster import oracle_count_components


class ConfigError(ValueError):
    """Raised for missing, unknown, or ill-typed config keys."""


_SECTION_KEYS = {
    "scene": {
        "image_size", "shape_kinds", "count_min", "count_max", "radius_min",
        "radius_max", "min_separation", "background", "intensity_min",
        "intensity_max", "noise_amplitude", "n_negative_points",
        "distractor_min", "distractor_max", "seed",
    },
    "corpus": {"n", "split", "first_id"},
    "model": {
        "input_size", "channels", "fused_channels", "embed_dim",
        "num_categories", "seed", "init_checkpoint",
    },
    "train": {
        "stage", "train_corpus", "val_corpus", "strong_mix_corpus", "epochs",
        "batch_size", "patience", "lr_heads", "lr_trunk", "seed", "target",
        "sigma", "adam_eps",
    },
    "loss": {"alpha1", "beta1", "alpha2", "beta2", "gamma"},
    "eval": {"checkpoint", "corpus", "kappa", "tile_size"},
    "size-bias": {"checkpoints", "corpus", "ratios", "by_size_class"},
    "threshold-sweep": {"checkpoint", "corpus", "kappas"},
    "guide": {
        "checkpoint", "q_req", "category", "n_slots", "n_on", "max_steps",
        "step_size", "plateau_patience", "oracle_threshold", "seed",
    },
    "ablate": {
        "variants", "strong_train_corpus", "strong_val_corpus",
        "weak_train_corpus", "weak_val_corpus", "strong_mix_corpus",
        "eval_corpus",
    },
    "strong-train": {
        "epochs", "batch_size", "patience", "lr_heads", "lr_trunk", "seed",
        "target", "sigma", "adam_eps",
    },
    "weak-train": {
        "epochs", "batch_size", "patience", "lr_heads", "lr_trunk", "seed",
        "target", "sigma", "adam_eps",
    },
}


def _load_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    read = cfg.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for section in cfg.sections():
        allowed = _SECTION_KEYS.get(section)
        if allowed is None:
            raise ConfigError(f"unknown config section [{section}]")
        extra = set(cfg[section]) - allowed
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
    return cfg


def _section(cfg, name, required=False):
    if cfg.has_section(name):
        return cfg[name]
    if required:
        raise ConfigError(f"missing required section [{name}]")
    return cfg["DEFAULT"]  # empty; getters fall back to defaults


def _require(section, key):
    value = section.get(key)
    if value is None:
        raise ConfigError(f"missing required key {key!r} in [{section.name}]")
    return value


def _scene_spec(cfg, seed_override) -> SceneSpec:
    s = _section(cfg, "scene")
    d = SceneSpec()  # defaults
    kinds = tuple(k.strip() for k in s.get("shape_kinds", "disk,square").split(","))
    seed = seed_override if seed_override is not None else s.getint("seed", d.seed)
    return SceneSpec(
        image_size=s.getint("image_size", d.image_size),
        shape_kinds=kinds,
        count_range=(s.getint("count_min", d.count_range[0]), s.getint("count_max", d.count_range[1])),
        radius_range=(s.getfloat("radius_min", d.radius_range[0]), s.getfloat("radius_max", d.radius_range[1])),
        min_separation=s.getfloat("min_separation", d.min_separation),
        background=s.getfloat("background", d.background),
        intensity_range=(
            s.getfloat("intensity_min", d.intensity_range[0]),
            s.getfloat("intensity_max", d.intensity_range[1]),
        ),
        noise_amplitude=s.getfloat("noise_amplitude", d.noise_amplitude),
        n_negative_points=s.getint("n_negative_points", d.n_negative_points),
        distractor_range=(
            s.getint("distractor_min", d.distractor_range[0]),
            s.getint("distractor_max", d.distractor_range[1]),
        ),
        seed=seed,
    )


def _model_config(cfg) -> ModelConfig:
    s = _section(cfg, "model")
    d = ModelConfig()
    channels = tuple(int(c) for c in s.get("channels", "8,16,24").split(","))
    return ModelConfig(
        input_size=s.getint("input_size", d.input_size),
        channels=channels,
        fused_channels=s.getint("fused_channels", d.fused_channels),
        embed_dim=s.getint("embed_dim", d.embed_dim),
        num_categories=s.getint("num_categories", d.num_categories),
        seed=s.getint("seed", d.seed),
    )


def _loss_weights(cfg) -> LossWeights:
    s = _section(cfg, "loss")
    d = LossWeights()
    return LossWeights(
        alpha1=s.getfloat("alpha1", d.alpha1),
        beta1=s.getfloat("beta1", d.beta1),
        alpha2=s.getfloat("alpha2", d.alpha2),
        beta2=s.getfloat("beta2", d.beta2),
        gamma=s.getfloat("gamma", d.gamma),
    )


def _train_config(cfg, section_name, stage, weights, seed_override) -> TrainConfig:
    s = _section(cfg, section_name)
    d = TrainConfig()
    seed = seed_override if seed_override is not None else s.getint("seed", d.seed)
    sigma = s.getfloat("sigma") if s.get("sigma") else None
    return TrainConfig(
        stage=stage,
        weights=weights,
        lr_heads=s.getfloat("lr_heads", d.lr_heads),
        lr_trunk=s.getfloat("lr_trunk", d.lr_trunk),
        epochs=s.getint("epochs", d.epochs),
        batch_size=s.getint("batch_size", d.batch_size),
        patience=s.getint("patience", d.patience),
        seed=seed,
        target=s.get("target", d.target),
        sigma=sigma,
        adam_eps=s.getfloat("adam_eps", d.adam_eps),
    )


def _read_corpus_at(section, key) -> Corpus:
    path = _require(section, key)
    if not os.path.exists(path):
        raise ConfigError(f"corpus file not found: {path}")
    return read_corpus(path)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_summary(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# -- subcommands -------------------------------------------------------------


def cmd_gen_data(cfg, seed, outdir):
    spec = _scene_spec(cfg, seed)
    c = _section(cfg, "corpus")
    n = c.getint("n", 100)
    split = c.get("split", "train")
    first_id = c.getint("first_id", 0)
    corpus = make_corpus(spec, n, split=split, first_id=first_id)

    corpus_path = os.path.join(outdir, "corpus.bin")
    write_corpus(corpus, corpus_path)
    counts = [s.scene.count(s.category_id) for s in corpus.samples()]
    _write_summary(
        os.path.join(outdir, "summary.txt"),
        [
            f"scenes: {n}",
            f"split: {split}",
            f"scene ids: {first_id}..{first_id + n - 1}",
            f"counts: min {min(counts)} max {max(counts)} mean {np.mean(counts):.2f}",
            f"spec: {spec.to_json()}",
        ],
    )
    return [corpus_path, os.path.join(outdir, "summary.txt")]


def _load_model(cfg):
    s = _section(cfg, "model")
    init = s.get("init_checkpoint")
    if init:
        if not os.path.exists(init):
            raise ConfigError(f"checkpoint not found: {init}")
        return load_checkpoint(init)
    return CountModel.create(_model_config(cfg))


def cmd_train(cfg, seed, outdir):
    t = _section(cfg, "train", required=True)
    stage = t.get("stage", "strong")
    weights = _loss_weights(cfg)
    config = _train_config(cfg, "train", stage, weights, seed)

    train = _read_corpus_at(t, "train_corpus")
    val = _read_corpus_at(t, "val_corpus")
    mix = _read_corpus_at(t, "strong_mix_corpus") if t.get("strong_mix_corpus") else None
    data = StageData(train, val, strong_mix=mix)

    model = _load_model(cfg)
    model, log = train_stage(model, data, config)

    ckpt_path = os.path.join(outdir, "model.ckpt")
    save_checkpoint(model, ckpt_path)
    log_path = os.path.join(outdir, "train_log.csv")
    _write_csv(
        log_path,
        ["epoch", "loss_cnt", "loss_cls", "val_mae", "val_rmse", "n_strong", "n_weak"],
        [[r[k] for k in ("epoch", "loss_cnt", "loss_cls", "val_mae", "val_rmse", "n_strong", "n_weak")] for r in log],
    )
    best = min(r["val_mae"] for r in log)
    summary_path = os.path.join(outdir, "summary.txt")
    _write_summary(
        summary_path,
        [
            f"stage: {stage}",
            f"epochs run: {len(log)} of {config.epochs}",
            f"best val MAE: {best:.4f} (checkpoint restored to this epoch)",
            f"final val RMSE: {log[-1]['val_rmse']:.4f}",
        ],
    )
    return [ckpt_path, log_path, summary_path]


def cmd_eval(cfg, seed, outdir):
    s = _section(cfg, "eval", required=True)
    model = load_checkpoint(_require(s, "checkpoint"))
    corpus = _read_corpus_at(s, "corpus")
    kappa = s.getfloat("kappa", 0.0)
    tile_size = s.getint("tile_size") if s.get("tile_size") else None

    rows = []
    for item in corpus.items:
        sample = item.sample
        truth = sample.scene.count(sample.category_id)
        if tile_size is not None:
            pred = model.tiled_count(sample.scene.image, sample.category_id, tile_size, kappa=kappa)
        else:
            pred = model.thresholded_count(sample.scene.image, sample.category_id, kappa)
        rows.append([item.scene_id, truth, pred, pred - truth])
    err = np.array([r[3] for r in rows])
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err**2).mean()))

    per_image = os.path.join(outdir, "per_image.csv")
    _write_csv(per_image, ["scene_id", "truth", "pred", "error"], rows)
    summary_path = os.path.join(outdir, "summary.txt")
    _write_summary(
        summary_path,
        [f"images: {len(rows)}", f"kappa: {kappa}", f"MAE: {mae:.4f}", f"RMSE: {rmse:.4f}"],
    )
    return [per_image, summary_path]


def _named_checkpoints(value):
    pairs = []
    for entry in value.split(","):
        name, _, path = entry.strip().partition("=")
        if not path:
            raise ConfigError(f"checkpoints entries must be name=path, got {entry!r}")
        pairs.append((name, path))
    return pairs


def cmd_size_bias(cfg, seed, outdir):
    s = _section(cfg, "size-bias", required=True)
    corpus = _read_corpus_at(s, "corpus")
    ratios = tuple(float(r) for r in s.get("ratios", "1.0,1.5,2.0,3.0,4.0").split(","))
    models = {}
    for name, path in _named_checkpoints(_require(s, "checkpoints")):
        if not os.path.exists(path):
            raise ConfigError(f"checkpoint not found: {path}")
        models[name] = load_checkpoint(path)

    rows = size_bias_sweep(models, corpus, ratios)
    table_path = os.path.join(outdir, "size_bias.csv")
    _write_csv(
        table_path,
        ["model", "ratio", "mean_drift", "mean_abs_drift", "mae"],
        [[r.model, r.ratio, r.mean_drift, r.mean_abs_drift, r.mae] for r in rows],
    )
    artifacts = [table_path]

    lines = ["model,ratio -> mean drift (objects)"]
    for r in rows:
        lines.append(f"  {r.model} @ {r.ratio}: drift {r.mean_drift:+.3f}, MAE {r.mae:.3f}")

    if s.getboolean("by_size_class", False):
        cls_rows = []
        for name, model in models.items():
            cls_rows.extend(size_class_drift(model, name, corpus, ratios))
        cls_path = os.path.join(outdir, "size_class_drift.csv")
        _write_csv(
            cls_path,
            ["model", "ratio", "size_class", "mean_drift", "n"],
            [[r.model, r.ratio, r.size_class, r.mean_drift, r.n] for r in cls_rows],
        )
        artifacts.append(cls_path)
        lines.append("size-class breakdown written to size_class_drift.csv")

    summary_path = os.path.join(outdir, "summary.txt")
    _write_summary(summary_path, lines)
    return artifacts + [summary_path]


def cmd_threshold_sweep(cfg, seed, outdir):
    s = _section(cfg, "threshold-sweep", required=True)
    model = load_checkpoint(_require(s, "checkpoint"))
    corpus = _read_corpus_at(s, "corpus")
    kappas = tuple(float(k) for k in s.get("kappas", "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9").split(","))

    rows, best = threshold_sweep(model, corpus, kappas)
    table_path = os.path.join(outdir, "threshold_sweep.csv")
    _write_csv(table_path, ["kappa", "mae", "rmse"], [[r.kappa, r.mae, r.rmse] for r in rows])
    summary_path = os.path.join(outdir, "summary.txt")
    _write_summary(
        summary_path,
        [f"kappa {r.kappa:.2f}: MAE {r.mae:.4f} RMSE {r.rmse:.4f}" for r in rows]
        + [f"best kappa by MAE: {best}"],
    )
    return [table_path, summary_path]


def cmd_guide(cfg, seed, outdir):
    s = _section(cfg, "guide", required=True)
    model = load_checkpoint(_require(s, "checkpoint"))
    q_req = s.getfloat("q_req")
    if q_req is None:
        raise ConfigError("missing required key 'q_req' in [guide]")
    gcfg = GuidanceConfig(
        q_req=q_req,
        max_steps=s.getint("max_steps", 150),
        step_size=s.getfloat("step_size", 5e-3),
        plateau_patience=s.getint("plateau_patience", 20),
    )
    rng_seed = seed if seed is not None else s.getint("seed", 0)
    rng = np.random.default_rng(rng_seed)
    # Default start: two blobs short of the request. The counter's
    # gradient cannot reach blobs that start far outside the visible
    # range, so guidance works best closing a small gap from below.
    n_on = s.getint("n_on", max(0, int(round(q_req)) - 2))
    params = init_blob_params(
        rng,
        n_slots=s.getint("n_slots", max(12, n_on + 3)),
        n_on=n_on,
        canvas=model.config.input_size,
    )
    category = s.getint("category", 0)
    best, trajectory = guide_optimize(model, params, gcfg, category_id=category)

    image = render_blob_scene(ad.Tape(), best).values
    threshold = s.getfloat("oracle_threshold", 0.40)
    components = oracle_count_components(image, threshold)
    final_pred = model.predict_count(image, category)

    traj_path = os.path.join(outdir, "trajectory.csv")
    _write_csv(
        traj_path, ["step", "loss", "count"], [[r.step, r.loss, r.count] for r in trajectory]
    )
    summary_path = os.path.join(outdir, "summary.txt")
    _write_summary(
        summary_path,
        [
            f"requested count: {q_req}",
            f"steps used: {len(trajectory)} of {gcfg.max_steps}",
            f"final predicted count: {final_pred:.3f}",
            f"connected components at threshold {threshold}: {components}",
            "component count stands in for a human count of the rendered scene",
        ],
    )
    return [traj_path, summary_path]


def cmd_ablate(cfg, seed, outdir):
    s = _section(cfg, "ablate", required=True)
    raw = s.get("variants", ",".join(ABLATION_VARIANTS))
    variants = tuple(v.strip() for v in raw.split(","))

    strong_data = StageData(
        _read_corpus_at(s, "strong_train_corpus"), _read_corpus_at(s, "strong_val_corpus")
    )
    mix = (
        _read_corpus_at(s, "strong_mix_corpus")
        if s.get("strong_mix_corpus")
        else strong_data.train
    )
    weak_data = StageData(
        _read_corpus_at(s, "weak_train_corpus"),
        _read_corpus_at(s, "weak_val_corpus"),
        strong_mix=mix,
    )
    eval_corpus = _read_corpus_at(s, "eval_corpus")

    weights = _loss_weights(cfg)
    strong_cfg = _train_config(cfg, "strong-train", "strong", weights, seed)
    weak_cfg = _train_config(cfg, "weak-train", "weak", weights, seed)

    rows = run_ablation(
        variants, _model_config(cfg), strong_data, weak_data, eval_corpus, strong_cfg, weak_cfg
    )
    table_path = os.path.join(outdir, "ablation.csv")
    _write_csv(
        table_path,
        ["variant", "mae", "rmse", "alpha1", "beta1", "alpha2", "beta2", "gamma"],
        [
            [r.variant, r.mae, r.rmse, r.weights.alpha1, r.weights.beta1,
             r.weights.alpha2, r.weights.beta2, r.weights.gamma]
            for r in rows
        ],
    )
    summary_path = os.path.join(outdir, "summary.txt")
    _write_summary(
        summary_path,
        [f"{r.variant}: MAE {r.mae:.4f} RMSE {r.rmse:.4f}" for r in rows],
    )
    return [table_path, summary_path]


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "size-bias": cmd_size_bias,
    "threshold-sweep": cmd_threshold_sweep,
    "guide": cmd_guide,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="countgrad",
        description="Cardinality-map counting: data, training, and experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory for artifacts")

    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        artifacts = _COMMANDS[args.command](cfg, args.seed, args.out)
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    missing = [p for p in artifacts if not (os.path.exists(p) and os.path.getsize(p) > 0)]
    for p in artifacts:
        print(f"wrote {p}")
    if missing:
        print(f"error: missing artifacts: {missing}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
