"""End-to-end command-line runs against tiny corpora and models."""

import shutil
import subprocess
import textwrap

import numpy as np
import pytest

from countgrad.cli import main
from countgrad.datagen import corpora_equal, read_corpus
from countgrad.model import load_checkpoint

TINY_SCENE = """
    [scene]
    image_size = 16
    count_min = 1
    count_max = 3
    radius_min = 1.5
    radius_max = 2.5
    min_separation = 0.8
    n_negative_points = 4
    seed = 3
"""

TINY_MODEL = """
    [model]
    input_size = 16
    channels = 2,3,4
    fused_channels = 4
    embed_dim = 3
    seed = 2
"""


def write_config(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return str(path)


def gen_corpus(tmp_path, subdir, n=8, split="train", first_id=0, extra=""):
    cfg = write_config(
        tmp_path,
        f"gen_{subdir}.ini",
        TINY_SCENE + f"""
    [corpus]
    n = {n}
    split = {split}
    first_id = {first_id}
    """ + extra,
    )
    out = tmp_path / subdir
    assert main(["gen-data", cfg, "--out", str(out)]) == 0
    return str(out / "corpus.bin")


class TestGenData:
    def test_writes_readable_corpus(self, tmp_path):
        path = gen_corpus(tmp_path, "c1", n=5)
        corpus = read_corpus(path)
        assert len(corpus) == 5
        assert corpus.split == "train"
        summary = (tmp_path / "c1" / "summary.txt").read_text()
        assert "scenes: 5" in summary

    def test_seed_override_changes_content(self, tmp_path):
        cfg = write_config(tmp_path, "g.ini", TINY_SCENE + "\n[corpus]\nn = 3\n")
        assert main(["gen-data", cfg, "--out", str(tmp_path / "a")]) == 0
        assert main(["gen-data", cfg, "--seed", "99", "--out", str(tmp_path / "b")]) == 0
        a = read_corpus(str(tmp_path / "a" / "corpus.bin"))
        b = read_corpus(str(tmp_path / "b" / "corpus.bin"))
        assert not corpora_equal(a, b)

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "bad.ini", "[scene]\nimage_sz = 16\n")
        assert main(["gen-data", cfg, "--out", str(tmp_path / "o")]) == 1
        assert "unknown keys" in capsys.readouterr().err

    def test_unknown_section_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "bad2.ini", "[scenery]\nimage_size = 16\n")
        assert main(["gen-data", cfg, "--out", str(tmp_path / "o")]) == 1
        assert "unknown config section" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["gen-data", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 1
        assert "cannot read" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One tiny gen-data + train run shared by the downstream command tests."""
    tmp_path = tmp_path_factory.mktemp("cli")
    train_corpus = gen_corpus(tmp_path, "train_c", n=8)
    val_corpus = gen_corpus(tmp_path, "val_c", n=4, split="val", first_id=9000)
    cfg = write_config(
        tmp_path,
        "train.ini",
        TINY_MODEL + f"""
    [train]
    stage = strong
    train_corpus = {train_corpus}
    val_corpus = {val_corpus}
    epochs = 2
    batch_size = 4
    seed = 0
    """,
    )
    out = tmp_path / "run"
    assert main(["train", cfg, "--out", str(out)]) == 0
    return tmp_path, str(out / "model.ckpt"), train_corpus, val_corpus


class TestTrain:
    def test_artifacts(self, trained):
        tmp_path, ckpt, _, _ = trained
        out = tmp_path / "run"
        model = load_checkpoint(ckpt)
        assert model.config.input_size == 16
        log = (out / "train_log.csv").read_text().splitlines()
        assert log[0].startswith("epoch,loss_cnt")
        assert len(log) == 3  # header + 2 epochs
        assert "best val MAE" in (out / "summary.txt").read_text()

    def test_init_checkpoint_resume(self, trained, tmp_path):
        _, ckpt, train_corpus, val_corpus = trained
        cfg = write_config(
            tmp_path,
            "resume.ini",
            f"""
    [model]
    init_checkpoint = {ckpt}
    [train]
    stage = strong
    train_corpus = {train_corpus}
    val_corpus = {val_corpus}
    epochs = 1
    batch_size = 4
    """,
        )
        out = tmp_path / "resumed"
        assert main(["train", cfg, "--out", str(out)]) == 0
        resumed = load_checkpoint(str(out / "model.ckpt"))
        assert resumed.config.input_size == 16

    def test_missing_corpus_path(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path,
            "t.ini",
            TINY_MODEL + """
    [train]
    train_corpus = /nonexistent/corpus.bin
    val_corpus = /nonexistent/corpus.bin
    """,
        )
        assert main(["train", cfg, "--out", str(tmp_path / "o")]) == 1
        assert "not found" in capsys.readouterr().err


class TestEval:
    def test_per_image_and_summary(self, trained, tmp_path):
        _, ckpt, _, val_corpus = trained
        cfg = write_config(
            tmp_path,
            "eval.ini",
            f"""
    [eval]
    checkpoint = {ckpt}
    corpus = {val_corpus}
    kappa = 0.2
    """,
        )
        out = tmp_path / "ev"
        assert main(["eval", cfg, "--out", str(out)]) == 0
        rows = (out / "per_image.csv").read_text().splitlines()
        assert rows[0] == "scene_id,truth,pred,error"
        assert len(rows) == 5  # header + 4 val images
        assert "MAE" in (out / "summary.txt").read_text()

    def test_missing_required_key(self, trained, tmp_path, capsys):
        _, _, _, val_corpus = trained
        cfg = write_config(tmp_path, "e.ini", f"[eval]\ncorpus = {val_corpus}\n")
        assert main(["eval", cfg, "--out", str(tmp_path / "o")]) == 1
        assert "checkpoint" in capsys.readouterr().err


class TestExperimentCommands:
    def test_size_bias(self, trained, tmp_path):
        _, ckpt, _, val_corpus = trained
        cfg = write_config(
            tmp_path,
            "sb.ini",
            f"""
    [size-bias]
    checkpoints = a={ckpt}, b={ckpt}
    corpus = {val_corpus}
    ratios = 1.0,2.0
    by_size_class = true
    """,
        )
        out = tmp_path / "sb"
        assert main(["size-bias", cfg, "--out", str(out)]) == 0
        rows = (out / "size_bias.csv").read_text().splitlines()
        assert len(rows) == 5  # header + 2 models x 2 ratios
        assert (out / "size_class_drift.csv").exists()

    def test_threshold_sweep(self, trained, tmp_path):
        _, ckpt, _, val_corpus = trained
        cfg = write_config(
            tmp_path,
            "ts.ini",
            f"""
    [threshold-sweep]
    checkpoint = {ckpt}
    corpus = {val_corpus}
    kappas = 0.0,0.3,0.6
    """,
        )
        out = tmp_path / "ts"
        assert main(["threshold-sweep", cfg, "--out", str(out)]) == 0
        rows = (out / "threshold_sweep.csv").read_text().splitlines()
        assert len(rows) == 4
        assert "best kappa by MAE" in (out / "summary.txt").read_text()

    def test_guide(self, trained, tmp_path):
        _, ckpt, _, _ = trained
        cfg = write_config(
            tmp_path,
            "gd.ini",
            f"""
    [guide]
    checkpoint = {ckpt}
    q_req = 2
    n_slots = 4
    n_on = 2
    max_steps = 6
    """,
        )
        out = tmp_path / "gd"
        assert main(["guide", cfg, "--seed", "1", "--out", str(out)]) == 0
        rows = (out / "trajectory.csv").read_text().splitlines()
        assert rows[0] == "step,loss,count"
        assert 2 <= len(rows) <= 7
        summary = (out / "summary.txt").read_text()
        assert "requested count: 2" in summary
        assert "connected components" in summary

    def test_ablate(self, trained, tmp_path):
        _, _, train_corpus, val_corpus = trained
        cfg = write_config(
            tmp_path,
            "ab.ini",
            TINY_MODEL + f"""
    [ablate]
    variants = no-weak
    strong_train_corpus = {train_corpus}
    strong_val_corpus = {val_corpus}
    weak_train_corpus = {train_corpus}
    weak_val_corpus = {val_corpus}
    eval_corpus = {val_corpus}

    [loss]
    gamma = 0.0

    [strong-train]
    epochs = 1
    batch_size = 4

    [weak-train]
    epochs = 1
    batch_size = 4
    """,
        )
        out = tmp_path / "ab"
        assert main(["ablate", cfg, "--out", str(out)]) == 0
        rows = (out / "ablation.csv").read_text().splitlines()
        assert len(rows) == 2
        assert rows[1].startswith("no-weak,")

    def test_unknown_variant_fails(self, trained, tmp_path, capsys):
        _, _, train_corpus, val_corpus = trained
        cfg = write_config(
            tmp_path,
            "ab2.ini",
            TINY_MODEL + f"""
    [ablate]
    variants = no-such-thing
    strong_train_corpus = {train_corpus}
    strong_val_corpus = {val_corpus}
    weak_train_corpus = {train_corpus}
    weak_val_corpus = {val_corpus}
    eval_corpus = {val_corpus}
    """,
        )
        assert main(["ablate", cfg, "--out", str(tmp_path / "o")]) == 1
        assert "unknown variant" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("countgrad") is None, reason="entry point not installed")
def test_console_entry_point(tmp_path):
    cfg = tmp_path / "gen.ini"
    cfg.write_text(textwrap.dedent(TINY_SCENE) + "\n[corpus]\nn = 2\n")
    proc = subprocess.run(
        ["countgrad", "gen-data", str(cfg), "--out", str(tmp_path / "out")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "wrote" in proc.stdout
    assert read_corpus(str(tmp_path / "out" / "corpus.bin")).split == "train"
