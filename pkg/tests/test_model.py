"""Network contracts: shapes, ranges, gradients, count extraction, checkpoints."""

import math

import numpy as np
import pytest

from countgrad import autodiff as ad
from countgrad.model import (
    CheckpointError,
    CountModel,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)

SMALL = ModelConfig(input_size=16, channels=(2, 3, 4), fused_channels=4, embed_dim=3, seed=1)


def random_image(rng, size=64):
    return rng.uniform(0.0, 1.0, (size, size))


class TestForward:
    def test_output_shapes_and_ranges(self):
        model = CountModel.create()
        rng = np.random.default_rng(0)
        y_cnt, y_cls = model.forward(random_image(rng), 0)
        assert y_cnt.shape == (8, 8) and y_cls.shape == (8, 8)
        assert (y_cnt >= 0).all()
        assert ((y_cls > 0) & (y_cls < 1)).all()

    def test_determinism(self):
        model = CountModel.create()
        rng = np.random.default_rng(1)
        img = random_image(rng)
        a_cnt, a_cls = model.forward(img, 1)
        b_cnt, b_cls = model.forward(img, 1)
        np.testing.assert_array_equal(a_cnt, b_cnt)
        np.testing.assert_array_equal(a_cls, b_cls)

    def test_input_validation(self):
        model = CountModel.create()
        with pytest.raises(ValueError):
            model.forward(np.zeros((32, 32)), 0)
        with pytest.raises(ValueError):
            model.forward(np.zeros((64, 64)), 5)

    def test_category_conditioning_changes_output(self):
        model = CountModel.create()
        rng = np.random.default_rng(2)
        img = random_image(rng)
        a, _ = model.forward(img, 0)
        b, _ = model.forward(img, 1)
        assert not np.array_equal(a, b)

    def test_embedding_permutation_equivariance(self):
        model = CountModel.create()
        rng = np.random.default_rng(3)
        img = random_image(rng)
        swapped = {k: v.copy() for k, v in model.weights.items()}
        swapped["embed"] = swapped["embed"][[1, 0]]
        twin = CountModel(model.config, swapped)
        for head in (0, 1):
            np.testing.assert_array_equal(
                model.forward(img, 0)[head], twin.forward(img, 1)[head]
            )
            np.testing.assert_array_equal(
                model.forward(img, 1)[head], twin.forward(img, 0)[head]
            )

    def test_repeated_forward_stays_finite(self):
        model = CountModel.create(SMALL)
        rng = np.random.default_rng(4)
        for _ in range(200):
            y_cnt, y_cls = model.forward(random_image(rng, 16), int(rng.integers(2)))
            assert np.isfinite(y_cnt).all() and np.isfinite(y_cls).all()


class TestGradients:
    def test_image_gradient_matches_finite_differences(self):
        model = CountModel.create(SMALL)
        rng = np.random.default_rng(5)

        def fn(img):
            out = model.forward_on_tape(img.tape, img, 0)
            return ad.reduce_sum(out.y_cnt)

        # wider stencil than the primitive checks: at depth, h=1e-5 sits in
        # the cancellation-noise regime for small gradient coordinates
        res = ad.grad_check(fn, rng.uniform(0.2, 0.8, (16, 16)), step=3e-4)
        assert res.max_rel_error <= 1e-4

    def test_weight_gradients_match_finite_differences(self):
        # perturb full weight tensors through a trainable forward
        cfg = SMALL
        base = CountModel.create(cfg)
        rng = np.random.default_rng(6)
        img = rng.uniform(0.2, 0.8, (16, 16))

        for wname in ("cnt_out_k", "cls_proj_w", "attn2_w", "stage3_k", "embed"):
            # trainable forward gives the analytic grad; numeric side nudges
            # single weight coordinates through the plain forward
            tape = ad.Tape()
            fp = CountModel(cfg, base.weights).forward_on_tape(tape, img, 1, trainable=True)
            loss = ad.add(ad.reduce_sum(fp.y_cnt), ad.reduce_sum(fp.y_cls))
            analytic = ad.backward(tape, loss).wrt(fp.params[wname])

            w0 = base.weights[wname]
            flat = w0.ravel()
            idx = rng.choice(flat.size, size=min(6, flat.size), replace=False)
            step = 1e-5
            for i in idx:
                for sign, store in ((+1, "p"), (-1, "m")):
                    nudged = dict(base.weights)
                    arr = w0.copy().ravel()
                    arr[i] += sign * step
                    nudged[wname] = arr.reshape(w0.shape)
                    y_cnt, y_cls = CountModel(cfg, nudged).forward(img, 1)
                    if sign > 0:
                        fp_val = y_cnt.sum() + y_cls.sum()
                    else:
                        fm_val = y_cnt.sum() + y_cls.sum()
                numeric = (fp_val - fm_val) / (2 * step)
                a = analytic.ravel()[i]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                assert rel <= 1e-4, f"{wname}[{i}]: rel {rel:.2e}"

    def test_cls_head_does_not_leak_into_count_gradient(self):
        # the count output must not depend on classification-head weights
        cfg = SMALL
        model = CountModel.create(cfg)
        tape = ad.Tape()
        rng = np.random.default_rng(7)
        fp = model.forward_on_tape(tape, rng.uniform(0.2, 0.8, (16, 16)), 0, trainable=True)
        grads = ad.backward(tape, ad.reduce_sum(fp.y_cnt))
        for name in ("head_cls_k", "cls_proj_w", "cls_logit_scale", "cls_logit_bias"):
            np.testing.assert_array_equal(grads.wrt(fp.params[name]), 0.0)
        assert np.abs(grads.wrt(fp.params["cnt_out_k"])).max() > 0.0


class TestCounts:
    def test_zeroed_count_head_closed_form(self):
        model = CountModel.create()
        model.weights["cnt_out_k"] = np.zeros_like(model.weights["cnt_out_k"])
        rng = np.random.default_rng(8)
        expect = np.logaddexp(0.0, -3.0) * 64
        assert model.predict_count(random_image(rng), 0) == pytest.approx(expect, rel=1e-12)

    def test_count_nonnegative(self):
        model = CountModel.create()
        rng = np.random.default_rng(9)
        for _ in range(5):
            assert model.predict_count(random_image(rng), 0) >= 0.0

    def test_threshold_zero_bit_exact(self):
        model = CountModel.create()
        rng = np.random.default_rng(10)
        for _ in range(20):
            img = random_image(rng)
            assert model.thresholded_count(img, 0, 0.0) == model.predict_count(img, 0)

    def test_threshold_monotone(self):
        model = CountModel.create()
        rng = np.random.default_rng(11)
        img = random_image(rng)
        counts = [model.thresholded_count(img, 0, k) for k in np.arange(0.0, 0.95, 0.05)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_threshold_high_cuts_everything(self):
        model = CountModel.create()
        rng = np.random.default_rng(12)
        assert model.thresholded_count(random_image(rng), 0, 0.999999) == 0.0

    def test_kappa_validation(self):
        model = CountModel.create()
        with pytest.raises(ValueError):
            model.thresholded_count(np.zeros((64, 64)), 0, 1.0)

    def test_tiled_single_tile_equals_predict(self):
        model = CountModel.create()
        rng = np.random.default_rng(13)
        img = random_image(rng)
        assert model.tiled_count(img, 0) == model.predict_count(img, 0)

    def test_tiled_additivity(self):
        model = CountModel.create()
        rng = np.random.default_rng(14)
        big = rng.uniform(0.0, 1.0, (128, 128))
        tiles = [big[i : i + 64, j : j + 64] for i in (0, 64) for j in (0, 64)]
        expect = math.fsum(model.predict_count(t, 0) for t in tiles)
        assert model.tiled_count(big, 0) == expect

    def test_tiled_pads_ragged_images(self):
        model = CountModel.create()
        rng = np.random.default_rng(15)
        val = model.tiled_count(rng.uniform(0.0, 1.0, (100, 70)), 0)
        assert np.isfinite(val) and val >= 0.0

    def test_tile_size_must_match_input(self):
        model = CountModel.create()
        with pytest.raises(ValueError):
            model.tiled_count(np.zeros((128, 128)), 0, tile_size=32)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        model = CountModel.create(ModelConfig(seed=42))
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.config == model.config
        assert list(loaded.weights) == list(model.weights)
        for name in model.weights:
            np.testing.assert_array_equal(loaded.weights[name], model.weights[name])
            assert loaded.weights[name].dtype == np.float64

    def test_round_trip_after_training_like_mutation(self, tmp_path):
        model = CountModel.create()
        rng = np.random.default_rng(16)
        for k in model.weights:
            model.weights[k] = model.weights[k] + rng.normal(size=model.weights[k].shape)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        for name in model.weights:
            np.testing.assert_array_equal(loaded.weights[name], model.weights[name])

    def test_bad_magic_reports_position(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(CountModel.create(SMALL), path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="byte 0"):
            load_checkpoint(path)

    def test_corruption_detected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(CountModel.create(SMALL), path)
        blob = bytearray(path.read_bytes())
        blob[50] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(CountModel.create(SMALL), path)
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(grid_factor=4)
        with pytest.raises(ValueError):
            ModelConfig(input_size=60)
        with pytest.raises(ValueError):
            ModelConfig(channels=(4, 8))
        with pytest.raises(ValueError):
            ModelConfig(num_categories=0)

    def test_json_round_trip(self):
        cfg = ModelConfig(input_size=32, channels=(4, 6, 8), seed=9)
        assert ModelConfig.from_json(cfg.to_json()) == cfg

    def test_param_groups_partition_weights(self):
        model = CountModel.create()
        groups = model.param_groups()
        together = groups["trunk"] + groups["heads"]
        assert sorted(together) == sorted(model.weights)
        assert set(groups["trunk"]).isdisjoint(groups["heads"])
