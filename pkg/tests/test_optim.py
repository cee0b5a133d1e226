import numpy as np
import pytest

from conftest import desk_config, tiny_config
from ndfield import ndf
from ndfield.errors import DataError
from ndfield.optim import (ReconstructionConfig, grad_check, init_optimizer,
                           learning_rate, noise_sigma, read_config,
                           reconstruct, sample_patches, train_step,
                           write_config, write_log_csv)


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = desk_config(alpha=0.7, iterations=123, grayscale=True)
        path = tmp_path / "cfg.txt"
        write_config(cfg, path)
        assert read_config(path) == cfg

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("alpha = 1.0\nbananas = 7\n")
        with pytest.raises(DataError, match="unknown"):
            read_config(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("iterations = soon\n")
        with pytest.raises(DataError):
            read_config(path)

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            ReconstructionConfig(iterations=0)
        with pytest.raises(ValueError):
            ReconstructionConfig(patch_size=8, mssim_window=11)
        with pytest.raises(ValueError):
            ReconstructionConfig(noise_start=0.0, noise_end=0.1)


class TestSamplePatches:
    def test_single_possible_origin(self):
        cfg = desk_config(patch_size=32, patches_per_step=5)
        rng = np.random.default_rng(0)
        origins = sample_patches(rng, 32, 32, cfg)
        np.testing.assert_array_equal(origins, 0)

    def test_deterministic_sequence(self):
        cfg = desk_config()
        a = sample_patches(np.random.default_rng(9), 256, 256, cfg)
        b = sample_patches(np.random.default_rng(9), 256, 256, cfg)
        np.testing.assert_array_equal(a, b)

    def test_bounds(self):
        cfg = desk_config(patch_size=32, patches_per_step=10_000)
        origins = sample_patches(np.random.default_rng(1), 256, 256, cfg)
        assert origins.min() >= 0
        assert origins.max() <= 224

    def test_too_large_patch(self):
        cfg = desk_config(patch_size=64)
        with pytest.raises(ValueError):
            sample_patches(np.random.default_rng(0), 32, 32, cfg)


class TestNoiseSchedule:
    def test_schedule_endpoints(self):
        cfg = desk_config(iterations=2000, noise_start=1.0, noise_end=1e-2,
                          noise_fraction=0.5)
        assert noise_sigma(0, cfg) == 1.0
        assert noise_sigma(999, cfg) == pytest.approx(1e-2, abs=1e-15)
        assert noise_sigma(1000, cfg) == 0.0
        assert noise_sigma(1999, cfg) == 0.0

    def test_log_linear(self):
        cfg = desk_config(iterations=1000, noise_fraction=1.0)
        mid = noise_sigma(499, cfg)
        # halfway in log space between 1e0 and 1e-2
        assert np.log10(mid) == pytest.approx(-1.0, abs=0.01)

    def test_zero_noise_config(self):
        cfg = desk_config(noise_start=0.0, noise_end=0.0)
        assert noise_sigma(0, cfg) == 0.0

    def test_step_range_checked(self):
        cfg = desk_config(iterations=10)
        with pytest.raises(ValueError):
            noise_sigma(10, cfg)

    def test_lr_decay_endpoints(self):
        cfg = desk_config(iterations=101, learning_rate=1e-2, lr_decay=0.1)
        assert learning_rate(0, cfg) == 1e-2
        assert learning_rate(100, cfg) == pytest.approx(1e-3)


class TestTrainStep:
    def test_zero_learning_rate_freezes_params(self, small_scene):
        lf, _ = small_scene
        cfg = desk_config(patch_size=16, patches_per_step=2,
                          learning_rate=0.0, iterations=5)
        model = ndf.init_model(cfg, domain=lf.image_shape[:2])
        opt = init_optimizer(model, cfg)
        before = [a.copy() for a in model.param_arrays()]
        for step in range(3):
            model, opt, loss = train_step(model, lf, opt, cfg, step)
        for a, b in zip(before, model.param_arrays()):
            np.testing.assert_array_equal(a, b)

    def test_identical_runs_identical_losses(self, small_scene):
        lf, _ = small_scene
        cfg = desk_config(patch_size=16, patches_per_step=2, iterations=20)

        def run():
            model = ndf.init_model(cfg, domain=lf.image_shape[:2])
            opt = init_optimizer(model, cfg)
            return [train_step(model, lf, opt, cfg, s)[2] for s in range(20)]

        assert run() == run()

    def test_loss_finite_and_params_updated(self, small_scene):
        lf, _ = small_scene
        cfg = desk_config(patch_size=16, patches_per_step=2, iterations=5)
        model = ndf.init_model(cfg, domain=lf.image_shape[:2])
        opt = init_optimizer(model, cfg)
        before = model.tables.copy()
        _, _, loss = train_step(model, lf, opt, cfg, 0)
        assert np.isfinite(loss)
        assert not np.array_equal(before, model.tables)


class TestReconstruct:
    def test_smoke_and_log(self, small_scene, tmp_path):
        lf, _ = small_scene
        cfg = desk_config(patch_size=16, patches_per_step=2, iterations=12,
                          log_interval=5)
        model, dmap, log = reconstruct(lf, cfg)
        assert dmap.shape == lf.image_shape[:2]
        assert [r["step"] for r in log] == [0, 5, 10, 11]
        assert all(np.isfinite(r["loss8"]) and np.isfinite(r["loss6"])
                   for r in log)
        path = tmp_path / "log.csv"
        write_log_csv(log, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,loss8,loss6,sigma,lr"
        assert len(lines) == len(log) + 1

    def test_grayscale_toggle(self, small_scene):
        lf, _ = small_scene
        cfg = desk_config(patch_size=16, patches_per_step=1, iterations=2,
                          grayscale=True)
        model, dmap, _ = reconstruct(lf, cfg)
        assert np.all(np.isfinite(dmap.values))

    def test_checkpoint_render_round_trip(self, small_scene, tmp_path):
        lf, _ = small_scene
        cfg = desk_config(patch_size=16, patches_per_step=2, iterations=30)
        model, dmap, _ = reconstruct(lf, cfg)
        path = tmp_path / "ck.npz"
        ndf.save_checkpoint(model, path)
        again = ndf.render_grid(ndf.load_checkpoint(path), *dmap.shape)
        np.testing.assert_array_equal(again.values, dmap.values)


class TestDivergence:
    def test_runaway_field_reported(self, small_scene):
        from ndfield.errors import DivergenceError
        lf, _ = small_scene
        cfg = desk_config(patch_size=16, patches_per_step=2, iterations=60,
                          learning_rate=1e5, noise_start=0.0, noise_end=0.0)
        with pytest.raises(DivergenceError, match="step"):
            reconstruct(lf, cfg)


class TestGradCheck:
    def test_tiny_model_full_loss(self, tiny_scene):
        lf, _ = tiny_scene
        report = grad_check(tiny_config(), lf)
        assert set(report) == {"hash_features", "mlp_weights", "mlp_biases"}
        assert max(report.values()) < 1e-3

    def test_tv_only_smooth_path(self, tiny_scene):
        lf, _ = tiny_scene
        report = grad_check(tiny_config(), lf, eps=1e-5, tv_only=True)
        assert max(report.values()) < 1e-6
