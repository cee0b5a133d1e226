import numpy as np
import pytest

from conftest import tiny_config
from ndfield import ndf
from ndfield.errors import DataError
from ndfield.optim import ReconstructionConfig


@pytest.fixture(scope="module")
def default_model():
    return ndf.init_model(ReconstructionConfig(), domain=(512, 512))


@pytest.fixture()
def tiny_model():
    return ndf.init_model(tiny_config(), domain=(16, 16))


class TestInit:
    def test_default_resolutions(self, default_model):
        assert default_model.resolutions.tolist() == [32, 51, 70, 90, 109, 128]

    def test_default_param_count(self, default_model):
        # 6*2^15*2 + (12*256+256) + (256*256+256) + (256*1+1)
        assert ndf.param_count(default_model) == 462_593

    def test_tiny_param_count(self, tiny_model):
        # 2*64*2 + (4*8+8) + (8*8+8) + (8*1+1)
        assert ndf.param_count(tiny_model) == 377

    def test_same_seed_identical(self):
        cfg = tiny_config(seed=42)
        a = ndf.init_model(cfg, domain=(16, 16))
        b = ndf.init_model(cfg, domain=(16, 16))
        np.testing.assert_array_equal(a.tables, b.tables)
        for wa, wb in zip(a.mlp.weights, b.mlp.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_counts_equal_across_models(self):
        a = ndf.init_model(tiny_config(seed=1), domain=(16, 16))
        b = ndf.init_model(tiny_config(seed=2), domain=(16, 16))
        assert ndf.param_count(a) == ndf.param_count(b)

    def test_initial_predictions_small(self, default_model, rng):
        xs = rng.uniform(0, 1, (2000, 2))
        assert np.abs(ndf.predict(default_model, xs)).max() < 0.1

    def test_bad_levels_rejected(self):
        with pytest.raises(ValueError):
            ndf.init_model(tiny_config(levels=0), domain=(16, 16))
        with pytest.raises(ValueError, match="increasing"):
            ndf.init_model(tiny_config(levels=3, res_min=8, res_max=8),
                           domain=(16, 16))

    def test_dense_flag_rule(self):
        # dense indexing exactly when (N+1)^2 <= T
        cfg = tiny_config(levels=2, log2_table_size=6, res_min=7, res_max=8)
        m = ndf.init_model(cfg, domain=(16, 16))
        assert m.dense.tolist() == [True, False]  # 64 <= 64 < 81


class TestEncode:
    def test_corner_feature_exact(self, tiny_model):
        # x on a level's grid corner returns that corner's table row
        m = tiny_model
        for lev, N in enumerate(m.resolutions):
            k = 2
            x = np.array([k / N, k / N])
            feats = ndf.encode(m, x)
            if m.dense[lev]:
                slot = k * (N + 1) + k
            else:
                kk = np.array([k], dtype=np.uint32)
                slot = int((kk * np.uint32(1))[0]
                           ^ (kk * np.uint32(2654435761))[0]) & 63
            np.testing.assert_array_equal(
                feats[lev * 2:(lev + 1) * 2], m.tables[lev, slot])

    def test_purity(self, tiny_model, rng):
        xs = rng.uniform(0, 1, (50, 2))
        np.testing.assert_array_equal(ndf.encode(tiny_model, xs),
                                      ndf.encode(tiny_model, xs))

    def test_output_length(self, default_model):
        feats = ndf.encode(default_model, np.array([0.3, 0.7]))
        assert feats.shape == (12,)  # L*F = 6*2

    def test_out_of_domain_clamped(self, tiny_model):
        lo = ndf.encode(tiny_model, np.array([-0.5, -0.5]))
        np.testing.assert_array_equal(
            lo, ndf.encode(tiny_model, np.array([0.0, 0.0])))

    def test_hash_path_in_range(self):
        cfg = tiny_config(levels=2, log2_table_size=6, res_min=50,
                          res_max=100)
        m = ndf.init_model(cfg, domain=(16, 16))
        assert not m.dense.any()
        rng = np.random.default_rng(0)
        feats = ndf.encode(m, rng.uniform(0, 1, (500, 2)))
        assert np.all(np.isfinite(feats))


class TestPredict:
    def test_batch_shape(self, tiny_model, rng):
        xs = rng.uniform(0, 1, (17, 2))
        assert ndf.predict(tiny_model, xs).shape == (17,)

    def test_permutation_equivariant(self, tiny_model, rng):
        xs = rng.uniform(0, 1, (40, 2))
        perm = rng.permutation(40)
        np.testing.assert_array_equal(ndf.predict(tiny_model, xs)[perm],
                                      ndf.predict(tiny_model, xs[perm]))

    def test_deterministic(self, tiny_model, rng):
        xs = rng.uniform(0, 1, (40, 2))
        np.testing.assert_array_equal(ndf.predict(tiny_model, xs),
                                      ndf.predict(tiny_model, xs))


class TestBackward:
    def test_zero_cotangent(self, tiny_model, rng):
        xs = rng.uniform(0, 1, (20, 2))
        g = ndf.model_backward(tiny_model, xs, np.zeros(20))
        assert not g.tables.any()
        assert not any(w.any() for w in g.weights)

    def test_linearity(self, tiny_model, rng):
        xs = rng.uniform(0, 1, (20, 2))
        cot = rng.normal(size=20)
        g1 = ndf.model_backward(tiny_model, xs, cot)
        g2 = ndf.model_backward(tiny_model, xs, 2.0 * cot)
        np.testing.assert_allclose(g2.tables, 2.0 * g1.tables, atol=1e-12)
        for a, b in zip(g1.weights, g2.weights):
            np.testing.assert_allclose(b, 2.0 * a, atol=1e-12)

    def test_untouched_slots_zero(self, tiny_model):
        xs = np.array([[0.1, 0.1]])
        g = ndf.model_backward(tiny_model, xs, np.ones(1))
        # one point touches at most 4 corners per level
        assert (np.abs(g.tables[0]).sum(axis=1) > 0).sum() <= 4

    def test_matches_finite_differences(self, rng):
        # tiny model (L=2, N={4,8}, T=2^6, hidden=8) against central FD.
        # Biases are shifted so no pre-activation sits within an eps-probe
        # of the LeakyReLU kink, where central differences are meaningless;
        # alternating signs keep both activation branches exercised.
        cfg = tiny_config(seed=3)
        m = ndf.init_model(cfg, domain=(16, 16))
        m.tables[:] = rng.uniform(-0.5, 0.5, m.tables.shape)
        xs = rng.uniform(0, 1, (40, 2))
        cot = rng.normal(size=40)
        signs = np.where(np.arange(cfg.mlp_hidden) % 2 == 0, 1.0, -1.0)
        z1 = ndf.encode(m, xs) @ m.mlp.weights[0]
        m.mlp.biases[0][:] = np.where(signs > 0, 0.2 - z1.min(axis=0),
                                      -0.2 - z1.max(axis=0))
        a1 = np.where(z1 + m.mlp.biases[0] >= 0, z1 + m.mlp.biases[0],
                      0.01 * (z1 + m.mlp.biases[0]))
        z2 = a1 @ m.mlp.weights[1]
        m.mlp.biases[1][:] = np.where(signs > 0, 0.2 - z2.min(axis=0),
                                      -0.2 - z2.max(axis=0))
        grads = ndf.model_backward(m, xs, cot)
        eps = 1e-3

        def objective():
            return float(np.dot(ndf.predict(m, xs), cot))

        worst = 0.0
        for p, g in zip(m.param_arrays(), grads.param_arrays()):
            fp, fg = p.reshape(-1), g.reshape(-1)
            for i in range(fp.size):
                keep = fp[i]
                fp[i] = keep + eps
                up = objective()
                fp[i] = keep - eps
                dn = objective()
                fp[i] = keep
                fd = (up - dn) / (2 * eps)
                worst = max(worst, abs(fg[i] - fd)
                            / max(abs(fg[i]), abs(fd), 1e-6))
        assert worst < 1e-3

    def test_cotangent_shape_checked(self, tiny_model, rng):
        xs = rng.uniform(0, 1, (20, 2))
        with pytest.raises(ValueError, match="shape"):
            ndf.model_backward(tiny_model, xs, np.zeros(5))


class TestRender:
    def test_matches_predict_at_training_resolution(self, tiny_model):
        H = Wd = 16
        dmap = ndf.render_grid(tiny_model, H, Wd)
        cx = (np.arange(Wd) + 0.5) / Wd
        cy = (np.arange(H) + 0.5) / H
        xs = np.column_stack([np.tile(cx, H), np.repeat(cy, Wd)])
        expect = ndf.predict(tiny_model, xs).reshape(H, Wd)
        np.testing.assert_array_equal(dmap.values,
                                      expect.astype(np.float32))

    def test_single_pixel_render(self, tiny_model):
        dmap = ndf.render_grid(tiny_model, 1, 1)
        expect = ndf.predict(tiny_model, np.array([0.5, 0.5]))
        assert dmap.values[0, 0] == np.float32(expect)

    def test_nonsquare_render(self, tiny_model, tmp_path):
        from ndfield.lfdata import read_pfm, write_pfm
        dmap = ndf.render_grid(tiny_model, 6, 20)
        assert dmap.values.shape == (6, 20)
        expect = ndf.predict(tiny_model,
                             np.array([[(3 + 0.5) / 20, (2 + 0.5) / 6]]))
        assert dmap.values[2, 3] == np.float32(expect[0])
        path = tmp_path / "wide.pfm"
        write_pfm(dmap, path)
        np.testing.assert_array_equal(read_pfm(path).values, dmap.values)

    def test_bad_resolution(self, tiny_model):
        with pytest.raises(ValueError):
            ndf.render_grid(tiny_model, 0, 4)


class TestCheckpoint:
    def test_round_trip_exact(self, tiny_model, tmp_path, rng):
        path = tmp_path / "model.npz"
        ndf.save_checkpoint(tiny_model, path)
        back = ndf.load_checkpoint(path)
        np.testing.assert_array_equal(back.tables, tiny_model.tables)
        for a, b in zip(back.mlp.weights, tiny_model.mlp.weights):
            np.testing.assert_array_equal(a, b)
        assert back.domain == tiny_model.domain
        xs = rng.uniform(0, 1, (50, 2))
        np.testing.assert_array_equal(ndf.predict(back, xs),
                                      ndf.predict(tiny_model, xs))

    def test_corrupt_file_rejected(self, tmp_path):
        path = tmp_path / "junk.npz"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(DataError):
            ndf.load_checkpoint(path)

    def test_foreign_npz_rejected(self, tmp_path):
        path = tmp_path / "other.npz"
        np.savez(path, stuff=np.zeros(3))
        with pytest.raises(DataError):
            ndf.load_checkpoint(path)
