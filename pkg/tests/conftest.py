import numpy as np
import pytest

from ndfield.lfdata import SceneSpec, synth_lightfield
from ndfield.optim import ReconstructionConfig


def desk_config(**overrides):
    """Small-network config used by the desk-scale training tests."""
    base = dict(levels=6, log2_table_size=13, features=2, mlp_hidden=64,
                patch_size=32, patches_per_step=4, iterations=2000,
                learning_rate=1e-2, lr_decay=0.1, alpha=1.0, beta=1.0,
                noise_start=1.0, noise_end=1e-2, noise_fraction=0.5, seed=0)
    base.update(overrides)
    return ReconstructionConfig(**base)


def tiny_config(**overrides):
    """Tiny model for gradient checks: L=2, T=2^6, hidden=8."""
    base = dict(levels=2, log2_table_size=6, features=2, mlp_hidden=8,
                res_min=4, res_max=8, patch_size=16, patches_per_step=1,
                iterations=10, alpha=1.0, beta=1.0, charbonnier_eps=1e-2,
                noise_start=0.0, noise_end=0.0, seed=0)
    base.update(overrides)
    return ReconstructionConfig(**base)


@pytest.fixture(scope="session")
def tiny_scene():
    spec = SceneSpec("constant_plane", d0=0.8, texture_seed=5)
    return synth_lightfield(spec, 16, 16, 3, 3)


@pytest.fixture(scope="session")
def small_scene():
    spec = SceneSpec("constant_plane", d0=1.2, texture_seed=11)
    return synth_lightfield(spec, 48, 48, 3, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
