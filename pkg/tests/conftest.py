"""Shared fixtures and builders for the test suite."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from maskedvae.masking import MaskedSample
from maskedvae.model import BERNOULLI, MaskedVAE, Variant, tiny_spec

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=30,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def build_tiny_net(variant, likelihood=BERNOULLI, latent_dim=2, image=4,
                   channels=1, init_seed=7, dtype=np.float64) -> MaskedVAE:
    """Small float64 network for oracle and gradient tests."""
    spec = tiny_spec(variant, latent_dim=latent_dim, image=image,
                     likelihood=likelihood, channels=channels)
    return MaskedVAE(spec, init_seed=init_seed, dtype=dtype)


def make_sample(h=4, w=4, c=1, seed=0, on_grid=False, block=2) -> MaskedSample:
    """Random image + block mask; on_grid snaps pixels to the 1/255 levels."""
    gen = np.random.default_rng(seed)
    x = gen.uniform(0.0, 1.0, size=(h, w, c))
    if on_grid:
        x = np.round(x * 255.0) / 255.0
    m = np.ones((h, w), dtype=np.float64)
    r = int(gen.integers(0, h - block + 1))
    col = int(gen.integers(0, w - block + 1))
    m[r : r + block, col : col + block] = 0.0
    return MaskedSample.zero_filled(x, m, label=int(gen.integers(0, 10)))


@pytest.fixture
def tiny_bernoulli_nets():
    """One tiny Bernoulli network per conditioning variant."""
    return {v: build_tiny_net(v) for v in Variant}
