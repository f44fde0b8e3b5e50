"""Shared helpers for building small simulated trials."""

import numpy as np
import pytest

from onebitsync.channels import GaussianChannelParams, sample_gaussian_channel
from onebitsync.model import (
    ComplexModelInstance,
    SystemDims,
    TrainingBlock,
    realstack,
    simulate_observation,
    vec,
)


def simulated_trial(n_t=4, n_r=4, n_p=64, cfo=2 * np.pi * 0.0415, snr_db=10.0,
                    sigma_h_sq=0.5, seed=0):
    """One full synthetic trial: returns (instance, Y, stacked y vector)."""
    dims = SystemDims(n_t=n_t, n_r=n_r, n_p=n_p)
    training = TrainingBlock.random_qpsk(n_t, n_p, rng=seed)
    h = sample_gaussian_channel(dims, GaussianChannelParams(sigma_h_sq), seed=seed + 1)
    b = training.entries * np.exp(1j * cfo * np.arange(n_p))[None, :]
    signal_sq = np.linalg.norm(h @ b) ** 2
    noise_var = signal_sq / (2 * n_r * n_p * 10 ** (snr_db / 10))
    inst = ComplexModelInstance(dims, training, h, cfo, noise_var)
    obs = simulate_observation(inst, seed + 2)
    return inst, obs, realstack(vec(obs))


@pytest.fixture
def small_trial():
    return simulated_trial()
