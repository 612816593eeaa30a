import numpy as np
import pytest
import torch

from hilc.env import EnvConfig, SimEnv


@pytest.fixture(autouse=True)
def _single_thread_torch():
    torch.set_num_threads(2)


@pytest.fixture
def env_config():
    return EnvConfig()


@pytest.fixture
def env(env_config):
    return SimEnv(env_config)


@pytest.fixture
def quiet_config():
    """Noise-free environment for exact-geometry tests."""
    return EnvConfig(action_noise_std=0.0)


@pytest.fixture
def quiet_env(quiet_config):
    return SimEnv(quiet_config)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Ten mistake-heavy episodes on disk, shared across test modules."""
    from hilc.pipeline import generate_and_save_dataset

    out = tmp_path_factory.mktemp("data") / "tiny"
    generate_and_save_dataset(EnvConfig(), out, 10, mistake_rate=0.5, seed_start=0)
    return out


@pytest.fixture(scope="session")
def tiny_store(tiny_dataset):
    from hilc.data import EpisodeStore

    return EpisodeStore(tiny_dataset)


def rollout_random(env, seed, n_steps, action_seed=0):
    """Seeded random action sequence; returns the final state."""
    from hilc.env import Action

    rng = np.random.default_rng(action_seed)
    env.reset(seed)
    for _ in range(n_steps):
        env.step(Action(*rng.uniform(-1, 1, 2), float(rng.random())))
    return env.state
