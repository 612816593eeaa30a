"""Shared dataset/training plumbing used by the CLI, harness, and tests."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from hilc import data, expert
from hilc.data import EpisodeStore, filter_segments
from hilc.env import EnvConfig, SimEnv
from hilc.highlevel import HighLevelConfig, HighLevelPolicy, HistorySampleSet
from hilc.lowlevel import ChunkSampleSet, LowLevelConfig, LowLevelPolicy
from hilc.text import CommandCatalog


def generate_and_save_dataset(
    env_config: EnvConfig,
    out_dir,
    n_episodes: int,
    mistake_rate: float,
    seed_start: int = 0,
    max_steps: int = 500,
    verbose: bool = False,
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    env = SimEnv(env_config)
    for k in range(n_episodes):
        ep = expert.generate_episode(env, mistake_rate, seed_start + k, max_steps)
        data.save_episode(ep, out_dir / f"episode_{k:05d}")
        if verbose and (k + 1) % 100 == 0:
            print(f"  generated {k + 1}/{n_episodes} episodes")
    env_config.save(out_dir / "env_config.yaml")
    with open(out_dir / "generation.json", "w") as f:
        json.dump(
            {
                "n_episodes": n_episodes,
                "mistake_rate": mistake_rate,
                "seed_start": seed_start,
                "max_steps": max_steps,
            },
            f,
            indent=1,
        )
    return out_dir


def store_catalog(store: EpisodeStore) -> CommandCatalog:
    commands = [
        seg["command"] for meta in store.metas for seg in meta["segments"]
    ]
    return CommandCatalog.from_commands(commands)


def lowlevel_samples(
    store: EpisodeStore, chunk_size: int, filtered: bool = True, flat: bool = False
) -> ChunkSampleSet:
    segment_lists = None
    if filtered and not flat:
        segment_lists = [filter_segments(store.segments(i)) for i in range(len(store))]
    return ChunkSampleSet.from_store(
        store, chunk_size, flat=flat, segment_lists=segment_lists
    )


def highlevel_samples(store: EpisodeStore, config: HighLevelConfig, control_hz: float
                      ) -> HistorySampleSet:
    samples = HistorySampleSet(config, control_hz)
    for i in range(len(store)):
        arrays = store.arrays(i)
        samples.add_episode(
            arrays["images"], store.segments(i), arrays["actions"].shape[0]
        )
    return samples


def train_lowlevel(
    store: EpisodeStore,
    config: Optional[LowLevelConfig] = None,
    filtered: bool = True,
    flat: bool = False,
    catalog: Optional[CommandCatalog] = None,
    verbose: bool = False,
):
    config = config or LowLevelConfig()
    policy = LowLevelPolicy(config, catalog=catalog)
    samples = lowlevel_samples(store, config.chunk_size, filtered=filtered, flat=flat)
    report = policy.train_bc(samples, verbose=verbose)
    return policy, report


def train_highlevel(
    store: EpisodeStore,
    control_hz: float,
    config: Optional[HighLevelConfig] = None,
    catalog: Optional[CommandCatalog] = None,
    verbose: bool = False,
):
    config = config or HighLevelConfig()
    catalog = catalog or store_catalog(store)
    policy = HighLevelPolicy(config, catalog=catalog)
    samples = highlevel_samples(store, config, control_hz)
    report = policy.train(samples, verbose=verbose)
    return policy, report, samples
