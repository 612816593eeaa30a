"""Skill-segmented episodes and the on-disk dataset format.

Layout: ``dataset/<name>/episode_<k>/`` containing ``meta.json`` (segments,
seed, outcome; versioned), ``obs.bin`` and ``act.bin`` (raw arrays behind a
small self-describing header). Writes are atomic per episode directory.
"""

from __future__ import annotations

import enum
import json
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hilc.env import Action, Observation
from hilc.errors import DataFormatError, InputError, SchemaVersionError

META_VERSION = 1
_BIN_MAGIC = b"HILCBIN1"


class SegmentFlag(str, enum.Enum):
    INSTRUCTION = "instruction"
    CORRECTION = "correction"


@dataclass(frozen=True)
class SkillSegment:
    command: str
    flag: SegmentFlag
    start_t: int  # inclusive action-step index
    end_t: int    # exclusive

    def __post_init__(self):
        if not self.command:
            raise InputError("segment command must be non-empty")
        if not self.start_t < self.end_t:
            raise InputError(
                f"segment span invalid: [{self.start_t}, {self.end_t})"
            )

    def __len__(self) -> int:
        return self.end_t - self.start_t


@dataclass
class Episode:
    observations: list           # T Observations
    actions: list                # T-1 Actions
    segments: list               # ordered SkillSegments tiling [0, T-1)
    env_seed: int
    outcome: list                # stage_status at the final state

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if len(self.actions) != len(self.observations) - 1:
            raise InputError(
                f"{len(self.actions)} actions vs {len(self.observations)} observations"
            )
        cursor = 0
        for seg in self.segments:
            if seg.start_t != cursor:
                raise InputError(
                    f"segments must tile the episode; gap/overlap at step {cursor}"
                )
            cursor = seg.end_t
        if self.segments and cursor != len(self.actions):
            raise InputError("segments do not cover all action steps")

    def __len__(self) -> int:
        return len(self.actions)

    def segment_at(self, t: int) -> SkillSegment:
        for seg in self.segments:
            if seg.start_t <= t < seg.end_t:
                return seg
        raise InputError(f"step {t} outside episode")

    def images_array(self) -> np.ndarray:
        return np.stack([np.stack(o.images) for o in self.observations])

    def proprio_array(self) -> np.ndarray:
        return np.stack([o.proprio for o in self.observations])

    def actions_array(self) -> np.ndarray:
        return np.stack([a.as_array() for a in self.actions])


@dataclass(frozen=True)
class DatasetStats:
    n_episodes: int
    n_segments: int
    n_unique_commands: int
    n_commands_ge3: int


def dataset_stats(episodes) -> DatasetStats:
    episodes = list(episodes)
    if not episodes:
        raise InputError("dataset_stats needs at least one episode")
    counts: dict[str, int] = {}
    n_segments = 0
    for ep in episodes:
        for seg in ep.segments:
            n_segments += 1
            counts[seg.command] = counts.get(seg.command, 0) + 1
    return DatasetStats(
        n_episodes=len(episodes),
        n_segments=n_segments,
        n_unique_commands=len(counts),
        n_commands_ge3=sum(1 for n in counts.values() if n >= 3),
    )


# -- mistake filtering -----------------------------------------------------


def filter_segments(segments: list) -> list:
    """Drop each segment that immediately precedes a correction.

    Adjacency is judged by original step spans (pred.end_t == corr.start_t),
    so the rule is idempotent: once the predecessor is gone the spans are no
    longer adjacent and a second pass changes nothing.
    """
    drop_ends = {seg.start_t for seg in segments if seg.flag == SegmentFlag.CORRECTION}
    return [seg for seg in segments if seg.end_t not in drop_ends]


def _with_segments(ep: Episode, segments: list) -> Episode:
    # __post_init__'s tiling check would reject filtered episodes, so the
    # copy is assembled without re-validation.
    new = object.__new__(Episode)
    new.observations = ep.observations
    new.actions = ep.actions
    new.segments = segments
    new.env_seed = ep.env_seed
    new.outcome = ep.outcome
    return new


def filter_for_lowlevel(episodes) -> list:
    """Per-episode segment filtering for low-level training."""
    return [_with_segments(ep, filter_segments(ep.segments)) for ep in episodes]


# -- binary array files ----------------------------------------------------


def write_arrays(path, arrays: dict) -> None:
    """Write named arrays to one file with a self-describing header."""
    header = {
        "arrays": [
            {"name": name, "dtype": str(a.dtype), "shape": list(a.shape)}
            for name, a in arrays.items()
        ]
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_BIN_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for a in arrays.values():
            f.write(np.ascontiguousarray(a).tobytes())


def read_arrays(path, mmap: bool = False) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            magic = f.read(len(_BIN_MAGIC))
            if magic != _BIN_MAGIC:
                raise DataFormatError(f"{path}: bad magic, not a hilc binary file")
            (hlen,) = struct.unpack("<I", f.read(4))
            header = json.loads(f.read(hlen).decode("utf-8"))
            offset = len(_BIN_MAGIC) + 4 + hlen
            out = {}
            for spec in header["arrays"]:
                dtype = np.dtype(spec["dtype"])
                shape = tuple(spec["shape"])
                nbytes = dtype.itemsize * int(np.prod(shape))
                if mmap:
                    out[spec["name"]] = np.memmap(
                        path, dtype=dtype, mode="r", offset=offset, shape=shape
                    )
                    offset += nbytes
                else:
                    buf = f.read(nbytes)
                    if len(buf) != nbytes:
                        raise DataFormatError(f"{path}: truncated array {spec['name']}")
                    out[spec["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape)
                    offset += nbytes
            if mmap:
                end = os.path.getsize(path)
                if offset > end:
                    raise DataFormatError(f"{path}: truncated file")
            return out
    except (struct.error, json.JSONDecodeError, ValueError) as e:
        raise DataFormatError(f"{path}: corrupt file ({e})") from e


# -- episode directories ---------------------------------------------------


def _segments_to_json(segments) -> list:
    return [
        {
            "command": s.command,
            "flag": s.flag.value,
            "start_t": s.start_t,
            "end_t": s.end_t,
        }
        for s in segments
    ]


def segments_from_json(raw) -> list:
    return [
        SkillSegment(s["command"], SegmentFlag(s["flag"]), s["start_t"], s["end_t"])
        for s in raw
    ]


def save_episode(ep: Episode, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=path.parent, prefix=".tmp_ep_"))
    try:
        meta = {
            "version": META_VERSION,
            "env_seed": ep.env_seed,
            "outcome": [bool(b) for b in ep.outcome],
            "n_steps": len(ep.actions),
            "segments": _segments_to_json(ep.segments),
        }
        with open(tmp / "meta.json", "w") as f:
            json.dump(meta, f, indent=1)
        write_arrays(
            tmp / "obs.bin",
            {"images": ep.images_array(), "proprio": ep.proprio_array()},
        )
        write_arrays(tmp / "act.bin", {"actions": ep.actions_array()})
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


def load_meta(path) -> dict:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise DataFormatError(f"missing {meta_path}")
    try:
        with open(meta_path) as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{meta_path}: corrupt json ({e})") from e
    if meta.get("version") != META_VERSION:
        raise SchemaVersionError(
            f"{meta_path}: version {meta.get('version')} != {META_VERSION}"
        )
    return meta


def load_episode(path) -> Episode:
    path = Path(path)
    meta = load_meta(path)
    obs = read_arrays(path / "obs.bin")
    act = read_arrays(path / "act.bin")
    images, proprio, actions = obs["images"], obs["proprio"], act["actions"]
    if images.shape[0] != meta["n_steps"] + 1:
        raise DataFormatError(f"{path}: obs count does not match meta n_steps")
    observations = [
        Observation(images=[images[t, 0], images[t, 1]], proprio=proprio[t], t=t)
        for t in range(images.shape[0])
    ]
    return Episode(
        observations=observations,
        actions=[Action.from_array(a) for a in actions],
        segments=segments_from_json(meta["segments"]),
        env_seed=meta["env_seed"],
        outcome=meta["outcome"],
    )


def episode_dirs(dataset_dir) -> list:
    dataset_dir = Path(dataset_dir)
    dirs = sorted(
        (d for d in dataset_dir.iterdir() if d.is_dir() and d.name.startswith("episode_")),
        key=lambda d: int(d.name.split("_")[1]),
    )
    return dirs


class EpisodeStore:
    """Lazy view over a saved dataset; arrays are memory-mapped on access."""

    def __init__(self, dataset_dir):
        self.dir = Path(dataset_dir)
        self.paths = episode_dirs(self.dir)
        if not self.paths:
            raise InputError(f"no episodes under {self.dir}")
        self.metas = [load_meta(p) for p in self.paths]

    def __len__(self) -> int:
        return len(self.paths)

    def segments(self, i: int) -> list:
        return segments_from_json(self.metas[i]["segments"])

    def arrays(self, i: int) -> dict:
        out = read_arrays(self.paths[i] / "obs.bin", mmap=True)
        out.update(read_arrays(self.paths[i] / "act.bin", mmap=True))
        return out
