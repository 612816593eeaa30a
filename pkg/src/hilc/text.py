"""Deterministic text embeddings and the command catalog.

Commands are embedded by hashing character n-grams (n=3..5) of the
normalized string into a fixed bucket space, projecting the bucket counts
through a seeded random matrix, and L2-normalizing. This is a pure function
of the string: stable across processes and machines, and lexically similar
strings land near each other, which is what the cosine-similarity training
objective exploits.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import string
from dataclasses import dataclass

import numpy as np

from hilc.errors import DataFormatError, InputError

EMBED_DIM = 128
_N_BUCKETS = 4096
_NGRAM_RANGE = (3, 5)
_PROJECTION_SEED = 20240117
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)

_projection: np.ndarray | None = None


def _projection_matrix() -> np.ndarray:
    global _projection
    if _projection is None:
        rng = np.random.default_rng(_PROJECTION_SEED)
        _projection = rng.standard_normal((_N_BUCKETS, EMBED_DIM)).astype(np.float64)
        _projection /= np.sqrt(EMBED_DIM)
    return _projection


def normalize_text(text: str) -> str:
    text = text.lower().translate(_PUNCT_TABLE)
    return re.sub(r"\s+", " ", text).strip()


def _bucket(ngram: str) -> int:
    digest = hashlib.blake2b(ngram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % _N_BUCKETS


@dataclass(frozen=True)
class CommandEmbedding:
    vector: np.ndarray  # (EMBED_DIM,) float64, unit L2 norm

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    def cosine(self, other: "CommandEmbedding") -> float:
        return float(np.dot(self.vector, other.vector))


def encode(text: str) -> CommandEmbedding:
    norm = normalize_text(text)
    if not norm:
        raise InputError(f"cannot encode empty command {text!r}")
    padded = f" {norm} "
    counts = np.zeros(_N_BUCKETS, dtype=np.float64)
    for n in range(_NGRAM_RANGE[0], _NGRAM_RANGE[1] + 1):
        for i in range(len(padded) - n + 1):
            counts[_bucket(padded[i : i + n])] += 1.0
    vec = counts @ _projection_matrix()
    vec /= np.linalg.norm(vec)
    return CommandEmbedding(vec)


class CommandCatalog:
    """Ordered set of unique dataset commands with embeddings and counts."""

    def __init__(self, entries: list[tuple[str, CommandEmbedding, int]]):
        self.entries = sorted(entries, key=lambda e: e[0])
        self._index = {cmd: i for i, (cmd, _, _) in enumerate(self.entries)}
        if len(self._index) != len(self.entries):
            raise InputError("duplicate command strings in catalog")
        self._check_collisions()

    def _check_collisions(self) -> None:
        if len(self.entries) < 2:
            return
        mat = self.matrix()
        sims = mat @ mat.T
        np.fill_diagonal(sims, 0.0)
        i, j = np.unravel_index(np.argmax(sims), sims.shape)
        if sims[i, j] > 1.0 - 1e-9:
            raise InputError(
                f"embedding collision between {self.entries[i][0]!r} "
                f"and {self.entries[j][0]!r}"
            )

    @classmethod
    def from_commands(cls, commands: list[str]) -> "CommandCatalog":
        if not commands:
            raise InputError("catalog needs at least one command")
        counts: dict[str, int] = {}
        for c in commands:
            counts[c] = counts.get(c, 0) + 1
        return cls([(c, encode(c), n) for c, n in counts.items()])

    @classmethod
    def from_episodes(cls, episodes) -> "CommandCatalog":
        commands = [seg.command for ep in episodes for seg in ep.segments]
        return cls.from_commands(commands)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, command: str) -> bool:
        return command in self._index

    def commands(self) -> list[str]:
        return [cmd for cmd, _, _ in self.entries]

    def index_of(self, command: str) -> int:
        if command not in self._index:
            raise InputError(f"command not in catalog: {command!r}")
        return self._index[command]

    def matrix(self) -> np.ndarray:
        """(K, d) matrix of catalog embeddings, row order = entry order."""
        return np.stack([emb.vector for _, emb, _ in self.entries])

    def extended(self, commands: list[str]) -> "CommandCatalog":
        """Catalog with extra commands merged in (counts accumulated)."""
        counts = {cmd: n for cmd, _, n in self.entries}
        for c in commands:
            counts[c] = counts.get(c, 0) + 1
        return CommandCatalog([(c, encode(c), n) for c, n in counts.items()])

    def nearest(self, embedding: CommandEmbedding) -> tuple[str, float]:
        sims = self.matrix() @ embedding.vector
        i = int(np.argmax(sims))
        return self.entries[i][0], float(sims[i])

    # -- serialization -----------------------------------------------------

    def save(self, path) -> None:
        payload = {
            "version": 1,
            "dim": EMBED_DIM,
            "entries": [
                {
                    "command": cmd,
                    "count": n,
                    "vector": base64.b64encode(
                        np.asarray(emb.vector, dtype=np.float64).tobytes()
                    ).decode("ascii"),
                }
                for cmd, emb, n in self.entries
            ],
        }
        with open(path, "w") as f:
            json.dump(payload, f)

    @classmethod
    def load(cls, path) -> "CommandCatalog":
        with open(path) as f:
            payload = json.load(f)
        if payload.get("version") != 1:
            raise DataFormatError(f"unsupported catalog version in {path}")
        entries = []
        for e in payload["entries"]:
            vec = np.frombuffer(base64.b64decode(e["vector"]), dtype=np.float64)
            entries.append((e["command"], CommandEmbedding(vec), e["count"]))
        return cls(entries)
