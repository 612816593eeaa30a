"""Language-conditioned low-level controller.

Two small conv towers (global view + gripper crop) modulated by FiLM on the
command embedding, concatenated with proprioception, and an MLP head that
predicts a chunk of future actions. Trained with behavior cloning (mean l1
by default) on filtered skill segments; executed open-loop with a re-plan
every chunk_size steps and an immediate re-plan on command change.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from hilc import text
from hilc.data import EpisodeStore
from hilc.env import Action, Observation
from hilc.errors import InputError, TrainingError

CKPT_VERSION = 1


@dataclass
class LowLevelConfig:
    chunk_size: int = 10
    conv_channels: tuple[int, int, int] = (16, 32, 64)
    hidden_dim: int = 256
    proprio_hidden: int = 32
    learning_rate: float = 1e-3
    loss: str = "l1"                  # "l1" or "l2"
    epochs: int = 4
    batch_size: int = 64
    seed: int = 0
    image_size: int = 64
    embed_dim: int = text.EMBED_DIM
    embedding_mode: str = "text"      # "text" | "onehot" | "constant"
    temporal_ensemble: bool = False   # ACT-style chunk averaging, off by default
    max_samples_per_epoch: int = 40000

    def __post_init__(self):
        if self.chunk_size < 1:
            raise InputError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be > 0")
        if self.loss not in ("l1", "l2"):
            raise InputError(f"loss must be l1 or l2, got {self.loss}")
        if self.embedding_mode not in ("text", "onehot", "constant"):
            raise InputError(f"bad embedding_mode {self.embedding_mode}")


class FilmLayer(nn.Module):
    """Feature-wise affine modulation by a conditioning vector."""

    def __init__(self, cond_dim: int, n_channels: int):
        super().__init__()
        self.gamma = nn.Linear(cond_dim, n_channels)
        self.beta = nn.Linear(cond_dim, n_channels)
        nn.init.zeros_(self.gamma.weight)
        nn.init.ones_(self.gamma.bias)
        nn.init.zeros_(self.beta.weight)
        nn.init.zeros_(self.beta.bias)

    def forward(self, features: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-1] != self.gamma.in_features:
            raise InputError(
                f"conditioning dim {cond.shape[-1]} != {self.gamma.in_features}"
            )
        gamma = self.gamma(cond)
        beta = self.beta(cond)
        if features.dim() == 4:  # (B, C, H, W)
            gamma = gamma[:, :, None, None]
            beta = beta[:, :, None, None]
        return gamma * features + beta


class _ConvTower(nn.Module):
    def __init__(self, channels, cond_dim):
        super().__init__()
        c1, c2, c3 = channels
        self.convs = nn.Sequential(
            nn.Conv2d(3, c1, 5, stride=2, padding=2),
            nn.ReLU(),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c2, c3, 3, stride=2, padding=1),
            nn.ReLU(),
        )
        self.film = FilmLayer(cond_dim, c3)
        self.pool = nn.AdaptiveAvgPool2d(4)
        self.out_dim = c3 * 16

    def forward(self, img, cond):
        h = self.convs(img)
        h = self.film(h, cond)
        return self.pool(h).flatten(1)


class LowLevelNet(nn.Module):
    def __init__(self, config: LowLevelConfig):
        super().__init__()
        self.config = config
        self.towers = nn.ModuleList(
            [_ConvTower(config.conv_channels, config.embed_dim) for _ in range(2)]
        )
        self.proprio_mlp = nn.Sequential(
            nn.Linear(3, config.proprio_hidden), nn.ReLU()
        )
        in_dim = 2 * self.towers[0].out_dim + config.proprio_hidden
        self.head = nn.Sequential(
            nn.Linear(in_dim, config.hidden_dim),
            nn.ReLU(),
            nn.Linear(config.hidden_dim, config.hidden_dim),
            nn.ReLU(),
            nn.Linear(config.hidden_dim, config.chunk_size * 3),
        )

    def forward(self, images: torch.Tensor, proprio: torch.Tensor, emb: torch.Tensor):
        """images (B, 2, 3, H, W) in [0,1]; proprio (B, 3); emb (B, d).

        Returns (B, chunk_size, 3) with dx,dy in [-1,1] and grip in [0,1].
        """
        feats = [self.towers[v](images[:, v], emb) for v in range(2)]
        feats.append(self.proprio_mlp(proprio))
        raw = self.head(torch.cat(feats, dim=1))
        raw = raw.view(-1, self.config.chunk_size, 3)
        move = torch.tanh(raw[..., :2])
        grip = torch.sigmoid(raw[..., 2:3])
        return torch.cat([move, grip], dim=-1)


@dataclass
class ChunkState:
    """Replay position inside the most recent predicted chunk."""

    chunk: Optional[np.ndarray] = None   # (chunk_size, 3)
    index: int = 0
    command: Optional[str] = None


@dataclass
class TrainReport:
    epoch_losses: list
    n_samples: int
    final_loss: float


def _obs_tensors(obs: Observation, image_size: int):
    imgs = np.stack(obs.images).astype(np.float32) / 255.0
    if imgs.shape[1] != image_size or imgs.shape[2] != image_size:
        raise InputError(
            f"observation resolution {imgs.shape[1:3]} != configured {image_size}"
        )
    images = torch.from_numpy(imgs).permute(0, 3, 1, 2).unsqueeze(0)
    proprio = torch.from_numpy(np.asarray(obs.proprio, dtype=np.float32)).unsqueeze(0)
    return images, proprio


class LowLevelPolicy:
    def __init__(self, config: Optional[LowLevelConfig] = None, catalog=None):
        self.config = config or LowLevelConfig()
        if self.config.embedding_mode == "onehot" and catalog is None:
            raise InputError("onehot embedding mode requires a catalog")
        self.catalog = catalog
        torch.manual_seed(self.config.seed)
        self.net = LowLevelNet(self.config)
        if self.config.embedding_mode == "onehot":
            self.index_table = nn.Embedding(len(catalog), self.config.embed_dim)
            self.net.add_module("index_table", self.index_table)
        self.net.eval()

    # -- embeddings --------------------------------------------------------

    def command_embedding(self, command: str) -> torch.Tensor:
        mode = self.config.embedding_mode
        if mode == "constant":
            v = np.full(self.config.embed_dim, 1.0 / np.sqrt(self.config.embed_dim))
            return torch.from_numpy(v.astype(np.float32))
        if mode == "onehot":
            idx = torch.tensor(self.catalog.index_of(command))
            return self.net.index_table(idx)
        return torch.from_numpy(
            text.encode(command).vector.astype(np.float32)
        )

    # -- inference ---------------------------------------------------------

    def forward(self, obs: Observation, emb) -> np.ndarray:
        """One chunk prediction, (chunk_size, 3)."""
        images, proprio = _obs_tensors(obs, self.config.image_size)
        if isinstance(emb, text.CommandEmbedding):
            emb = torch.from_numpy(emb.vector.astype(np.float32))
        emb = emb.reshape(1, -1)
        with torch.no_grad():
            out = self.net(images, proprio, emb)
        return out[0].numpy()

    def act(
        self, obs: Observation, command: str, chunk_state: Optional[ChunkState]
    ) -> tuple[Action, ChunkState]:
        """Chunk replay with re-plan on exhaustion or command change."""
        if (
            chunk_state is None
            or chunk_state.chunk is None
            or chunk_state.index >= self.config.chunk_size
            or chunk_state.command != command
        ):
            emb = self.command_embedding(command)
            chunk_state = ChunkState(
                chunk=self.forward(obs, emb.detach()), index=0, command=command
            )
        a = chunk_state.chunk[chunk_state.index]
        chunk_state.index += 1
        return Action.from_array(a), chunk_state

    # -- training ----------------------------------------------------------

    def loss_fn(self, pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        if self.config.loss == "l1":
            return (pred - target).abs().mean()
        return ((pred - target) ** 2).mean()

    def train_bc(self, samples: "ChunkSampleSet", verbose: bool = False) -> TrainReport:
        if len(samples) == 0:
            raise InputError("empty training set")
        cfg = self.config
        torch.manual_seed(cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        opt = torch.optim.Adam(self.net.parameters(), lr=cfg.learning_rate)
        self.net.train()
        epoch_losses = []
        step = 0
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(samples))
            if len(order) > cfg.max_samples_per_epoch:
                order = order[: cfg.max_samples_per_epoch]
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                images, proprio, embs, targets = samples.batch(idx, self)
                pred = self.net(images, proprio, embs)
                loss = self.loss_fn(pred, targets)
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite loss at step {step}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(float(loss.detach()))
                step += 1
            epoch_losses.append(float(np.mean(losses)))
            if verbose:
                print(f"  lowlevel epoch {epoch}: loss {epoch_losses[-1]:.4f}")
        self.net.eval()
        return TrainReport(epoch_losses, len(samples), epoch_losses[-1])

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        payload = {
            "version": CKPT_VERSION,
            "kind": "lowlevel",
            "config": dataclasses.asdict(self.config),
            "state_dict": self.net.state_dict(),
            "catalog_commands": self.catalog.commands() if self.catalog else None,
            "text_projection_seed": text._PROJECTION_SEED,
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path) -> "LowLevelPolicy":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("version") != CKPT_VERSION or payload.get("kind") != "lowlevel":
            raise InputError(f"not a low-level checkpoint: {path}")
        cfg_dict = dict(payload["config"])
        cfg_dict["conv_channels"] = tuple(cfg_dict["conv_channels"])
        config = LowLevelConfig(**cfg_dict)
        catalog = None
        if payload["catalog_commands"] is not None:
            from hilc.text import CommandCatalog

            catalog = CommandCatalog.from_commands(payload["catalog_commands"])
        policy = cls(config, catalog=catalog)
        policy.net.load_state_dict(payload["state_dict"])
        policy.net.eval()
        return policy


# -- training sample sets --------------------------------------------------


class ChunkSampleSet:
    """(observation, command, action-chunk) samples over a set of episodes.

    Works from in-memory episodes or a saved EpisodeStore; image arrays are
    only touched at batch-assembly time so memmapped datasets stream.
    """

    def __init__(self, chunk_size: int, flat: bool = False):
        self.chunk_size = chunk_size
        self.flat = flat
        self._episodes = []   # (images, proprio, actions) array triples
        self._index = []      # (ep_i, t, seg_start, seg_end, command)
        self._emb_cache: dict[str, torch.Tensor] = {}

    @classmethod
    def from_episodes(cls, episodes: list, chunk_size: int, flat: bool = False):
        s = cls(chunk_size, flat)
        for ep in episodes:
            s._add(ep.images_array(), ep.proprio_array(), ep.actions_array(), ep.segments)
        return s

    @classmethod
    def from_store(
        cls, store: EpisodeStore, chunk_size: int, flat: bool = False,
        segment_lists: Optional[list] = None,
    ):
        s = cls(chunk_size, flat)
        for i in range(len(store)):
            arrays = store.arrays(i)
            segments = (
                segment_lists[i] if segment_lists is not None else store.segments(i)
            )
            s._add(arrays["images"], arrays["proprio"], arrays["actions"], segments)
        return s

    def _add(self, images, proprio, actions, segments) -> None:
        ep_i = len(self._episodes)
        self._episodes.append((images, proprio, actions))
        n = actions.shape[0]
        if self.flat:
            for t in range(n):
                self._index.append((ep_i, t, 0, n, "__task__"))
        else:
            for seg in segments:
                for t in range(seg.start_t, seg.end_t):
                    self._index.append((ep_i, t, seg.start_t, seg.end_t, seg.command))

    def __len__(self) -> int:
        return len(self._index)

    def chunk_target(self, ep_i: int, t: int, seg_end: int) -> np.ndarray:
        _, _, actions = self._episodes[ep_i]
        avail = actions[t : min(t + self.chunk_size, seg_end)]
        if avail.shape[0] < self.chunk_size:
            pad = np.repeat(avail[-1:], self.chunk_size - avail.shape[0], axis=0)
            avail = np.concatenate([avail, pad], axis=0)
        return np.asarray(avail, dtype=np.float32)

    def batch(self, idx, policy: LowLevelPolicy):
        images_l, proprio_l, emb_l, target_l = [], [], [], []
        for i in idx:
            ep_i, t, s0, s1, command = self._index[i]
            images, proprio, actions = self._episodes[ep_i]
            images_l.append(np.asarray(images[t], dtype=np.float32) / 255.0)
            proprio_l.append(np.asarray(proprio[t], dtype=np.float32))
            target_l.append(self.chunk_target(ep_i, t, s1))
            emb_l.append(self._embedding(command, policy))
        images_t = torch.from_numpy(np.stack(images_l)).permute(0, 1, 4, 2, 3)
        proprio_t = torch.from_numpy(np.stack(proprio_l))
        embs = torch.stack(emb_l)
        targets = torch.from_numpy(np.stack(target_l))
        return images_t, proprio_t, embs, targets

    def _embedding(self, command: str, policy: LowLevelPolicy) -> torch.Tensor:
        if policy.config.embedding_mode == "onehot":
            # learned table: must stay in the graph, no caching of values
            return policy.command_embedding(command)
        if command not in self._emb_cache:
            if command == "__task__":
                emb = policy.command_embedding("")  # constant mode ignores text
            else:
                emb = policy.command_embedding(command)
            self._emb_cache[command] = emb
        return self._emb_cache[command]
