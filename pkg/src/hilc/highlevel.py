"""Instruction-generating policy over observation histories.

A per-frame conv encoder plus sinusoidal slot codes feeds a single
transformer layer; the pooled feature is projected to a unit-norm command
embedding. Training compares that embedding to every catalog command by
cosine similarity, scaled by a learned temperature, under cross-entropy
against the (time-offset) ground-truth command. Decoding is argmax over
the catalog.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from hilc import text
from hilc.errors import InputError, TrainingError

CKPT_VERSION = 1


@dataclass
class HighLevelConfig:
    history_frames: int = 4
    frame_spacing_s: float = 1.0
    embed_dim: int = text.EMBED_DIM
    temperature_init: float = 0.1
    target_offset_s: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 6
    batch_size: int = 64
    seed: int = 0
    image_size: int = 64
    n_views: int = 2
    conv_channels: tuple[int, int, int] = (16, 32, 64)
    hidden_dim: int = 256
    rebalance_cap: float = 10.0
    max_samples_per_epoch: int = 15000
    head_mode: str = "embedding"   # "embedding" | "onehot"

    def __post_init__(self):
        if self.history_frames < 1:
            raise InputError("history_frames must be >= 1")
        if self.frame_spacing_s <= 0:
            raise InputError("frame_spacing_s must be > 0")
        if self.target_offset_s < 0:
            raise InputError("target_offset_s must be >= 0")
        if self.temperature_init <= 0:
            raise InputError("temperature_init must be > 0")
        if self.head_mode not in ("embedding", "onehot"):
            raise InputError(f"bad head_mode {self.head_mode}")
        if self.n_views < 1:
            raise InputError("n_views must be >= 1")


def select_history_steps(t: int, control_hz: float, config: HighLevelConfig) -> list[int]:
    """Step indices of the history frames for a query at step t, oldest first."""
    if t < 0:
        raise InputError("t must be >= 0")
    spacing = max(1, round(config.frame_spacing_s * control_hz))
    steps = [t - j * spacing for j in range(config.history_frames)]
    return sorted(s for s in steps if s >= 0)


def select_history(obs_buffer: list, t: int, control_hz: float, config: HighLevelConfig):
    """History observations from a buffer indexed by step, oldest first."""
    if not obs_buffer:
        raise InputError("empty observation buffer")
    if t >= len(obs_buffer):
        raise InputError(f"step {t} not in buffer of length {len(obs_buffer)}")
    return [obs_buffer[s] for s in select_history_steps(t, control_hz, config)]


def _sinusoid_codes(n_slots: int, dim: int) -> torch.Tensor:
    pos = torch.arange(n_slots, dtype=torch.float32)[:, None]
    i = torch.arange(dim // 2, dtype=torch.float32)[None, :]
    angles = pos / torch.pow(10000.0, 2 * i / dim)
    codes = torch.zeros(n_slots, dim)
    codes[:, 0::2] = torch.sin(angles)
    codes[:, 1::2] = torch.cos(angles)
    return codes


class HighLevelNet(nn.Module):
    def __init__(self, config: HighLevelConfig, n_classes: Optional[int] = None):
        super().__init__()
        self.config = config
        c1, c2, c3 = config.conv_channels
        # Camera views are stacked on the channel axis; the wrist crop makes
        # held-vs-empty gripper states separable, which the top view alone
        # does not show reliably at this resolution.
        self.convs = nn.Sequential(
            nn.Conv2d(3 * config.n_views, c1, 5, stride=2, padding=2),
            nn.ReLU(),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(c2, c3, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(4),
            nn.Flatten(),
            nn.Linear(c3 * 16, config.embed_dim),
        )
        self.mixer = nn.TransformerEncoderLayer(
            d_model=config.embed_dim,
            nhead=4,
            dim_feedforward=config.hidden_dim,
            dropout=0.0,
            batch_first=True,
        )
        out_dim = n_classes if config.head_mode == "onehot" else config.embed_dim
        self.head = nn.Sequential(
            nn.Linear(config.embed_dim, config.hidden_dim),
            nn.ReLU(),
            nn.Linear(config.hidden_dim, out_dim),
        )
        self.log_tau = nn.Parameter(
            torch.tensor(math.log(config.temperature_init), dtype=torch.float32)
        )
        self.register_buffer(
            "slot_codes", _sinusoid_codes(config.history_frames, config.embed_dim)
        )

    @property
    def tau(self) -> torch.Tensor:
        return torch.exp(self.log_tau)

    def forward(self, frames: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        """frames (B, F, 3·n_views, H, W) in [0,1], pad_mask (B, F) True where padded.

        Returns (B, out_dim); unit-norm rows in embedding mode.
        """
        b, f = frames.shape[:2]
        feats = self.convs(frames.reshape(b * f, *frames.shape[2:]))
        feats = feats.reshape(b, f, -1) + self.slot_codes[:f][None]
        mixed = self.mixer(feats, src_key_padding_mask=pad_mask)
        valid = (~pad_mask).float()[:, :, None]
        pooled = (mixed * valid).sum(1) / valid.sum(1).clamp(min=1.0)
        out = self.head(pooled)
        if self.config.head_mode == "embedding":
            out = F.normalize(out, dim=-1)
        return out


def cosine_logits(pred: torch.Tensor, catalog_matrix: torch.Tensor, tau) -> torch.Tensor:
    """logits[i] = cos(pred, catalog_i) / tau. pred need not be unit norm."""
    pred = F.normalize(pred, dim=-1)
    return pred @ catalog_matrix.T / tau


@dataclass
class HLTrainReport:
    epoch_losses: list
    top1_accuracy: float
    n_samples: int


def make_targets(segments, n_steps: int, control_hz: float, config: HighLevelConfig):
    """(step, target command) for every action step of a segmented episode.

    The target is the command of the segment containing t + offset (clamped
    to the last step), so predictions roll over to the next skill as the
    current one ends.
    """
    offset = round(config.target_offset_s * control_hz)
    out = []
    for seg in segments:
        for t in range(seg.start_t, seg.end_t):
            shifted = min(t + offset, n_steps - 1)
            target = None
            for s in segments:
                if s.start_t <= shifted < s.end_t:
                    target = s.command
                    break
            out.append((t, target if target is not None else seg.command))
    return out


class HighLevelPolicy:
    def __init__(
        self,
        config: Optional[HighLevelConfig] = None,
        catalog: Optional[text.CommandCatalog] = None,
    ):
        self.config = config or HighLevelConfig()
        self.catalog = catalog
        if self.config.head_mode == "onehot" and catalog is None:
            raise InputError("onehot head mode requires a catalog at construction")
        torch.manual_seed(self.config.seed)
        n_classes = len(catalog) if self.config.head_mode == "onehot" else None
        self.net = HighLevelNet(self.config, n_classes)
        self.net.eval()

    # -- inference ---------------------------------------------------------

    def _history_tensors(self, history: list):
        if not 1 <= len(history) <= self.config.history_frames:
            raise InputError(
                f"history length {len(history)} not in [1, {self.config.history_frames}]"
            )
        size = self.config.image_size
        frames = []
        for obs in history:
            views = [
                np.asarray(obs.images[v], dtype=np.float32) / 255.0
                for v in range(self.config.n_views)
            ]
            if views[0].shape[0] != size or views[0].shape[1] != size:
                raise InputError(f"frame resolution {views[0].shape[:2]} != {size}")
            frames.append(np.concatenate(views, axis=-1))
        f = len(frames)
        frames_t = torch.from_numpy(np.stack(frames)).permute(0, 3, 1, 2).unsqueeze(0)
        pad = torch.zeros(1, f, dtype=torch.bool)
        return frames_t, pad

    def forward(self, history: list) -> np.ndarray:
        """Unit-norm predicted command embedding for an observation history."""
        frames, pad = self._history_tensors(history)
        with torch.no_grad():
            out = self.net(frames, pad)
        return out[0].numpy()

    def predict_command(self, history: list, catalog=None) -> tuple[str, float]:
        catalog = catalog or self.catalog
        if catalog is None or len(catalog) == 0:
            raise InputError("predict_command needs a non-empty catalog")
        frames, pad = self._history_tensors(history)
        with torch.no_grad():
            pred = self.net(frames, pad)
            if self.config.head_mode == "onehot":
                logits = pred
            else:
                mat = torch.from_numpy(catalog.matrix().astype(np.float32))
                logits = cosine_logits(pred, mat, self.net.tau)
            probs = F.softmax(logits[0], dim=-1)
            i = int(torch.argmax(logits[0]))  # ties -> lowest index
        return catalog.commands()[i], float(probs[i])

    # -- training ----------------------------------------------------------

    def train(
        self,
        samples: "HistorySampleSet",
        catalog: Optional[text.CommandCatalog] = None,
        verbose: bool = False,
    ) -> HLTrainReport:
        if len(samples) == 0:
            raise InputError("empty high-level training set")
        catalog = catalog or self.catalog
        if catalog is None:
            raise InputError("train needs a catalog")
        missing = sorted(set(samples.targets()) - set(catalog.commands()))
        if missing:
            if self.config.head_mode == "onehot":
                raise InputError(
                    f"onehot head cannot grow; unknown commands {missing}"
                )
            catalog = catalog.extended(missing)
        self.catalog = catalog
        cfg = self.config
        torch.manual_seed(cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        if cfg.head_mode == "embedding":
            mat = torch.from_numpy(catalog.matrix().astype(np.float32))
        target_idx = np.array(
            [catalog.index_of(c) for c in samples.target_list], dtype=np.int64
        )
        weights = samples.weights()
        probs = weights / weights.sum()
        opt = torch.optim.Adam(self.net.parameters(), lr=cfg.learning_rate)
        self.net.train()
        epoch_losses = []
        step = 0
        n_draw = min(len(samples), cfg.max_samples_per_epoch)
        for epoch in range(cfg.epochs):
            order = rng.choice(len(samples), size=n_draw, replace=True, p=probs)
            losses = []
            for start in range(0, n_draw, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                frames, pad = samples.batch(idx)
                pred = self.net(frames, pad)
                if cfg.head_mode == "onehot":
                    logits = pred
                else:
                    logits = cosine_logits(pred, mat, self.net.tau)
                loss = F.cross_entropy(logits, torch.from_numpy(target_idx[idx]))
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite loss at step {step}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(float(loss.detach()))
                step += 1
            epoch_losses.append(float(np.mean(losses)))
            if verbose:
                print(f"  highlevel epoch {epoch}: loss {epoch_losses[-1]:.4f}")
        self.net.eval()
        acc = self._training_accuracy(samples, target_idx, rng)
        return HLTrainReport(epoch_losses, acc, len(samples))

    def _training_accuracy(self, samples, target_idx, rng, n_eval: int = 512) -> float:
        idx = rng.choice(len(samples), size=min(n_eval, len(samples)), replace=False)
        correct = 0
        if self.config.head_mode == "embedding":
            mat = torch.from_numpy(self.catalog.matrix().astype(np.float32))
        with torch.no_grad():
            for start in range(0, len(idx), 64):
                sub = idx[start : start + 64]
                frames, pad = samples.batch(sub)
                pred = self.net(frames, pad)
                if self.config.head_mode == "onehot":
                    logits = pred
                else:
                    logits = cosine_logits(pred, mat, self.net.tau)
                correct += int(
                    (logits.argmax(dim=1).numpy() == target_idx[sub]).sum()
                )
        return correct / len(idx)

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        payload = {
            "version": CKPT_VERSION,
            "kind": "highlevel",
            "config": dataclasses.asdict(self.config),
            "state_dict": self.net.state_dict(),
            "catalog_commands": self.catalog.commands() if self.catalog else None,
            "catalog_counts": (
                [n for _, _, n in self.catalog.entries] if self.catalog else None
            ),
            "text_projection_seed": text._PROJECTION_SEED,
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path) -> "HighLevelPolicy":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("version") != CKPT_VERSION or payload.get("kind") != "highlevel":
            raise InputError(f"not a high-level checkpoint: {path}")
        cfg_dict = dict(payload["config"])
        cfg_dict["conv_channels"] = tuple(cfg_dict["conv_channels"])
        config = HighLevelConfig(**cfg_dict)
        catalog = None
        if payload["catalog_commands"] is not None:
            entries = [
                (cmd, text.encode(cmd), n)
                for cmd, n in zip(payload["catalog_commands"], payload["catalog_counts"])
            ]
            catalog = text.CommandCatalog(entries)
        policy = cls(config, catalog=catalog)
        policy.net.load_state_dict(payload["state_dict"])
        policy.net.eval()
        return policy


# -- training sample sets --------------------------------------------------


class HistorySampleSet:
    """(observation history, target command) samples for high-level training.

    Frame arrays stay memmap-backed until batch assembly. Sample weights
    rebalance by inverse source-segment length (capped) so short correction
    segments are not drowned by long task segments.
    """

    def __init__(self, config: HighLevelConfig, control_hz: float):
        self.config = config
        self.control_hz = control_hz
        self._frames = []        # per source: images array (T, V, H, W, 3)
        self._index = []         # (src_i, frame step indices tuple)
        self.target_list = []    # aligned target command strings
        self._seg_len = []       # aligned source-segment length
        self._boost = []         # aligned extra sampling weight

    def add_episode(self, images, segments, n_steps: int) -> None:
        src_i = len(self._frames)
        self._frames.append(images)
        seg_len_at = {}
        for seg in segments:
            for t in range(seg.start_t, seg.end_t):
                seg_len_at[t] = len(seg)
        for t, target in make_targets(segments, n_steps, self.control_hz, self.config):
            steps = select_history_steps(t, self.control_hz, self.config)
            self._index.append((src_i, tuple(steps)))
            self.target_list.append(target)
            self._seg_len.append(seg_len_at[t])
            self._boost.append(1.0)

    def add_correction(self, images, l_user: str, boost: float = 1.0) -> None:
        """images: (T, V, H, W, 3) context buffer ending at the intervention."""
        src_i = len(self._frames)
        self._frames.append(images)
        t_last = images.shape[0] - 1
        steps = select_history_steps(t_last, self.control_hz, self.config)
        self._index.append((src_i, tuple(steps)))
        self.target_list.append(l_user)
        self._seg_len.append(1)
        self._boost.append(boost)

    def shallow_copy(self) -> "HistorySampleSet":
        """Copy sharing frame arrays; safe to extend with corrections."""
        new = HistorySampleSet(self.config, self.control_hz)
        new._frames = list(self._frames)
        new._index = list(self._index)
        new.target_list = list(self.target_list)
        new._seg_len = list(self._seg_len)
        new._boost = list(self._boost)
        return new

    def targets(self):
        return set(self.target_list)

    def weights(self) -> np.ndarray:
        lens = np.asarray(self._seg_len, dtype=np.float64)
        ref = float(np.median(lens))
        base = np.minimum(self.config.rebalance_cap, ref / lens)
        return base * np.asarray(self._boost, dtype=np.float64)

    def __len__(self) -> int:
        return len(self._index)

    def batch(self, idx):
        fmax = self.config.history_frames
        size = self.config.image_size
        nv = self.config.n_views
        b = len(idx)
        frames = torch.zeros(b, fmax, 3 * nv, size, size)
        pad = torch.ones(b, fmax, dtype=torch.bool)
        for row, i in enumerate(idx):
            src_i, steps = self._index[i]
            images = self._frames[src_i]
            for slot, t in enumerate(steps):
                img = np.concatenate(
                    [np.asarray(images[t, v], dtype=np.float32) / 255.0 for v in range(nv)],
                    axis=-1,
                )
                frames[row, slot] = torch.from_numpy(img).permute(2, 0, 1)
                pad[row, slot] = False
        return frames, pad
