"""Hierarchical rollout loop with live language overrides.

Each control step: drain pending user events, honor the intervention state
machine (autonomous / stopped / override), re-query the instruction policy
at fixed intervals while autonomous, and execute the active command with
the low-level policy. Every user command is recorded together with the
observations from the seconds leading up to it.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hilc.data import write_arrays, read_arrays
from hilc.env import Action, Observation, SimEnv
from hilc.errors import DataFormatError, InputError
from hilc.highlevel import HighLevelConfig, HighLevelPolicy, select_history
from hilc.lowlevel import ChunkState, LowLevelPolicy
from hilc.text import normalize_text

STOP_WORDS = frozenset({"stop", "pardon", "wait"})
RESUME_WORDS = frozenset({"resume", "continue", "go on", "carry on"})

_DEFAULT_HL_CONFIG = HighLevelConfig()


class Mode(str, enum.Enum):
    AUTONOMOUS = "autonomous"
    STOPPED = "stopped"
    OVERRIDE = "override"


class EventKind(str, enum.Enum):
    STOP = "stop"
    RESUME = "resume"
    COMMAND = "command"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    text: Optional[str] = None  # set for COMMAND events

    def __post_init__(self):
        if self.kind == EventKind.COMMAND and not self.text:
            raise InputError("command event requires text")


def classify_utterance(utterance: str) -> Event:
    norm = normalize_text(utterance)
    if norm in STOP_WORDS:
        return Event(EventKind.STOP)
    if norm in RESUME_WORDS:
        return Event(EventKind.RESUME)
    return Event(EventKind.COMMAND, utterance)


@dataclass
class InterventionState:
    mode: Mode = Mode.AUTONOMOUS
    active_command: Optional[str] = None
    override_deadline_t: Optional[int] = None


def apply_event(
    state: InterventionState, event: Event, t: int, query_interval_steps: int
) -> tuple[InterventionState, bool]:
    """Transition on one event. Returns (new state, applied?).

    resume while autonomous is a logged no-op; all other transitions in the
    table are legal from any mode.
    """
    if event.kind == EventKind.STOP:
        return InterventionState(Mode.STOPPED, None, None), True
    if event.kind == EventKind.RESUME:
        if state.mode == Mode.AUTONOMOUS:
            return state, False
        return InterventionState(Mode.AUTONOMOUS, None, None), True
    return (
        InterventionState(Mode.OVERRIDE, event.text, t + query_interval_steps),
        True,
    )


@dataclass
class CorrectionDatapoint:
    history: list            # Observations over [t - context, t]
    l_user: str
    episode_id: int
    t_intervene: int

    def images_array(self) -> np.ndarray:
        return np.stack([np.stack(o.images) for o in self.history])


@dataclass
class RolloutConfig:
    query_interval_s: float = 4.0
    context_s: float = 2.0
    # tight enough that wasted commands cost task success; skills need
    # roughly 20-30 steps each, so the nominal task fits with ~2x slack
    max_steps: int = 280

    def query_steps(self, control_hz: float) -> int:
        return max(1, round(self.query_interval_s * control_hz))

    def context_steps(self, control_hz: float) -> int:
        return round(self.context_s * control_hz)


@dataclass
class EpisodeLog:
    env_seed: int
    actions: list = field(default_factory=list)           # per-step [dx, dy, grip]
    command_log: list = field(default_factory=list)       # (t, source, command|None)
    query_log: list = field(default_factory=list)         # (t, command, confidence)
    intervention_log: list = field(default_factory=list)  # (t, event kind, text, applied)
    final_stage_status: list = field(default_factory=list)
    n_steps: int = 0

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "env_seed": self.env_seed,
            "n_steps": self.n_steps,
            "actions": [[float(x) for x in a] for a in self.actions],
            "command_log": [list(e) for e in self.command_log],
            "query_log": [[e[0], e[1], float(e[2])] for e in self.query_log],
            "intervention_log": [list(e) for e in self.intervention_log],
            "final_stage_status": [bool(b) for b in self.final_stage_status],
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "EpisodeLog":
        try:
            with open(path) as f:
                d = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise DataFormatError(f"cannot read episode log {path}: {e}") from e
        log = cls(env_seed=d["env_seed"])
        log.n_steps = d["n_steps"]
        log.actions = d["actions"]
        log.command_log = [tuple(e) for e in d["command_log"]]
        log.query_log = [tuple(e) for e in d["query_log"]]
        log.intervention_log = [tuple(e) for e in d["intervention_log"]]
        log.final_stage_status = d["final_stage_status"]
        return log


class ScriptedIntervener:
    """Issues pre-scheduled utterances at fixed steps (testing/replay)."""

    def __init__(self, schedule: dict):
        self.schedule = dict(schedule)

    def poll(self, t, sim_state, executed_command, intervention_state):
        utterance = self.schedule.get(t)
        return [utterance] if utterance is not None else []


def run_episode(
    env: SimEnv,
    hl_policy: Optional[HighLevelPolicy],
    ll_policy: LowLevelPolicy,
    intervener=None,
    cfg: Optional[RolloutConfig] = None,
    seed: int = 0,
    event_queue=None,
    frame_callback=None,
    correction_callback=None,
) -> tuple[EpisodeLog, list]:
    """One hierarchical rollout. Returns (log, correction datapoints).

    hl_policy may be a HighLevelPolicy or any object with a
    ``predict_command(history)`` method (e.g. a scripted schedule).
    intervener: optional object with ``poll(t, sim_state, executed_command,
    intervention_state) -> list of utterance strings``.
    event_queue: optional queue.Queue of utterance strings drained each step.
    correction_callback: optional, called with each new CorrectionDatapoint.
    """
    cfg = cfg or RolloutConfig()
    hz = env.config.control_hz
    query_steps = cfg.query_steps(hz)
    context_steps = cfg.context_steps(hz)

    state, obs = env.reset(seed)
    obs_buffer = [obs]
    istate = InterventionState()
    log = EpisodeLog(env_seed=seed)
    corrections: list = []
    chunk_state: Optional[ChunkState] = None
    hl_command: Optional[str] = None
    last_executed: Optional[str] = None

    for t in range(cfg.max_steps):
        # 1. drain user events (queue first, then synchronous intervener)
        utterances = []
        if event_queue is not None:
            while not event_queue.empty():
                utterances.append(event_queue.get_nowait())
        if intervener is not None:
            utterances.extend(
                intervener.poll(t, env.state, last_executed, istate)
            )
        for utterance in utterances:
            event = classify_utterance(utterance)
            istate, applied = apply_event(istate, event, t, query_steps)
            log.intervention_log.append(
                (t, event.kind.value, event.text, applied)
            )
            if event.kind == EventKind.COMMAND:
                lo = max(0, t - context_steps)
                dp = CorrectionDatapoint(
                    history=list(obs_buffer[lo : t + 1]),
                    l_user=event.text,
                    episode_id=seed,
                    t_intervene=t,
                )
                corrections.append(dp)
                if correction_callback is not None:
                    correction_callback(dp)

        # 2. query boundary: override expiry, then autonomous re-query
        if t % query_steps == 0:
            if (
                istate.mode == Mode.OVERRIDE
                and istate.override_deadline_t is not None
                and t >= istate.override_deadline_t
            ):
                istate = InterventionState(Mode.AUTONOMOUS, None, None)
                log.intervention_log.append((t, "override_expired", None, True))
            if istate.mode == Mode.AUTONOMOUS and hl_policy is not None:
                history = select_history(
                    obs_buffer, t, hz, getattr(hl_policy, "config", None)
                    or _DEFAULT_HL_CONFIG
                )
                command, confidence = hl_policy.predict_command(history)
                hl_command = command
                log.query_log.append((t, command, confidence))

        # 3. select command per the override rule
        if istate.mode == Mode.STOPPED:
            action = Action(0.0, 0.0, env.state.gripper_open)
            log.command_log.append((t, "hold", None))
        else:
            if istate.mode == Mode.OVERRIDE:
                command, source = istate.active_command, "user"
            else:
                command, source = hl_command, "hl"
            if command is None:  # no high-level policy and no override
                action = Action(0.0, 0.0, env.state.gripper_open)
                log.command_log.append((t, "hold", None))
            else:
                action, chunk_state = ll_policy.act(
                    obs_buffer[t], command, chunk_state
                )
                log.command_log.append((t, source, command))
                last_executed = command

        # 4. step the world
        state, obs = env.step(action)
        obs_buffer.append(obs)
        log.actions.append([action.dx, action.dy, action.grip])
        if frame_callback is not None:
            frame_callback(t + 1, env, obs, istate, last_executed, log)
        if all(env.stage_status()):
            break

    log.n_steps = len(log.actions)
    log.final_stage_status = env.stage_status()
    return log, corrections


def save_corrections(datapoints: list, out_dir) -> None:
    """Append correction datapoints as numbered binary files + index.json."""
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_path = out_dir / "index.json"
    index = []
    if index_path.exists():
        with open(index_path) as f:
            index = json.load(f)
    for dp in datapoints:
        k = len(index)
        write_arrays(out_dir / f"corr_{k:05d}.bin", {"images": dp.images_array()})
        index.append(
            {
                "file": f"corr_{k:05d}.bin",
                "l_user": dp.l_user,
                "episode_id": dp.episode_id,
                "t_intervene": dp.t_intervene,
            }
        )
    with open(index_path, "w") as f:
        json.dump(index, f, indent=1)


def load_corrections(out_dir) -> list:
    """Load (images array, l_user) pairs saved by save_corrections."""
    from pathlib import Path

    out_dir = Path(out_dir)
    index_path = out_dir / "index.json"
    if not index_path.exists():
        raise DataFormatError(f"missing {index_path}")
    with open(index_path) as f:
        index = json.load(f)
    out = []
    for entry in index:
        arrays = read_arrays(out_dir / entry["file"], mmap=True)
        out.append((arrays["images"], entry["l_user"]))
    return out
