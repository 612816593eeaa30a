"""Operator bridge: live rollouts over a websocket JSON session.

One operator session at a time drives one rollout loop in its own thread.
Inbound messages (stop / command / resume) are enqueued and drained at
control-step boundaries, so an event takes effect within one control step.
Outbound messages all flow through a single sender, which stamps each with
the session id and a strictly increasing sequence number.

The message schema is documented field-by-field in docs/protocol.md.
"""

from __future__ import annotations

import asyncio
import base64
import dataclasses
import json
import queue
import threading
import time
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from hilc.env import EnvConfig, SimEnv
from hilc.errors import InputError
from hilc.highlevel import HighLevelPolicy, HistorySampleSet
from hilc.lowlevel import LowLevelPolicy
from hilc.rollout import EpisodeLog, RolloutConfig, run_episode

PROTOCOL_VERSION = 1


def _encode_frame(image) -> dict:
    """Raw RGB bytes, base64, row-major; trivially drawable on a canvas."""
    return {
        "height": int(image.shape[0]),
        "width": int(image.shape[1]),
        "pixels": base64.b64encode(image.tobytes()).decode("ascii"),
    }


class _EndEpisode(Exception):
    pass


class _ScheduledEvents:
    """Utterances pinned to exact control steps (deterministic test clients)."""

    def __init__(self):
        self._by_step: dict = {}
        self._lock = threading.Lock()

    def add(self, step: int, utterance: str) -> None:
        with self._lock:
            self._by_step.setdefault(step, []).append(utterance)

    def poll(self, t, sim_state, executed_command, intervention_state):
        with self._lock:
            return self._by_step.pop(t, [])


class SessionEngine:
    """Runs one rollout per start() in a worker thread; exposes thread-safe
    inbound event queues and an outbound message queue."""

    def __init__(
        self,
        hl_policy: HighLevelPolicy,
        ll_policy: LowLevelPolicy,
        env_config: EnvConfig,
        rollout_cfg: Optional[RolloutConfig] = None,
        fps: float = 10.0,
    ):
        self.hl = hl_policy
        self.ll = ll_policy
        self.env_config = env_config
        self.rollout_cfg = rollout_cfg or RolloutConfig()
        self.fps = fps
        self.events: queue.Queue = queue.Queue()
        self.scheduled = _ScheduledEvents()
        self.outbound: queue.Queue = queue.Queue()
        self.corrections: list = []
        self.log: Optional[EpisodeLog] = None
        self.current_t = 0
        self.pacing = "free"
        self._thread: Optional[threading.Thread] = None
        self._end = threading.Event()
        self._env: Optional[SimEnv] = None

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def submit(self, utterance: str, at_step: Optional[int] = None) -> None:
        if at_step is not None and at_step > self.current_t:
            self.scheduled.add(at_step, utterance)
        else:
            self.events.put(utterance)

    def start(self, seed: int, pacing: str = "live",
              max_steps: Optional[int] = None) -> None:
        if self.running:
            raise InputError("an episode is already running in this session")
        if pacing not in ("live", "free"):
            raise InputError(f"unknown pacing mode: {pacing!r}")
        self.pacing = pacing
        self.current_t = 0
        self._end.clear()
        cfg = self.rollout_cfg
        if max_steps is not None:
            cfg = dataclasses.replace(cfg, max_steps=max_steps)
        self._thread = threading.Thread(
            target=self._run, args=(seed, cfg), daemon=True
        )
        self._thread.start()

    def end_episode(self) -> None:
        self._end.set()

    def join(self, timeout: Optional[float] = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    # -- rollout-thread side ---------------------------------------------

    def _emit(self, mtype: str, **payload) -> None:
        self.outbound.put({"type": mtype, **payload})

    def _on_correction(self, dp) -> None:
        self.corrections.append(dp)
        self._emit(
            "correction_ack",
            t=dp.t_intervene,
            text=dp.l_user,
            context_frames=len(dp.history),
            n_session_corrections=len(self.corrections),
        )

    def _frame_cb(self, t, env, obs, istate, last_executed, log) -> None:
        self.log = log
        self.current_t = t
        src, cmd = log.command_log[-1][1], log.command_log[-1][2]
        confidence = log.query_log[-1][2] if log.query_log else None
        self._emit("command_executed", t=t - 1, source=src, command=cmd)
        self._emit(
            "status",
            t=t,
            mode=istate.mode.value,
            command=istate.active_command if istate.active_command else cmd,
            confidence=confidence,
        )
        self._emit(
            "frame",
            t=t,
            stage_status=[bool(b) for b in env.stage_status()],
            image=_encode_frame(obs.images[0]),
        )
        if self._end.is_set():
            raise _EndEpisode
        if self.pacing == "live":
            time.sleep(1.0 / self.fps)
            # operator pacing: sim time pauses while stopped
            while (istate.mode.value == "stopped" and self.events.empty()
                   and not self._end.is_set()):
                time.sleep(0.02)

    def _run(self, seed: int, cfg: RolloutConfig) -> None:
        env = SimEnv(self.env_config)
        self._env = env
        if hasattr(self.hl, "reset"):
            self.hl.reset()
        try:
            log, _ = run_episode(
                env, self.hl, self.ll,
                intervener=self.scheduled, cfg=cfg, seed=seed,
                event_queue=self.events,
                frame_callback=self._frame_cb,
                correction_callback=self._on_correction,
            )
            self.log = log
        except _EndEpisode:
            log = self.log
            log.n_steps = len(log.actions)
            log.final_stage_status = env.stage_status()
        except Exception as e:  # surfaced to the client, session stays alive
            self._emit("error", message=f"rollout failed: {e}")
            return
        self._emit(
            "status",
            t=log.n_steps,
            mode="idle",
            command=None,
            confidence=None,
            episode_done=True,
            stage_status=[bool(b) for b in log.final_stage_status],
        )


def session_replay(log_path, env_config: EnvConfig):
    """Replay a recorded episode over the session message schema.

    Re-renders frames deterministically by re-running the environment with
    the logged seed and actions. Yields payload dicts (no session/seq)."""
    from hilc.env import Action

    log = EpisodeLog.load(log_path)
    env = SimEnv(env_config)
    _, obs = env.reset(log.env_seed)
    command_by_t = {t: (src, cmd) for t, src, cmd in log.command_log}
    for t, action in enumerate(log.actions):
        src, cmd = command_by_t.get(t, ("hold", None))
        yield {"type": "command_executed", "t": t, "source": src, "command": cmd}
        _, obs = env.step(Action(*action))
        yield {
            "type": "frame",
            "t": t + 1,
            "stage_status": [bool(b) for b in env.stage_status()],
            "image": _encode_frame(obs.images[0]),
        }
    yield {
        "type": "status",
        "t": log.n_steps,
        "mode": "idle",
        "command": None,
        "confidence": None,
        "episode_done": True,
        "stage_status": [bool(b) for b in log.final_stage_status],
    }


def build_app(
    hl_ckpt,
    ll_ckpt,
    env_config: Optional[EnvConfig] = None,
    fps: float = 10.0,
    rollout_cfg: Optional[RolloutConfig] = None,
    checkpoints_dir=None,
    finetune_eval_trials: int = 5,
    finetune_eval_seed_start: int = 90_000,
    finetune_epochs: int = 2,
) -> FastAPI:
    """FastAPI app exposing the /session websocket; one session at a time."""
    hl_policy = HighLevelPolicy.load(hl_ckpt)
    ll_policy = LowLevelPolicy.load(ll_ckpt)
    env_config = env_config or EnvConfig()
    checkpoints_dir = Path(checkpoints_dir) if checkpoints_dir else Path(hl_ckpt).parent
    app = FastAPI(title="hilc operator bridge")
    busy = threading.Lock()

    @app.websocket("/session")
    async def session(ws: WebSocket):
        await ws.accept()
        if not busy.acquire(blocking=False):
            await ws.send_text(json.dumps({
                "v": PROTOCOL_VERSION, "session": None, "seq": 0,
                "type": "error", "message": "another session is active",
            }))
            await ws.close()
            return
        engine = SessionEngine(hl_policy, ll_policy, env_config,
                               rollout_cfg=rollout_cfg, fps=fps)
        session_id = uuid.uuid4().hex
        seq = 0

        async def send(payload: dict):
            nonlocal seq
            seq += 1
            await ws.send_text(json.dumps(
                {"v": PROTOCOL_VERSION, "session": session_id, "seq": seq,
                 **payload}))

        async def pump():
            while True:
                try:
                    msg = engine.outbound.get_nowait()
                except queue.Empty:
                    await asyncio.sleep(0.002)
                    continue
                await send(msg)

        pump_task = asyncio.ensure_future(pump())
        try:
            # hello: catalog for autocompletion, fetched at connect
            await send({
                "type": "status", "t": 0, "mode": "idle", "command": None,
                "confidence": None,
                "catalog": hl_policy.catalog.commands(),
            })
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                    if not isinstance(msg, dict) or "type" not in msg:
                        raise ValueError("message must be an object with 'type'")
                    mtype = msg["type"]
                except (json.JSONDecodeError, ValueError) as e:
                    await send({"type": "error", "message": f"malformed message: {e}"})
                    continue
                try:
                    if mtype == "start_episode":
                        engine.start(
                            seed=int(msg.get("seed", 0)),
                            pacing=msg.get("pacing", "live"),
                            max_steps=msg.get("max_steps"),
                        )
                    elif mtype in ("stop", "resume"):
                        engine.submit(mtype, at_step=msg.get("at_step"))
                    elif mtype == "command":
                        text = msg.get("text", "")
                        if not text or not text.strip():
                            raise InputError("command text must be non-empty")
                        engine.submit(text, at_step=msg.get("at_step"))
                    elif mtype == "end_episode":
                        engine.end_episode()
                    elif mtype == "finetune":
                        await asyncio.get_event_loop().run_in_executor(
                            None, _finetune, engine, env_config,
                            finetune_eval_trials, finetune_eval_seed_start,
                            finetune_epochs,
                        )
                    elif mtype == "list_checkpoints":
                        names = sorted(
                            p.name for p in checkpoints_dir.glob("*.pt")
                        )
                        await send({"type": "status", "t": engine.current_t,
                                    "mode": "idle" if not engine.running else None,
                                    "command": None, "confidence": None,
                                    "checkpoints": names})
                    else:
                        raise InputError(f"unknown message type: {mtype!r}")
                except InputError as e:
                    await send({"type": "error", "message": str(e)})
        except WebSocketDisconnect:
            pass
        finally:
            pump_task.cancel()
            engine.end_episode()
            engine.join(timeout=5.0)
            busy.release()

    return app


def _finetune(engine: SessionEngine, env_config: EnvConfig,
              eval_trials: int, eval_seed_start: int, epochs: int) -> None:
    """Fine-tune the instruction policy on this session's corrections and
    report a before/after quick evaluation. Runs in a worker thread; status
    flows through the engine's outbound queue."""
    from hilc.evalharness import evaluate
    from hilc.posttrain import finetune

    if not engine.corrections:
        engine._emit("error", message="no corrections recorded this session")
        return
    if engine.running:
        engine._emit("error", message="end the episode before fine-tuning")
        return
    seeds = range(eval_seed_start, eval_seed_start + eval_trials)
    engine._emit("status", t=engine.current_t, mode="finetuning", command=None,
                 confidence=None, progress=0.0)
    before, _ = evaluate(env_config, engine.hl, engine.ll, seeds,
                         rollout_cfg=engine.rollout_cfg)
    engine._emit("status", t=engine.current_t, mode="finetuning", command=None,
                 confidence=None, progress=0.33)
    pairs = [(dp.images_array(), dp.l_user) for dp in engine.corrections]
    base = HistorySampleSet(engine.hl.config, env_config.control_hz)
    finetune(engine.hl, base, [pairs], epochs=epochs)
    engine._emit("status", t=engine.current_t, mode="finetuning", command=None,
                 confidence=None, progress=0.66)
    after, _ = evaluate(env_config, engine.hl, engine.ll, seeds,
                        rollout_cfg=engine.rollout_cfg)
    engine._emit(
        "eval_result",
        n_corrections=len(pairs),
        before=before.to_dict(),
        after=after.to_dict(),
    )
