"""Scripted narrate-then-act expert.

Announces each skill as a command string, then executes it with a
proportional controller. With some probability per item it injects a
deliberate offset error and recovers through a correction-flagged segment
drawn from a fixed phrasebook, so the dataset contains both mistakes and
the recovery skills that fix them.
"""

from __future__ import annotations

import numpy as np

from hilc.data import Episode, SegmentFlag, SkillSegment
from hilc.env import Action, EnvConfig, SimEnv, item_name
from hilc.errors import InputError

DIRECTIONS = {
    "left": np.array([-1.0, 0.0]),
    "right": np.array([1.0, 0.0]),
    "up": np.array([0.0, 1.0]),
    "down": np.array([0.0, -1.0]),
}

CMD_MOVE = {
    "left": "move a little to the left",
    "right": "move a little to the right",
    "up": "move a little up",
    "down": "move a little down",
}
CMD_OPEN_WIDER = "open the gripper wider"
CMD_TRY_AGAIN = "try again"
CMD_TOWARD_BAG = "move toward the bag"


def pick_command(i: int) -> str:
    return f"pick up the {item_name(i)} item"


def place_command(i: int) -> str:
    return f"put the {item_name(i)} item in the bag"


def pick_again_command(i: int) -> str:
    return f"pick up the {item_name(i)} item again"


def correction_phrasebook(n_items: int = 3) -> list[str]:
    book = list(CMD_MOVE.values())
    book += [CMD_OPEN_WIDER, CMD_TRY_AGAIN, CMD_TOWARD_BAG]
    book += [pick_again_command(i) for i in range(n_items)]
    return book


def task_commands(n_items: int = 3) -> list[str]:
    return [pick_command(i) for i in range(n_items)] + [
        place_command(i) for i in range(n_items)
    ]


def direction_name(delta) -> str:
    """Dominant-axis direction of a world-space displacement."""
    if abs(delta[0]) >= abs(delta[1]):
        return "right" if delta[0] >= 0 else "left"
    return "up" if delta[1] >= 0 else "down"


class _Recorder:
    """Accumulates (obs, action) steps and segment spans during a rollout."""

    def __init__(self, env: SimEnv, seed: int, max_steps: int):
        self.env = env
        self.max_steps = max_steps
        state, obs = env.reset(seed)
        self.observations = [obs]
        self.actions: list[Action] = []
        self.segments: list[SkillSegment] = []
        self._seg_start: int | None = None
        self._seg_command: str | None = None
        self._seg_flag: SegmentFlag | None = None

    @property
    def state(self):
        return self.env.state

    @property
    def exhausted(self) -> bool:
        return len(self.actions) >= self.max_steps

    def begin(self, command: str, flag: SegmentFlag) -> None:
        self.end()
        self._seg_start = len(self.actions)
        self._seg_command = command
        self._seg_flag = flag

    def end(self) -> None:
        if self._seg_command is None:
            return
        if len(self.actions) == self._seg_start:
            # a segment must span at least one step; hold in place
            self.step(Action(0.0, 0.0, self.state.gripper_open))
        self.segments.append(
            SkillSegment(
                self._seg_command, self._seg_flag, self._seg_start, len(self.actions)
            )
        )
        self._seg_command = None

    def step(self, action: Action) -> None:
        _, obs = self.env.step(action)
        self.actions.append(action)
        self.observations.append(obs)

    def goto(self, target, grip: float, tol: float, max_steps: int = 60) -> bool:
        """Proportional move toward target; True if within tol."""
        step_size = self.env.config.step_size
        for _ in range(max_steps):
            if self.exhausted:
                return False
            delta = np.asarray(target) - self.state.gripper_pos
            if np.linalg.norm(delta) <= tol:
                return True
            cmd = np.clip(delta / step_size, -1.0, 1.0)
            self.step(Action(cmd[0], cmd[1], grip))
        return np.linalg.norm(np.asarray(target) - self.state.gripper_pos) <= tol


class ScriptedExpert:
    def __init__(self, env: SimEnv, mistake_rate: float, seed: int, max_steps: int = 500):
        if not 0.0 <= mistake_rate <= 1.0:
            raise InputError(f"mistake_rate must be in [0, 1], got {mistake_rate}")
        self.env = env
        self.mistake_rate = mistake_rate
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        self.rec = _Recorder(env, seed, max_steps)

    # -- low-level maneuvers ----------------------------------------------

    def _close_on(self, i: int) -> bool:
        """One close attempt; True if the item ended up held."""
        self.rec.step(Action(0.0, 0.0, 0.0))
        return self.rec.state.held_item == i

    def _grasp_loop(self, i: int, attempts: int = 6) -> bool:
        """Approach-and-close until item i is held (same-segment retries)."""
        cfg = self.env.config
        for _ in range(attempts):
            if self.rec.exhausted:
                return False
            if self.rec.state.held_item == i:
                return True
            self.rec.goto(self.rec.state.item_pos[i], grip=1.0, tol=cfg.grasp_radius * 0.4)
            if self._close_on(i):
                return True
            self.rec.step(Action(0.0, 0.0, 1.0))
        return self.rec.state.held_item == i

    # -- skills with mistake injection ------------------------------------

    def _pick_skill(self, i: int, inject_mistake: bool) -> None:
        rec = self.rec
        rec.begin(pick_command(i), SegmentFlag.INSTRUCTION)
        if inject_mistake:
            # aim at an offset spot and close on nothing
            dir_name = self.rng.choice(list(DIRECTIONS))
            offset = DIRECTIONS[dir_name] * self.rng.uniform(0.09, 0.13)
            bad_target = np.clip(rec.state.item_pos[i] + offset, 0.02, 0.98)
            rec.goto(bad_target, grip=1.0, tol=0.02)
            self._close_on(i)
            while rec.state.held_item != i and not rec.exhausted:
                self._recover_pick(i)
        else:
            # retry inside the same instruction segment on noise misses
            while rec.state.held_item != i and not rec.exhausted:
                self._grasp_loop(i)

    def _recover_pick(self, i: int) -> None:
        rec = self.rec
        cfg = self.env.config
        variant = self.rng.random()
        if rec.state.held_item == i:
            return
        if variant < 0.5:
            # directional nudge with the gripper closed; snap-grasp en route
            delta = rec.state.item_pos[i] - rec.state.gripper_pos
            rec.begin(CMD_MOVE[direction_name(delta)], SegmentFlag.CORRECTION)
            rec.goto(rec.state.item_pos[i], grip=0.0, tol=cfg.grasp_radius * 0.4)
            self._close_on(i)
            rec.end()
        elif variant < 0.8:
            rec.begin(CMD_OPEN_WIDER, SegmentFlag.CORRECTION)
            rec.step(Action(0.0, 0.0, 1.0))
            rec.step(Action(0.0, 0.0, 1.0))
            rec.end()
            rec.begin(pick_again_command(i), SegmentFlag.CORRECTION)
            self._grasp_loop(i)
            rec.end()
        else:
            rec.begin(CMD_TRY_AGAIN, SegmentFlag.CORRECTION)
            self._grasp_loop(i)
            rec.end()

    def _place_skill(self, i: int, inject_mistake: bool) -> None:
        cfg = self.env.config
        rec = self.rec
        rec.begin(place_command(i), SegmentFlag.INSTRUCTION)
        bag = np.asarray(cfg.bag_pos)
        drop = bag + self.rng.uniform(-0.35, 0.35, size=2) * (cfg.bag_half - 0.04)
        if inject_mistake:
            # stop well short of the bag, then correct toward it
            toward = bag - rec.state.gripper_pos
            toward /= max(np.linalg.norm(toward), 1e-9)
            short = bag - toward * self.rng.uniform(0.22, 0.3)
            rec.goto(np.clip(short, 0.02, 0.98), grip=0.0, tol=0.02)
            rec.begin(CMD_TOWARD_BAG, SegmentFlag.CORRECTION)
            while not rec.state.item_in_bag[i] and not rec.exhausted:
                if rec.state.held_item != i:  # slipped free mid-correction
                    self._grasp_loop(i)
                self._carry_and_drop(i, drop)
            rec.end()
        else:
            while not rec.state.item_in_bag[i] and not rec.exhausted:
                if rec.state.held_item != i:
                    self._grasp_loop(i)
                self._carry_and_drop(i, drop)

    def _carry_and_drop(self, i: int, drop) -> None:
        rec = self.rec
        if rec.state.held_item != i:
            return
        rec.goto(drop, grip=0.0, tol=0.025)
        if self.env.in_bag(rec.state.gripper_pos):
            rec.step(Action(0.0, 0.0, 1.0))

    # -- episode ----------------------------------------------------------

    def run(self) -> Episode:
        cfg = self.env.config
        # pack order is randomized per episode: choosing WHICH item comes
        # next is then a genuine decision the instruction policy must make
        # from what it sees (bag contents), not a timing pattern
        for i in self.rng.permutation(cfg.n_items):
            i = int(i)
            if self.rec.exhausted:
                break
            mistake = self.rng.random() < self.mistake_rate
            phase = self.rng.random()  # which phase the mistake lands in
            self._pick_skill(i, mistake and phase < 0.65)
            if self.rec.state.held_item == i:
                self._place_skill(i, mistake and phase >= 0.65)
        self.rec.end()
        return Episode(
            observations=self.rec.observations,
            actions=self.rec.actions,
            segments=self.rec.segments,
            env_seed=self.env.config.seed,
            outcome=self.env.stage_status(),
        )


def generate_episode(
    env: SimEnv, mistake_rate: float, seed: int, max_steps: int = 500
) -> Episode:
    expert = ScriptedExpert(env, mistake_rate, seed, max_steps)
    ep = expert.run()
    ep.env_seed = seed
    return ep


def generate_dataset(
    config: EnvConfig,
    n_episodes: int,
    mistake_rate: float,
    seed_start: int = 0,
    max_steps: int = 500,
) -> list[Episode]:
    env = SimEnv(config)
    return [
        generate_episode(env, mistake_rate, seed_start + k, max_steps)
        for k in range(n_episodes)
    ]
