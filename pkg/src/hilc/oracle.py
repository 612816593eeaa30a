"""Rule-based simulated operator.

Watches privileged sim state during rollouts and issues corrections from
the expert phrasebook: directional nudges when the gripper stops making
progress toward its commanded target, gripper-reopening advice after a
failed grasp, and a redirect to the right pick instruction when a place
command stalls without the item in hand. While one of its own corrections
is overriding the policy it keeps watching and says "resume" (or chains
the queued follow-up) as soon as the correction has done its job, the way
a human coach hands control back; micro-nudges that miss their goal are
released after a short deadline instead of pinning the policy.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hilc import expert
from hilc.env import SimState, item_name
from hilc.errors import ConfigurationError
from hilc.rollout import Mode


@dataclass
class OracleConfig:
    position_tolerance: float = 0.1
    patience_steps: int = 8
    max_interventions_per_episode: int = 8
    cooldown_steps: int = 10
    grasp_radius: float = 0.06
    # a micro-correction ("move a little...", "open the gripper wider") is
    # inherently short; release control after this many override steps even
    # if its goal was not reached, rather than pinning the policy on it
    nudge_release_steps: int = 14

    def __post_init__(self):
        if self.position_tolerance <= 0:
            raise ConfigurationError("position_tolerance must be > 0")
        if self.patience_steps < 1:
            raise ConfigurationError("patience_steps must be >= 1")


def parse_command(command: str, n_items: int) -> tuple[str, Optional[int]]:
    """(kind, item index): kind in {pick, place, other}."""
    for i in range(n_items):
        name = item_name(i)
        if re.search(rf"\bpick up the {name} item\b", command):
            return "pick", i
        if re.search(rf"\bput the {name} item in the bag\b", command):
            return "place", i
    return "other", None


class OracleCorrector:
    """Stateful per-episode corrector; plug into run_episode as intervener."""

    def __init__(self, config: Optional[OracleConfig] = None, n_items: int = 3):
        self.config = config or OracleConfig()
        self.n_items = n_items
        self.reset()

    def reset(self) -> None:
        self.n_interventions = 0
        self.last_intervention_t = -(10**9)
        self._dist_history: list[float] = []
        self._watched: Optional[str] = None
        self._place_holding: Optional[bool] = None
        self._done_cmd_since: Optional[int] = None
        self._pending: list[str] = []
        # correction currently overriding the policy: (goal kind, item index)
        self._active_goal: Optional[tuple[str, Optional[int]]] = None
        self._initial_item_pos: Optional[np.ndarray] = None
        self._ever_held: set[int] = set()
        # step -> why the intervention at that step was issued; lets the
        # post-training collector select pairs by intervention kind
        self.reasons: dict[int, str] = {}

    # -- helpers -----------------------------------------------------------

    def _budget_ok(self, t: int) -> bool:
        return (
            self.n_interventions < self.config.max_interventions_per_episode
            and t - self.last_intervention_t >= self.config.cooldown_steps
        )

    def _emit(self, t: int, utterance: str,
              goal: Optional[tuple[str, Optional[int]]] = None,
              reason: str = "other") -> list[str]:
        self.n_interventions += 1
        self.last_intervention_t = t
        self._dist_history = []
        self._place_holding = None
        self._done_cmd_since = None
        self._active_goal = goal
        self.reasons[t] = reason
        return [utterance]

    def _goal_met(self, state: SimState) -> bool:
        if self._active_goal is None:
            return False
        kind, item = self._active_goal
        if kind == "approach":   # directional nudge toward an item
            return (state.held_item == item or float(
                np.linalg.norm(state.item_pos[item] - state.gripper_pos)
            ) <= 1.2 * self.config.grasp_radius)
        if kind == "open":
            return state.gripper_open >= 0.5
        if kind == "hold":       # pick / pick-again style corrections
            return state.held_item == item
        if kind == "bagged":     # toward-bag style corrections
            return bool(state.item_in_bag[item])
        return False

    def _direction_to(self, state: SimState, target) -> str:
        return expert.CMD_MOVE[expert.direction_name(np.asarray(target) - state.gripper_pos)]

    # -- main hook ---------------------------------------------------------

    def _retry_pick_phrase(self, state: SimState, item: int) -> str:
        """Plain pick for an untouched item; the retry phrasing once the item
        has been held or knocked off its spawn position (that is the state
        distribution the retry skill was demonstrated in)."""
        moved = (
            self._initial_item_pos is not None
            and float(np.linalg.norm(state.item_pos[item] - self._initial_item_pos[item]))
            > self.config.position_tolerance
        )
        if item in self._ever_held or moved:
            return f"pick up the {item_name(item)} item again"
        return f"pick up the {item_name(item)} item"

    def observe(self, t: int, state: SimState, executed_command: Optional[str],
                mode: Mode) -> list[str]:
        if self._initial_item_pos is None:
            self._initial_item_pos = np.array(state.item_pos, dtype=float)
        if state.held_item is not None:
            self._ever_held.add(int(state.held_item))
        if mode == Mode.OVERRIDE and self._active_goal is not None:
            # Our own correction is overriding the policy. Once it has done
            # its job, hand control back (or chain the queued follow-up)
            # instead of letting a short utterance pin the policy for the
            # rest of the override window.
            if self._goal_met(state):
                self._active_goal = None
                if self._pending:
                    utterance, goal, reason = self._pending.pop(0)
                    return self._emit(t, utterance, goal=goal, reason=reason)
                return ["resume"]
            kind = self._active_goal[0]
            age = t - self.last_intervention_t
            if kind in ("approach", "open") and age >= self.config.nudge_release_steps:
                # the micro-correction ran its course without reaching its
                # goal; give control back rather than keep drifting
                self._active_goal = None
                self._pending = []
                return ["resume"]
            return []
        if mode != Mode.AUTONOMOUS or executed_command is None:
            self._dist_history = []
            self._active_goal = None
            return []
        if self._pending and self._budget_ok(t):
            utterance, goal, reason = self._pending.pop(0)
            return self._emit(t, utterance, goal=goal, reason=reason)
        kind, item = parse_command(executed_command, self.n_items)
        if executed_command != self._watched:
            self._watched = executed_command
            self._dist_history = []
            self._place_holding = None
            self._done_cmd_since = None

        cfg = self.config
        if item is not None and state.item_in_bag[item]:
            # the policy is acting on an item that is already in the bag —
            # there are no demonstrations for that, so waiting it out only
            # burns the clock; redirect to the true next step of the task
            if self._done_cmd_since is None:
                self._done_cmd_since = t
            if t - self._done_cmd_since >= cfg.patience_steps and self._budget_ok(t):
                if state.held_item is not None:
                    return self._emit(
                        t, expert.place_command(int(state.held_item)),
                        goal=("bagged", int(state.held_item)),
                        reason="bagged_redirect",
                    )
                remaining = [i for i in range(self.n_items)
                             if not state.item_in_bag[i]]
                if remaining:
                    nxt = remaining[0]
                    return self._emit(t, self._retry_pick_phrase(state, nxt),
                                      goal=("hold", nxt),
                                      reason="bagged_redirect")
            return []
        self._done_cmd_since = None
        if kind == "other" and executed_command == expert.CMD_TOWARD_BAG:
            # heading to the bag with an empty gripper: the item slipped but
            # the policy did not notice. Waiting never helps (there is nothing
            # to deliver), so redirect to re-picking the nearest loose item.
            if state.held_item is None:
                self._dist_history.append(0.0)  # reuse as a patience counter
                if len(self._dist_history) >= cfg.patience_steps and self._budget_ok(t):
                    loose = [i for i in range(self.n_items)
                             if not state.item_in_bag[i]]
                    if loose:
                        nearest = min(loose, key=lambda i: float(
                            np.linalg.norm(state.item_pos[i] - state.gripper_pos)))
                        return self._emit(
                            t, self._retry_pick_phrase(state, nearest),
                            goal=("hold", nearest), reason="empty_toward_bag",
                        )
            else:
                self._dist_history = []
            return []
        if kind == "pick":
            if state.held_item == item:
                self._dist_history = []
                return []
            dist = float(np.linalg.norm(state.item_pos[item] - state.gripper_pos))
            self._dist_history.append(dist)
            if len(self._dist_history) >= cfg.patience_steps and self._budget_ok(t):
                window = self._dist_history[-cfg.patience_steps :]
                progress = window[0] - window[-1]
                near = dist <= 1.8 * cfg.grasp_radius
                if near and state.gripper_open < 0.5 and progress < 0.01:
                    # closed on nothing next to the item
                    self._pending.append(
                        (f"pick up the {item_name(item)} item again",
                         ("hold", item), "grasp_retry")
                    )
                    return self._emit(t, expert.CMD_OPEN_WIDER,
                                      goal=("open", item), reason="grasp_reopen")
                if not near and progress < 0.5 * cfg.position_tolerance:
                    return self._emit(
                        t, self._direction_to(state, state.item_pos[item]),
                        goal=("approach", item), reason="stall_nudge",
                    )
            return []

        if kind == "place":
            if state.item_in_bag[item]:
                self._dist_history = []
                return []
            if state.held_item != item:
                # the place skill recovers a dropped (or not yet grasped)
                # item by itself: its demonstrations include re-grasping
                # after slips. Overriding that recovery does more harm than
                # good, so only step in when the gripper makes no progress
                # toward the item over a long window.
                if self._place_holding is not False:
                    self._dist_history = []
                self._place_holding = False
                dist = float(np.linalg.norm(state.item_pos[item] - state.gripper_pos))
                self._dist_history.append(dist)
                window_len = 3 * cfg.patience_steps
                if len(self._dist_history) >= window_len and self._budget_ok(t):
                    window = self._dist_history[-window_len:]
                    if window[0] - window[-1] < 0.5 * cfg.position_tolerance:
                        return self._emit(t, self._retry_pick_phrase(state, item),
                                          goal=("hold", item),
                                          reason="place_stall_redirect")
                return []
            if self._place_holding is not True:
                self._dist_history = []
            self._place_holding = True
            dist = float(np.linalg.norm(state.bag_pos - state.gripper_pos))
            self._dist_history.append(dist)
            if len(self._dist_history) >= cfg.patience_steps and self._budget_ok(t):
                window = self._dist_history[-cfg.patience_steps :]
                if dist > cfg.position_tolerance and window[0] - window[-1] < 0.5 * cfg.position_tolerance:
                    return self._emit(t, expert.CMD_TOWARD_BAG,
                                      goal=("bagged", item), reason="bag_nudge")
            return []

        return []

    # intervener protocol used by run_episode
    def poll(self, t, sim_state, executed_command, intervention_state) -> list[str]:
        return self.observe(t, sim_state, executed_command, intervention_state.mode)
