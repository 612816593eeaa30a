"""Iterative improvement of the instruction policy from recorded corrections.

Each round: run oracle-corrected rollouts, append the new correction set to
the aggregate, fine-tune the high-level policy on base data plus every
correction set collected so far (low-level weights frozen, asserted by
checksum), then evaluate autonomously on a disjoint seed range.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from hilc import expert
from hilc.env import EnvConfig, SimEnv
from hilc.errors import InputError
from hilc.highlevel import HighLevelPolicy, HistorySampleSet, HLTrainReport
from hilc.lowlevel import LowLevelPolicy
from hilc.oracle import OracleConfig, OracleCorrector
from hilc.rollout import RolloutConfig, run_episode, save_corrections


def policy_checksum(policy) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(policy.net.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.numpy().tobytes())
    return h.hexdigest()


def finetune(
    hl_policy: HighLevelPolicy,
    base_samples: HistorySampleSet,
    correction_sets: list,
    correction_upweight: float = 5.0,
    epochs: Optional[int] = None,
    lr: Optional[float] = None,
) -> HLTrainReport:
    """Fine-tune on base data plus the union of all correction sets.

    correction_sets: list over iterations of lists of (images, l_user)
    pairs. Warm-starts from the policy's current parameters; lr defaults
    to the policy's training rate but fine-tuning typically wants a much
    smaller one (the optimizer restarts fresh each call).
    """
    combined = base_samples.shallow_copy()
    for corr_set in correction_sets:
        for images, l_user in corr_set:
            combined.add_correction(images, l_user, boost=correction_upweight)
    old_epochs = hl_policy.config.epochs
    old_lr = hl_policy.config.learning_rate
    if epochs is not None:
        hl_policy.config.epochs = epochs
    if lr is not None:
        hl_policy.config.learning_rate = lr
    try:
        return hl_policy.train(combined)
    finally:
        hl_policy.config.epochs = old_epochs
        hl_policy.config.learning_rate = old_lr


@dataclass
class RoundMetrics:
    round: int
    n_corrections: int
    n_corrections_total: int
    stage_success: list  # fraction per stage, autonomous evaluation

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "n_corrections": self.n_corrections,
            "n_corrections_total": self.n_corrections_total,
            "stage_success": self.stage_success,
        }


def is_instruction_level(utterance: str) -> bool:
    """True for corrections that name a complete skill ("pick up the red
    item again", "move toward the bag", "try again", ...), False for
    momentary motor adjustments ("move a little to the left", "open the
    gripper wider").

    Momentary adjustments only work with an operator watching and handing
    control back seconds later; replayed by the instruction policy on its
    own query cadence they pin the robot to a drift for a whole query
    interval. Only instruction-level corrections are useful fine-tuning
    targets for the instruction policy.
    """
    momentary = set(expert.CMD_MOVE.values()) | {expert.CMD_OPEN_WIDER}
    return utterance not in momentary


def collect_corrected_rollouts(
    env_config: EnvConfig,
    hl_policy: HighLevelPolicy,
    ll_policy: LowLevelPolicy,
    oracle_config: OracleConfig,
    seeds,
    rollout_cfg: Optional[RolloutConfig] = None,
    pair_reasons: Optional[set] = None,
) -> tuple[list, list]:
    """Oracle-corrected rollouts; returns (correction pairs, episode logs).

    pair_reasons: optionally restrict fine-tuning pairs to specific oracle
    intervention reasons (see OracleCorrector.reasons); momentary motor
    adjustments are excluded in any case.
    """
    env = SimEnv(env_config)
    pairs = []
    logs = []
    for seed in seeds:
        oracle = OracleCorrector(oracle_config, n_items=env_config.n_items)
        log, corrections = run_episode(
            env, hl_policy, ll_policy, intervener=oracle, cfg=rollout_cfg, seed=seed
        )
        logs.append(log)
        for dp in corrections:
            if not is_instruction_level(dp.l_user):
                continue
            if pair_reasons is not None:
                reason = oracle.reasons.get(dp.t_intervene)
                if reason not in pair_reasons:
                    continue
            pairs.append((dp.images_array(), dp.l_user))
    return pairs, logs


def iterate(
    env_config: EnvConfig,
    hl_policy: HighLevelPolicy,
    ll_policy: LowLevelPolicy,
    base_samples: HistorySampleSet,
    rounds: int,
    episodes_per_round: int,
    out_dir,
    oracle_config: Optional[OracleConfig] = None,
    rollout_cfg: Optional[RolloutConfig] = None,
    collect_seed_start: int = 10_000,
    eval_seed_start: int = 50_000,
    eval_trials: int = 100,
    correction_upweight: float = 5.0,
    finetune_epochs: Optional[int] = None,
    finetune_lr: Optional[float] = None,
    pair_reasons: Optional[set] = None,
    verbose: bool = False,
) -> list:
    """Eq.-style post-training loop; returns per-round metrics (round 0 =
    the base policy's autonomous evaluation before any fine-tuning)."""
    if rounds < 1:
        raise InputError(f"rounds must be >= 1, got {rounds}")
    from hilc.evalharness import evaluate  # local import: avoids cycle

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    oracle_config = oracle_config or OracleConfig(grasp_radius=env_config.grasp_radius)
    ll_checksum = policy_checksum(ll_policy)

    metrics = []
    table, _ = evaluate(
        env_config, hl_policy, ll_policy,
        range(eval_seed_start, eval_seed_start + eval_trials), rollout_cfg=rollout_cfg,
    )
    metrics.append(RoundMetrics(0, 0, 0, table.success_rates()))
    if verbose:
        print(f"round 0 (base): {table.success_rates()}")

    correction_sets: list = []
    for r in range(1, rounds + 1):
        seeds = range(
            collect_seed_start + (r - 1) * episodes_per_round,
            collect_seed_start + r * episodes_per_round,
        )
        pairs, _ = collect_corrected_rollouts(
            env_config, hl_policy, ll_policy, oracle_config, seeds, rollout_cfg,
            pair_reasons=pair_reasons,
        )
        correction_sets.append(pairs)
        save_corrections_pairs(pairs, out_dir / "corrections" / f"iter_{r}")
        finetune(
            hl_policy, base_samples, correction_sets,
            correction_upweight=correction_upweight, epochs=finetune_epochs,
            lr=finetune_lr,
        )
        if policy_checksum(ll_policy) != ll_checksum:
            raise InputError("low-level policy parameters changed during post-training")
        table, _ = evaluate(
            env_config, hl_policy, ll_policy,
            range(eval_seed_start, eval_seed_start + eval_trials),
            rollout_cfg=rollout_cfg,
        )
        n_total = sum(len(s) for s in correction_sets)
        metrics.append(RoundMetrics(r, len(pairs), n_total, table.success_rates()))
        if verbose:
            print(f"round {r}: {len(pairs)} corrections, {table.success_rates()}")

    with open(out_dir / "round_metrics.json", "w") as f:
        json.dump([m.to_dict() for m in metrics], f, indent=1)
    return metrics


def save_corrections_pairs(pairs: list, out_dir) -> None:
    """Persist (images, l_user) pairs in the corrections/iter_<n> layout."""
    from hilc.data import write_arrays

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    for k, (images, l_user) in enumerate(pairs):
        write_arrays(out_dir / f"corr_{k:05d}.bin", {"images": images})
        index.append({"file": f"corr_{k:05d}.bin", "l_user": l_user})
    with open(out_dir / "index.json", "w") as f:
        json.dump(index, f, indent=1)
