"""Stage-wise evaluation, baselines, and ablations.

Every experiment is reproducible from (config, seed range) alone; metrics
are one JSON-lines row per trial, and comparison runs share data, seeds,
and epochs except for the single ablated factor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from hilc.data import EpisodeStore
from hilc.env import EnvConfig, SimEnv
from hilc.errors import InputError
from hilc.highlevel import HighLevelConfig, HighLevelPolicy
from hilc.lowlevel import LowLevelConfig, LowLevelPolicy
from hilc.oracle import OracleConfig, OracleCorrector
from hilc.pipeline import store_catalog, train_highlevel, train_lowlevel
from hilc.rollout import RolloutConfig, run_episode
from hilc.text import CommandCatalog


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class StageSuccessTable:
    n_trials: int
    successes: list  # per stage

    def success_rates(self) -> list:
        return [s / self.n_trials for s in self.successes]

    def intervals(self) -> list:
        return [wilson_interval(s, self.n_trials) for s in self.successes]

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "successes": self.successes,
            "rates": self.success_rates(),
            "intervals": self.intervals(),
        }

    def to_csv(self) -> str:
        lines = ["stage,successes,n_trials,rate,ci_lo,ci_hi"]
        for k, (s, (lo, hi)) in enumerate(zip(self.successes, self.intervals()), 1):
            lines.append(f"{k},{s},{self.n_trials},{s / self.n_trials:.4f},{lo:.4f},{hi:.4f}")
        return "\n".join(lines) + "\n"

    def to_markdown(self, label: str = "policy") -> str:
        lines = [f"| stage | {label} success | 95% CI |", "|---|---|---|"]
        for k, (s, (lo, hi)) in enumerate(zip(self.successes, self.intervals()), 1):
            lines.append(
                f"| {k} | {100 * s / self.n_trials:.1f}% | "
                f"[{100 * lo:.1f}, {100 * hi:.1f}] |"
            )
        return "\n".join(lines)


def evaluate(
    env_config: EnvConfig,
    hl_policy,
    ll_policy: LowLevelPolicy,
    seed_range,
    intervener_factory=None,
    rollout_cfg: Optional[RolloutConfig] = None,
    metrics_path=None,
) -> tuple[StageSuccessTable, list]:
    """Seeded stage-wise evaluation; rows sorted by seed for determinism."""
    seeds = sorted(seed_range)
    if not seeds:
        raise InputError("evaluate requires a non-empty seed range")
    env = SimEnv(env_config)
    rows = []
    successes = [0] * env_config.n_items
    for seed in seeds:
        intervener = intervener_factory() if intervener_factory else None
        if hasattr(hl_policy, "reset"):
            hl_policy.reset()
        log, _ = run_episode(
            env, hl_policy, ll_policy, intervener=intervener,
            cfg=rollout_cfg, seed=seed,
        )
        stages = [bool(b) for b in log.final_stage_status]
        n_interventions = sum(
            1 for e in log.intervention_log if e[1] == "command"
        )
        rows.append({"seed": seed, "stages": stages, "interventions": n_interventions})
        for k, ok in enumerate(stages):
            successes[k] += int(ok)
    table = StageSuccessTable(len(seeds), successes)
    if metrics_path is not None:
        write_metrics(rows, metrics_path)
    return table, rows


def write_metrics(rows: list, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


# -- baselines and ablations -------------------------------------------------


def run_baseline_flat_bc(
    store: EpisodeStore,
    env_config: EnvConfig,
    seed_range,
    ll_config: Optional[LowLevelConfig] = None,
    rollout_cfg: Optional[RolloutConfig] = None,
    verbose: bool = False,
):
    """Single-policy ACT-style baseline: one constant task embedding over
    whole episodes, no command conditioning."""
    import dataclasses

    ll_config = ll_config or LowLevelConfig()
    flat_config = dataclasses.replace(ll_config, embedding_mode="constant")
    policy, report = train_lowlevel(
        store, flat_config, filtered=False, flat=True, verbose=verbose
    )
    table, rows = evaluate(
        env_config, _ConstantHL(), policy, seed_range, rollout_cfg=rollout_cfg
    )
    return policy, table, rows


class _ConstantHL:
    """Feeds the flat policy a fixed dummy command every query."""

    def predict_command(self, history):
        return "__task__", 1.0


class ScriptedHighLevel:
    """Fixed (command, duration) schedule standing in for the learned
    instruction policy; ignores observations except for the step clock."""

    def __init__(self, sequence: list, control_hz: float, catalog: CommandCatalog):
        for command, _ in sequence:
            if command not in catalog:
                raise InputError(f"scripted command not in catalog: {command!r}")
        self.boundaries = []
        t = 0
        for command, duration_s in sequence:
            t += max(1, round(duration_s * control_hz))
            self.boundaries.append((t, command))

    def reset(self):
        pass

    def predict_command(self, history) -> tuple[str, float]:
        t = history[-1].t
        for end_t, command in self.boundaries:
            if t < end_t:
                return command, 1.0
        return self.boundaries[-1][1], 1.0


def default_script(n_items: int, pick_s: float = 3.0, place_s: float = 3.0) -> list:
    from hilc.expert import pick_command, place_command

    seq = []
    for i in range(n_items):
        seq.append((pick_command(i), pick_s))
        seq.append((place_command(i), place_s))
    return seq


def run_ablation_scripted_hl(
    env_config: EnvConfig,
    ll_policy: LowLevelPolicy,
    catalog: CommandCatalog,
    seed_range,
    sequence: Optional[list] = None,
    rollout_cfg: Optional[RolloutConfig] = None,
):
    sequence = sequence or default_script(env_config.n_items)
    hl = ScriptedHighLevel(sequence, env_config.control_hz, catalog)
    return evaluate(env_config, hl, ll_policy, seed_range, rollout_cfg=rollout_cfg)


def run_ablation_onehot(
    store: EpisodeStore,
    env_config: EnvConfig,
    seed_range,
    ll_config: Optional[LowLevelConfig] = None,
    hl_config: Optional[HighLevelConfig] = None,
    rollout_cfg: Optional[RolloutConfig] = None,
    verbose: bool = False,
) -> dict:
    """Trains the index-head high-level + embedding-table low-level variant
    and the standard embedding variant on identical data/seeds."""
    import dataclasses

    ll_config = ll_config or LowLevelConfig()
    hl_config = hl_config or HighLevelConfig()
    catalog = store_catalog(store)
    results = {}
    for name in ("embedding", "onehot"):
        ll_cfg = dataclasses.replace(
            ll_config, embedding_mode="text" if name == "embedding" else "onehot"
        )
        hl_cfg = dataclasses.replace(hl_config, head_mode=name)
        ll, _ = train_lowlevel(store, ll_cfg, filtered=True, catalog=catalog,
                               verbose=verbose)
        hl = HighLevelPolicy(hl_cfg, catalog=catalog)
        from hilc.pipeline import highlevel_samples

        samples = highlevel_samples(store, hl_cfg, env_config.control_hz)
        hl.train(samples, verbose=verbose)
        table, rows = evaluate(
            env_config, hl, ll, seed_range, rollout_cfg=rollout_cfg
        )
        results[name] = {"table": table, "rows": rows}
    return results


def run_ablation_all_data(
    store: EpisodeStore,
    env_config: EnvConfig,
    hl_policy: HighLevelPolicy,
    seed_range,
    ll_config: Optional[LowLevelConfig] = None,
    rollout_cfg: Optional[RolloutConfig] = None,
    verbose: bool = False,
) -> dict:
    """Filtered vs all-data low-level training, same seeds and epochs."""
    ll_config = ll_config or LowLevelConfig()
    results = {}
    for name, filtered in (("filtered", True), ("all_data", False)):
        ll, _ = train_lowlevel(store, ll_config, filtered=filtered, verbose=verbose)
        table, rows = evaluate(
            env_config, hl_policy, ll, seed_range, rollout_cfg=rollout_cfg
        )
        results[name] = {"table": table, "rows": rows}
    return results


# -- reporting ---------------------------------------------------------------


def report(run_dir, out_path=None) -> str:
    """Render a markdown summary + bar charts from metrics files in run_dir."""
    run_dir = Path(run_dir)
    metric_files = sorted(run_dir.glob("**/*.jsonl")) + sorted(
        run_dir.glob("**/round_metrics.json")
    )
    if not metric_files:
        raise InputError(
            f"no metrics found under {run_dir}; expected *.jsonl or round_metrics.json"
        )
    lines = [f"# Experiment report: {run_dir.name}", ""]
    for path in metric_files:
        rel = path.relative_to(run_dir)
        lines.append(f"## {rel}")
        lines.append("")
        if path.name == "round_metrics.json":
            with open(path) as f:
                rounds = json.load(f)
            lines.append("| round | corrections | " + " | ".join(
                f"stage {k+1}" for k in range(len(rounds[0]["stage_success"]))) + " |")
            lines.append("|" + "---|" * (2 + len(rounds[0]["stage_success"])))
            for r in rounds:
                cells = [str(r["round"]), str(r["n_corrections_total"])]
                cells += [f"{100 * s:.0f}%" for s in r["stage_success"]]
                lines.append("| " + " | ".join(cells) + " |")
            _plot_rounds(rounds, path.with_suffix(".png"))
            lines.append("")
            lines.append(f"![rounds]({rel.with_suffix('.png')})")
        else:
            rows = [json.loads(line) for line in open(path)]
            n = len(rows)
            n_stages = len(rows[0]["stages"])
            succ = [sum(r["stages"][k] for r in rows) for k in range(n_stages)]
            table = StageSuccessTable(n, succ)
            lines.append(table.to_markdown(label=rel.stem))
            path.with_suffix(".csv").write_text(table.to_csv())
            _plot_table(table, rel.stem, path.with_suffix(".png"))
            lines.append("")
            lines.append(f"![{rel.stem}]({rel.with_suffix('.png')})")
        lines.append("")
    text = "\n".join(lines)
    out_path = Path(out_path) if out_path else run_dir / "report.md"
    out_path.write_text(text)
    return text


def _plot_table(table: StageSuccessTable, label: str, out_path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rates = [100 * r for r in table.success_rates()]
    err = np.array(
        [
            [100 * (r - lo) for r, (lo, _) in zip(table.success_rates(), table.intervals())],
            [100 * (hi - r) for r, (_, hi) in zip(table.success_rates(), table.intervals())],
        ]
    )
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(range(1, len(rates) + 1), rates, yerr=err, capsize=3, color="#4878cf")
    ax.set_xlabel("stage")
    ax.set_ylabel("success %")
    ax.set_ylim(0, 100)
    ax.set_title(label)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def _plot_rounds(rounds: list, out_path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n_stages = len(rounds[0]["stage_success"])
    fig, ax = plt.subplots(figsize=(4.5, 3))
    for k in range(n_stages):
        ax.plot(
            [r["round"] for r in rounds],
            [100 * r["stage_success"][k] for r in rounds],
            marker="o",
            label=f"stage {k + 1}",
        )
    ax.set_xlabel("fine-tuning round")
    ax.set_ylabel("success %")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
