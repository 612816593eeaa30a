"""Command-line entry point.

Verbs: gen-data, train-lowlevel, train-highlevel, rollout, iterate,
evaluate, ablate <name>, report, serve. Experiments refuse to run without
an explicit seed range so every result is reproducible from (config, seeds).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from hilc.data import EpisodeStore
from hilc.env import EnvConfig, SimEnv
from hilc.errors import HilcError
from hilc.highlevel import HighLevelConfig, HighLevelPolicy
from hilc.lowlevel import LowLevelConfig, LowLevelPolicy


def _load_env_config(path) -> EnvConfig:
    return EnvConfig.load(path) if path else EnvConfig()


def _parse_seed_range(spec: str) -> range:
    try:
        start, end = spec.split(":")
        r = range(int(start), int(end))
    except ValueError:
        raise click.BadParameter("seed range must be start:end")
    if len(r) == 0:
        raise click.BadParameter("seed range is empty")
    return r


seed_range_option = click.option(
    "--seed-range", "seed_range", required=True, callback=lambda c, p, v: _parse_seed_range(v),
    help="Evaluation seeds as start:end (end exclusive); required.",
)
config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True), default=None,
    help="Environment config YAML (defaults used when omitted).",
)
out_option = click.option("--out", "out", type=click.Path(), required=True)


@click.group()
def main():
    """Hierarchical language-corrigible imitation learning toolkit."""


@main.command("gen-data")
@config_option
@out_option
@click.option("--episodes", type=int, default=200, show_default=True)
@click.option("--mistake-rate", type=float, default=0.3, show_default=True)
@click.option("--seed-start", type=int, default=0, show_default=True)
def gen_data(config_path, out, episodes, mistake_rate, seed_start):
    """Generate a narrated expert dataset."""
    from hilc.pipeline import generate_and_save_dataset

    cfg = _load_env_config(config_path)
    generate_and_save_dataset(
        cfg, out, episodes, mistake_rate, seed_start=seed_start, verbose=True
    )
    click.echo(f"wrote {episodes} episodes to {out}")


@main.command("train-lowlevel")
@click.option("--dataset", type=click.Path(exists=True), required=True)
@out_option
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--no-filter", is_flag=True, help="Train on all segments (ablation).")
@click.option("--flat", is_flag=True, help="Flat-BC baseline: constant embedding.")
def train_lowlevel_cmd(dataset, out, epochs, seed, no_filter, flat):
    """Behavior-clone the language-conditioned low-level policy."""
    from hilc.pipeline import train_lowlevel

    store = EpisodeStore(dataset)
    cfg = LowLevelConfig(seed=seed)
    if epochs is not None:
        cfg.epochs = epochs
    if flat:
        cfg.embedding_mode = "constant"
    policy, rep = train_lowlevel(
        store, cfg, filtered=not no_filter, flat=flat, verbose=True
    )
    policy.save(out)
    click.echo(f"final loss {rep.final_loss:.4f}; checkpoint at {out}")


@main.command("train-highlevel")
@click.option("--dataset", type=click.Path(exists=True), required=True)
@out_option
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--onehot", is_flag=True, help="Index-head ablation variant.")
def train_highlevel_cmd(dataset, out, epochs, seed, onehot):
    """Train the instruction policy on all segments."""
    from hilc.pipeline import train_highlevel

    store = EpisodeStore(dataset)
    env_cfg = EnvConfig.load(Path(dataset) / "env_config.yaml")
    cfg = HighLevelConfig(seed=seed, head_mode="onehot" if onehot else "embedding")
    if epochs is not None:
        cfg.epochs = epochs
    policy, rep, _ = train_highlevel(store, env_cfg.control_hz, cfg, verbose=True)
    policy.save(out)
    click.echo(
        f"final loss {rep.epoch_losses[-1]:.4f}, train top-1 {rep.top1_accuracy:.2%}; "
        f"checkpoint at {out}"
    )


@main.command("rollout")
@config_option
@click.option("--hl-ckpt", type=click.Path(exists=True), required=True)
@click.option("--ll-ckpt", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--oracle", is_flag=True, help="Attach the oracle corrector.")
@click.option("--out", type=click.Path(), default=None, help="Episode log path.")
def rollout_cmd(config_path, hl_ckpt, ll_ckpt, seed, oracle, out):
    """Run one hierarchical episode and print the result."""
    from hilc.oracle import OracleConfig, OracleCorrector
    from hilc.rollout import run_episode

    cfg = _load_env_config(config_path)
    hl = HighLevelPolicy.load(hl_ckpt)
    ll = LowLevelPolicy.load(ll_ckpt)
    intervener = OracleCorrector(OracleConfig(grasp_radius=cfg.grasp_radius),
                                 cfg.n_items) if oracle else None
    log, corrections = run_episode(SimEnv(cfg), hl, ll, intervener=intervener, seed=seed)
    click.echo(f"steps: {log.n_steps}  stages: {log.final_stage_status}  "
               f"corrections: {len(corrections)}")
    if out:
        log.save(out)
        click.echo(f"log written to {out}")


@main.command("evaluate")
@config_option
@seed_range_option
@out_option
@click.option("--hl-ckpt", type=click.Path(exists=True), required=True)
@click.option("--ll-ckpt", type=click.Path(exists=True), required=True)
@click.option("--oracle", is_flag=True)
def evaluate_cmd(config_path, seed_range, out, hl_ckpt, ll_ckpt, oracle):
    """Stage-wise success over a seed range; writes JSONL metrics."""
    from hilc.evalharness import evaluate
    from hilc.oracle import OracleConfig, OracleCorrector

    cfg = _load_env_config(config_path)
    hl = HighLevelPolicy.load(hl_ckpt)
    ll = LowLevelPolicy.load(ll_ckpt)
    factory = None
    if oracle:
        ocfg = OracleConfig(grasp_radius=cfg.grasp_radius)
        factory = lambda: OracleCorrector(ocfg, cfg.n_items)  # noqa: E731
    table, _ = evaluate(cfg, hl, ll, seed_range, intervener_factory=factory,
                        metrics_path=out)
    click.echo(table.to_markdown())


@main.command("iterate")
@config_option
@seed_range_option
@out_option
@click.option("--dataset", type=click.Path(exists=True), required=True)
@click.option("--hl-ckpt", type=click.Path(exists=True), required=True)
@click.option("--ll-ckpt", type=click.Path(exists=True), required=True)
@click.option("--rounds", type=int, default=2, show_default=True)
@click.option("--episodes-per-round", type=int, default=50, show_default=True)
def iterate_cmd(config_path, seed_range, out, dataset, hl_ckpt, ll_ckpt, rounds,
                episodes_per_round):
    """Correction-collection / fine-tune / evaluate rounds."""
    from hilc.pipeline import highlevel_samples
    from hilc.posttrain import iterate

    cfg = _load_env_config(config_path)
    hl = HighLevelPolicy.load(hl_ckpt)
    ll = LowLevelPolicy.load(ll_ckpt)
    store = EpisodeStore(dataset)
    base_samples = highlevel_samples(store, hl.config, cfg.control_hz)
    metrics = iterate(
        cfg, hl, ll, base_samples, rounds, episodes_per_round, out,
        eval_seed_start=seed_range.start, eval_trials=len(seed_range), verbose=True,
    )
    hl.save(Path(out) / "hl_finetuned.pt")
    for m in metrics:
        click.echo(json.dumps(m.to_dict()))


@main.command("ablate")
@click.argument("name", type=click.Choice(["scripted-hl", "onehot", "all-data"]))
@config_option
@seed_range_option
@out_option
@click.option("--dataset", type=click.Path(exists=True), required=True)
@click.option("--hl-ckpt", type=click.Path(exists=True), default=None)
@click.option("--ll-ckpt", type=click.Path(exists=True), default=None)
def ablate_cmd(name, config_path, seed_range, out, dataset, hl_ckpt, ll_ckpt):
    """Run one named ablation and write metrics per variant."""
    from hilc import evalharness as eh
    from hilc.pipeline import store_catalog

    cfg = _load_env_config(config_path)
    store = EpisodeStore(dataset)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if name == "scripted-hl":
        ll = LowLevelPolicy.load(ll_ckpt)
        catalog = store_catalog(store)
        table, rows = eh.run_ablation_scripted_hl(cfg, ll, catalog, seed_range)
        eh.write_metrics(rows, out / "scripted_hl.jsonl")
        click.echo(table.to_markdown("scripted"))
    elif name == "onehot":
        results = eh.run_ablation_onehot(store, cfg, seed_range)
        for variant, res in results.items():
            eh.write_metrics(res["rows"], out / f"{variant}.jsonl")
            click.echo(res["table"].to_markdown(variant))
    else:
        hl = HighLevelPolicy.load(hl_ckpt)
        results = eh.run_ablation_all_data(store, cfg, hl, seed_range)
        for variant, res in results.items():
            eh.write_metrics(res["rows"], out / f"{variant}.jsonl")
            click.echo(res["table"].to_markdown(variant))


@main.command("report")
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
def report_cmd(run_dir, out):
    """Markdown summary + plots from metrics files under RUN_DIR."""
    from hilc.evalharness import report

    text = report(run_dir, out)
    click.echo(text)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8765, show_default=True)
@click.option("--hl-ckpt", type=click.Path(exists=True), required=True)
@click.option("--ll-ckpt", type=click.Path(exists=True), required=True)
@click.option("--fps", type=float, default=10.0, show_default=True)
@config_option
def serve_cmd(host, port, hl_ckpt, ll_ckpt, fps, config_path):
    """Operator bridge: live rollouts over a websocket session."""
    import uvicorn

    from hilc.bridge import build_app

    cfg = _load_env_config(config_path)
    app = build_app(hl_ckpt, ll_ckpt, env_config=cfg, fps=fps)
    uvicorn.run(app, host=host, port=port)


def entrypoint():  # pragma: no cover
    try:
        main()
    except HilcError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    entrypoint()
