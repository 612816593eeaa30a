import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from hilc.cli import _parse_seed_range, main


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A tiny dataset plus low/high-level checkpoints for exercising verbs."""
    import dataclasses

    from hilc.env import EnvConfig
    from hilc.highlevel import HighLevelConfig
    from hilc.lowlevel import LowLevelConfig
    from hilc.pipeline import generate_and_save_dataset, train_highlevel, train_lowlevel
    from hilc.data import EpisodeStore

    root = tmp_path_factory.mktemp("cli")
    ds = root / "ds"
    cfg = EnvConfig(action_noise_std=0.0)
    generate_and_save_dataset(cfg, ds, n_episodes=4, mistake_rate=0.5, seed_start=0)
    store = EpisodeStore(ds)
    ll, _ = train_lowlevel(store, LowLevelConfig(seed=0, epochs=1))
    hl, _, _ = train_highlevel(
        store, cfg.control_hz, HighLevelConfig(seed=0, epochs=1, max_samples_per_epoch=64)
    )
    ll.save(root / "ll.pt")
    hl.save(root / "hl.pt")
    return root


class TestSeedRange:
    def test_parse(self):
        assert _parse_seed_range("3:7") == range(3, 7)

    def test_rejects_malformed(self):
        import click

        with pytest.raises(click.BadParameter):
            _parse_seed_range("7")
        with pytest.raises(click.BadParameter):
            _parse_seed_range("a:b")

    def test_rejects_empty(self):
        import click

        with pytest.raises(click.BadParameter):
            _parse_seed_range("7:7")

    def test_evaluate_refuses_without_seed_range(self, runner, trained):
        res = runner.invoke(
            main,
            ["evaluate", "--out", "x.jsonl",
             "--hl-ckpt", str(trained / "hl.pt"), "--ll-ckpt", str(trained / "ll.pt")],
        )
        assert res.exit_code != 0
        assert "--seed-range" in res.output


class TestHelp:
    def test_verbs_registered(self, runner):
        res = runner.invoke(main, ["--help"])
        assert res.exit_code == 0
        for verb in ["gen-data", "train-lowlevel", "train-highlevel", "rollout",
                     "iterate", "evaluate", "ablate", "report", "serve"]:
            assert verb in res.output

    def test_ablate_choices(self, runner):
        res = runner.invoke(main, ["ablate", "--help"])
        assert res.exit_code == 0
        for name in ["scripted-hl", "onehot", "all-data"]:
            assert name in res.output


class TestVerbs:
    def test_gen_data(self, runner, tmp_path):
        out = tmp_path / "ds"
        res = runner.invoke(
            main, ["gen-data", "--out", str(out), "--episodes", "2",
                   "--mistake-rate", "0.0"],
        )
        assert res.exit_code == 0, res.output
        assert (out / "env_config.yaml").exists()

    def test_rollout_writes_log(self, runner, trained, tmp_path):
        log_path = tmp_path / "ep.json"
        res = runner.invoke(
            main,
            ["rollout", "--hl-ckpt", str(trained / "hl.pt"),
             "--ll-ckpt", str(trained / "ll.pt"), "--seed", "0",
             "--out", str(log_path)],
        )
        assert res.exit_code == 0, res.output
        assert "stages:" in res.output
        d = json.loads(log_path.read_text())
        assert d["env_seed"] == 0 and d["n_steps"] > 0

    def test_evaluate_writes_metrics(self, runner, trained, tmp_path):
        out = tmp_path / "m.jsonl"
        res = runner.invoke(
            main,
            ["evaluate", "--seed-range", "0:2", "--out", str(out),
             "--hl-ckpt", str(trained / "hl.pt"), "--ll-ckpt", str(trained / "ll.pt")],
        )
        assert res.exit_code == 0, res.output
        rows = [json.loads(line) for line in open(out)]
        assert [r["seed"] for r in rows] == [0, 1]
        assert "| stage |" in res.output

    def test_report_over_metrics(self, runner, trained, tmp_path):
        out = tmp_path / "m.jsonl"
        runner.invoke(
            main,
            ["evaluate", "--seed-range", "0:2", "--out", str(out),
             "--hl-ckpt", str(trained / "hl.pt"), "--ll-ckpt", str(trained / "ll.pt")],
        )
        res = runner.invoke(main, ["report", str(tmp_path)])
        assert res.exit_code == 0, res.output
        assert (tmp_path / "report.md").exists()
