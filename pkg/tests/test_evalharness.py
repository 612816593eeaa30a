import json

import pytest

from hilc.env import SimEnv
from hilc.errors import InputError
from hilc.evalharness import (
    ScriptedHighLevel,
    StageSuccessTable,
    default_script,
    evaluate,
    report,
    wilson_interval,
    write_metrics,
)
from hilc.expert import pick_command, place_command, task_commands
from hilc.lowlevel import LowLevelConfig, LowLevelPolicy
from hilc.rollout import RolloutConfig
from hilc.text import CommandCatalog


@pytest.fixture(scope="module")
def ll_policy():
    return LowLevelPolicy(LowLevelConfig(seed=0))


class TestWilson:
    def test_known_value(self):
        lo, hi = wilson_interval(50, 100)
        assert lo == pytest.approx(0.4038, abs=1e-3)
        assert hi == pytest.approx(0.5962, abs=1e-3)

    def test_bounds(self):
        assert wilson_interval(0, 10)[0] == 0.0
        assert wilson_interval(10, 10)[1] == 1.0
        assert wilson_interval(0, 0) == (0.0, 1.0)


class TestTable:
    def test_rates_and_dict(self):
        t = StageSuccessTable(4, [4, 2, 1])
        assert t.success_rates() == [1.0, 0.5, 0.25]
        d = t.to_dict()
        assert d["n_trials"] == 4 and len(d["intervals"]) == 3

    def test_markdown_and_csv_shape(self):
        t = StageSuccessTable(4, [4, 2, 1])
        md = t.to_markdown("x")
        assert md.count("\n") == 4  # header + separator + 3 stages
        csv = t.to_csv()
        rows = csv.strip().split("\n")
        assert rows[0] == "stage,successes,n_trials,rate,ci_lo,ci_hi"
        assert rows[1].startswith("1,4,4,1.0000")


class TestEvaluate:
    def test_empty_seed_range(self, quiet_config, ll_policy):
        with pytest.raises(InputError):
            evaluate(quiet_config, None, ll_policy, [])

    def test_rows_sorted_and_metrics_written(self, tmp_path, quiet_config, ll_policy):
        path = tmp_path / "m.jsonl"
        table, rows = evaluate(
            quiet_config, None, ll_policy, [5, 3, 4],
            rollout_cfg=RolloutConfig(max_steps=5), metrics_path=path,
        )
        assert [r["seed"] for r in rows] == [3, 4, 5]
        assert table.n_trials == 3
        reread = [json.loads(line) for line in open(path)]
        assert reread == rows

    def test_byte_identical_metrics(self, tmp_path, env_config, ll_policy):
        paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
        for p in paths:
            evaluate(
                env_config, None, ll_policy, range(3),
                rollout_cfg=RolloutConfig(max_steps=20), metrics_path=p,
            )
        assert paths[0].read_bytes() == paths[1].read_bytes()


class TestScriptedHL:
    def _catalog(self):
        return CommandCatalog.from_commands(task_commands())

    def test_schedule_boundaries(self):
        hl = ScriptedHighLevel(
            [(pick_command(0), 1.0), (place_command(0), 2.0)], 10.0, self._catalog()
        )

        class Obs:
            def __init__(self, t):
                self.t = t

        assert hl.predict_command([Obs(0)]) == (pick_command(0), 1.0)
        assert hl.predict_command([Obs(9)]) == (pick_command(0), 1.0)
        assert hl.predict_command([Obs(10)]) == (place_command(0), 1.0)
        # past the end: holds the final command
        assert hl.predict_command([Obs(500)]) == (place_command(0), 1.0)

    def test_rejects_unknown_command(self):
        with pytest.raises(InputError):
            ScriptedHighLevel([("no such skill", 1.0)], 10.0, self._catalog())

    def test_default_script_covers_items(self):
        seq = default_script(3)
        assert [c for c, _ in seq] == [
            pick_command(0), place_command(0),
            pick_command(1), place_command(1),
            pick_command(2), place_command(2),
        ]


class TestReport:
    def test_report_renders_tables_and_csv(self, tmp_path, quiet_config, ll_policy):
        run = tmp_path / "run"
        evaluate(
            quiet_config, None, ll_policy, range(2),
            rollout_cfg=RolloutConfig(max_steps=5),
            metrics_path=run / "base.jsonl",
        )
        text = report(run)
        assert "base" in text and "| stage |" in text
        assert (run / "report.md").exists()
        assert (run / "base.csv").exists()
        assert (run / "base.png").exists()

    def test_report_empty_dir(self, tmp_path):
        with pytest.raises(InputError):
            report(tmp_path)
