# tests/test_cli.py
import json

import pytest
from click.testing import CliRunner

from app.align.errors import DivergenceError
from app.constants import EXIT_CONFIG_ERROR, EXIT_DATA_ERROR, EXIT_DIVERGENCE
from app.main import cli

FAST = ["--preset", "desk", "--epochs", "3", "--dim", "8", "--negatives-k", "5", "--split-ratios", "0.3", "0.1", "0.6"]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def synthetic_dir(runner, tmp_path):
    out = tmp_path / "syn"
    result = runner.invoke(
        cli,
        ["gen-synthetic", "--entities", "40", "--relations", "4", "--avg-degree", "4",
         "--seed", "1", "--feature-dim", "8", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    return out


def _data_args(root):
    return ["--kg1", str(root / "kg1"), "--kg2", str(root / "kg2"), "--seeds", str(root / "ref_ent_ids")]


class TestGenSynthetic:
    def test_writes_pair(self, runner, tmp_path):
        out = tmp_path / "syn"
        result = runner.invoke(cli, ["gen-synthetic", "--entities", "20", "--relations", "3", "--perturb", "0", "--out", str(out)])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.stdout)
        assert payload["entities"] == 20 and payload["seeds"] == 20
        assert payload["dropped"] == payload["rewired"] == 0
        for name in ("kg1/triples", "kg2/ent_ids", "kg2/init_emb.tsv", "ref_ent_ids", "manifest.json"):
            assert (out / name).is_file()

    def test_bad_parameters_exit_config_error(self, runner, tmp_path):
        result = runner.invoke(cli, ["gen-synthetic", "--entities", "2", "--relations", "1", "--out", str(tmp_path / "x")])
        assert result.exit_code == EXIT_CONFIG_ERROR
        assert "config error" in result.stderr


class TestTrainAndEval:
    def test_single_fold_artifacts(self, runner, synthetic_dir, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(
            cli, ["train", *_data_args(synthetic_dir), "--out", str(out), "--no-record", "--expansion-interval", "2", *FAST]
        )
        assert result.exit_code == 0, result.output
        report = json.loads(result.stdout)
        assert {"hit1", "hit5", "mrr", "n_test", "config_digest", "fold", "best_epoch", "epoch"} <= set(report)
        assert report["n_test"] == 24

        assert json.loads((out / "report.json").read_text()) == report
        trace = [json.loads(line) for line in (out / "trace.jsonl").read_text().splitlines()]
        assert [t["epoch"] for t in trace] == [0, 1, 2, 3]
        assert trace[0]["loss"] is None
        assert (out / "soft_labels.tsv").is_file()

        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_digest"] == report["config_digest"]
        assert manifest["preset"] == "desk"
        # init_emb.tsv is picked up from the graph directories
        assert "init_emb1" in manifest["inputs"] and "seeds" in manifest["inputs"]

        evaluated = runner.invoke(cli, ["eval", "--checkpoint", str(out)])
        assert evaluated.exit_code == 0, evaluated.output
        metrics = json.loads(evaluated.stdout)
        for key in ("hit1", "hit5", "mrr", "n_test", "config_digest"):
            assert metrics[key] == report[key]

        custom = json.loads(runner.invoke(cli, ["eval", "--checkpoint", str(out / "checkpoint.json"), "--k", "10", "--k", "1"]).stdout)
        assert {"hit1", "hit10"} <= set(custom) and "hit5" not in custom

    def test_two_folds_summary(self, runner, synthetic_dir, tmp_path):
        out = tmp_path / "folds"
        result = runner.invoke(cli, ["train", *_data_args(synthetic_dir), "--out", str(out), "--folds", "2", "--no-record", *FAST])
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "summary.json").read_text())
        assert summary["folds"] == 2
        assert [r["fold"] for r in summary["per_fold"]] == [0, 1]
        assert (out / "fold_0" / "checkpoint.json").is_file() and (out / "fold_1" / "checkpoint.json").is_file()

        again = runner.invoke(cli, ["eval", "--checkpoint", str(out), "--folds", "2"])
        assert again.exit_code == 0, again.output
        assert json.loads(again.stdout)["mean"] == pytest.approx(summary["mean"])

    def test_config_file_and_ablation(self, runner, synthetic_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 2, "dim": 8, "k": 5}))
        out = tmp_path / "run"
        result = runner.invoke(
            cli,
            ["train", *_data_args(synthetic_dir), "--out", str(out), "--no-record", "--config", str(cfg), "--ablate", "softlabels"],
        )
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["ablations"] == ["softlabels"]
        assert manifest["config"]["soft_labels"]["use_soft_labels"] is False
        assert manifest["config"]["epochs"] == 2
        assert not (out / "soft_labels.tsv").exists()


class TestExitCodes:
    def test_invalid_value_is_config_error(self, runner, synthetic_dir, tmp_path):
        result = runner.invoke(cli, ["train", *_data_args(synthetic_dir), "--out", str(tmp_path / "r"), "--no-record", "--epochs", "0"])
        assert result.exit_code == EXIT_CONFIG_ERROR
        assert "epochs" in result.stderr

    def test_too_many_folds(self, runner, synthetic_dir, tmp_path):
        result = runner.invoke(cli, ["train", *_data_args(synthetic_dir), "--out", str(tmp_path / "r"), "--no-record", "--folds", "9", *FAST])
        assert result.exit_code == EXIT_CONFIG_ERROR

    def test_malformed_seeds_are_data_error(self, runner, synthetic_dir, tmp_path):
        bad = tmp_path / "seeds"
        bad.write_text("0\tnot-an-id\n")
        args = ["--kg1", str(synthetic_dir / "kg1"), "--kg2", str(synthetic_dir / "kg2"), "--seeds", str(bad)]
        result = runner.invoke(cli, ["train", *args, "--out", str(tmp_path / "r"), "--no-record", *FAST])
        assert result.exit_code == EXIT_DATA_ERROR
        assert "data error" in result.stderr

    def test_missing_checkpoint_is_data_error(self, runner, tmp_path):
        result = runner.invoke(cli, ["eval", "--checkpoint", str(tmp_path / "nothing")])
        assert result.exit_code == EXIT_DATA_ERROR

    def test_divergence(self, runner, synthetic_dir, tmp_path, monkeypatch):
        def diverge(*args, **kwargs):
            raise DivergenceError(5, last_finite_epoch=4, last_finite_loss=1.25)

        monkeypatch.setattr("app.commands.train.train", diverge)
        result = runner.invoke(cli, ["train", *_data_args(synthetic_dir), "--out", str(tmp_path / "r"), "--no-record", *FAST])
        assert result.exit_code == EXIT_DIVERGENCE
        assert "last finite epoch=4" in result.stderr


class TestSweep:
    def test_grid_rows(self, runner, synthetic_dir, tmp_path):
        out = tmp_path / "sweep"
        result = runner.invoke(
            cli,
            ["sweep", *_data_args(synthetic_dir), "--out", str(out),
             "--grid-layers", "1", "--grid-layers", "2", "--grid-lr", "0.01", *FAST],
        )
        assert result.exit_code == 0, result.output
        rows = json.loads((out / "sweep.json").read_text())["rows"]
        assert [(r["layers"], r["learning_rate"]) for r in rows] == [(1, 0.01), (2, 0.01)]
        assert (out / "layers_2_lr_0.01" / "checkpoint.json").is_file()


class TestRuns:
    def test_recorded_run_is_listed_and_shown(self, runner, synthetic_dir, tmp_path):
        result = runner.invoke(cli, ["train", *_data_args(synthetic_dir), "--out", str(tmp_path / "r"), "--record", *FAST])
        assert result.exit_code == 0, result.output
        digest = json.loads(result.stdout)["config_digest"]

        listed = json.loads(runner.invoke(cli, ["runs", "list", "--limit", "1"]).stdout)
        assert listed[0]["config_digest"] == digest
        assert listed[0]["status"] == "finished"

        shown = runner.invoke(cli, ["runs", "show", str(listed[0]["id"])])
        assert shown.exit_code == 0, shown.output
        detail = json.loads(shown.stdout)
        assert [e["epoch"] for e in detail["epochs"]] == [0, 1, 2, 3]

    def test_unknown_run(self, runner):
        result = runner.invoke(cli, ["runs", "show", "987654"])
        assert result.exit_code == EXIT_DATA_ERROR
