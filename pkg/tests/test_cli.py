import json

import pytest
from click.testing import CliRunner

from aesim.cli import main


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory, runner):
    """A small synthesized dataset with attached latents, built via the CLI."""
    path = tmp_path_factory.mktemp("cli") / "ds"
    result = runner.invoke(
        main, ["synth", "--height", "32", "--width", "32", "--seed", "1", "--out", str(path)]
    )
    assert result.exit_code == 0, result.output
    result = runner.invoke(main, ["embed", "--dataset", str(path)])
    assert result.exit_code == 0, result.output
    return path


RUN_ARGS = [
    "--acq", "mu", "--steps", "5", "--train-iters", "20", "--master-seed", "3",
]


class TestSynthEmbed:
    def test_synth_writes_container(self, dataset_dir):
        manifest = json.loads((dataset_dir / "manifest.json").read_text())
        assert manifest["arrays"]["image"]["shape"] == [32, 32]

    def test_embed_attaches_latent(self, dataset_dir):
        assert (dataset_dir / "latent.bin").exists()

    def test_synth_invalid_size_exits_1(self, runner, tmp_path):
        result = runner.invoke(
            main, ["synth", "--height", "4", "--width", "4", "--out", str(tmp_path / "x")]
        )
        assert result.exit_code == 1
        assert "error:" in result.output


class TestRun:
    def test_writes_report_files(self, runner, dataset_dir, tmp_path):
        out = tmp_path / "report"
        result = runner.invoke(
            main, ["run", "--dataset", str(dataset_dir), "--out", str(out)] + RUN_ARGS
        )
        assert result.exit_code == 0, result.output
        for name in ("trace.csv", "curve.csv", "summary.json", "curve.png", "trace.png"):
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "budget_exhausted"
        assert summary["measurements"] == 10  # 5 seeds + 5 steps

    def test_repeat_runs_byte_identical(self, runner, dataset_dir, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            result = runner.invoke(
                main, ["run", "--dataset", str(dataset_dir), "--out", str(out)] + RUN_ARGS
            )
            assert result.exit_code == 0, result.output
            outs.append(out)
        for fname in ("trace.csv", "curve.csv", "summary.json"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_trace_header_and_rows(self, runner, dataset_dir, tmp_path):
        out = tmp_path / "r"
        runner.invoke(main, ["run", "--dataset", str(dataset_dir), "--out", str(out)] + RUN_ARGS)
        lines = (out / "trace.csv").read_text().splitlines()
        assert lines[0] == "step,index,row,col,z1,z2,value,source"
        assert len(lines) == 11

    def test_zero_steps_is_usage_error(self, runner, dataset_dir, tmp_path):
        result = runner.invoke(
            main,
            ["run", "--dataset", str(dataset_dir), "--steps", "0", "--out", str(tmp_path / "x")],
        )
        assert result.exit_code == 2

    def test_unknown_option_exits_2(self, runner, dataset_dir):
        result = runner.invoke(main, ["run", "--dataset", str(dataset_dir), "--frobnicate"])
        assert result.exit_code == 2

    def test_missing_dataset_exits_2(self, runner, tmp_path):
        result = runner.invoke(
            main, ["run", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "x")]
        )
        assert result.exit_code == 2


class TestBatch:
    def test_small_study_report(self, runner, dataset_dir, tmp_path):
        out = tmp_path / "study"
        result = runner.invoke(
            main,
            [
                "batch", "--dataset", str(dataset_dir),
                "--acq", "mu", "--seed-model", "gd,uls",
                "--reps", "2", "--steps", "5", "--bifurcate-at", "2",
                "--intervention-points", "1", "--train-iters", "10",
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "summary.json").read_text())
        assert sorted(summary["configs"]) == ["mu_gd", "mu_uls"]
        for label in ("mu_gd", "mu_uls"):
            cfg_dir = out / label
            assert (cfg_dir / "outcomes.csv").exists()
            assert (cfg_dir / "learning_curves.png").exists()
            lines = (cfg_dir / "outcomes.csv").read_text().splitlines()
            assert lines[0] == "rep,branch,stagnant_at_bifurcation,released,steps"
            assert len(lines) == 5  # 2 reps x 2 branches

    def test_bifurcate_after_steps_is_usage_error(self, runner, dataset_dir, tmp_path):
        result = runner.invoke(
            main,
            [
                "batch", "--dataset", str(dataset_dir),
                "--steps", "5", "--bifurcate-at", "5", "--out", str(tmp_path / "x"),
            ],
        )
        assert result.exit_code == 2
