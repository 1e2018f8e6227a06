"""Command-line surface: workflows, documented flag behavior, exit codes."""

import csv

import numpy as np
import pytest

from loopformer.cli import main
from loopformer.data import load_dataset

MODEL_FLAGS = [
    "--depth", "4", "--hidden", "16", "--heads", "2", "--ffn", "32",
    "--vocab", "64", "--seq-len", "12",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> preprocess -> train once; reused by the read-only commands."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data.tsv"
    clean = root / "clean.tsv"
    ckpt = root / "model.ckpt"
    assert main(["synth", "--out", str(data), "--n", "240", "--seed", "5"]) == 0
    assert main(["preprocess", "--in", str(data), "--out", str(clean)]) == 0
    code = main(
        ["train", "--data", str(clean), "--out", str(ckpt),
         "--learning-rate", "2e-3", "--epochs", "8", "--stop-accuracy", "0.9",
         "--seed", "3", "--no-figures", *MODEL_FLAGS]
    )
    assert code == 0
    return root, clean, ckpt


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSynthPreprocess:
    def test_synth_writes_parseable_dataset(self, tmp_path):
        out = tmp_path / "d.tsv"
        assert main(["synth", "--out", str(out), "--n", "30", "--seed", "1"]) == 0
        assert len(load_dataset(out)) == 30

    def test_preprocess_cleans_text(self, tmp_path):
        raw = tmp_path / "raw.tsv"
        raw.write_text("1\tGood news!!! https://x.co\n", encoding="utf-8")
        out = tmp_path / "clean.tsv"
        assert main(["preprocess", "--in", str(raw), "--out", str(out)]) == 0
        assert load_dataset(out)[0].text == "good news"

    def test_preprocess_custom_stopwords(self, tmp_path):
        raw = tmp_path / "raw.tsv"
        raw.write_text("0\tthe market of the year\n", encoding="utf-8")
        stop = tmp_path / "stop.txt"
        stop.write_text("the of\n", encoding="utf-8")
        out = tmp_path / "clean.tsv"
        assert main(["preprocess", "--in", str(raw), "--out", str(out), "--stopwords", str(stop)]) == 0
        assert load_dataset(out)[0].text == "market year"


class TestTrain:
    def test_metrics_file_written(self, workspace):
        _, _, ckpt = workspace
        rows = read_csv(str(ckpt) + ".metrics.csv")
        assert rows[0] == ["epoch", "train_loss", "val_accuracy", "seconds"]
        assert len(rows) >= 2

    def test_config_file_drives_training(self, tmp_path, workspace):
        root, clean, _ = workspace
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "depth = 4\nhidden = 16\nheads = 2\nffn = 32\nvocab = 64\nseq_len = 12\n"
            "learning_rate = 2e-3\nepochs = 1\nseed = 3\n",
            encoding="utf-8",
        )
        out = tmp_path / "m.ckpt"
        assert main(["train", "--data", str(clean), "--out", str(out), "--config", str(cfg), "--no-figures"]) == 0
        rows = read_csv(str(out) + ".metrics.csv")
        assert len(rows) == 2  # header + the single configured epoch

    def test_bad_config_key_fails(self, tmp_path, workspace):
        _, clean, _ = workspace
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("warp_speed = 9\n", encoding="utf-8")
        assert main(["train", "--data", str(clean), "--out", str(tmp_path / "m.ckpt"), "--config", str(cfg)]) == 1


class TestEval:
    def test_full_depth_and_delta_zero_agree(self, workspace, capsys):
        _, clean, ckpt = workspace

        def accuracy_of(extra):
            assert main(["eval", "--model", str(ckpt), "--data", str(clean), "--limit", "60", *extra]) == 0
            out = capsys.readouterr().out
            return [line for line in out.splitlines() if line.startswith("accuracy:")][0]

        assert accuracy_of([]) == accuracy_of(["--delta", "0"])

    def test_depth_override(self, workspace, capsys):
        _, clean, ckpt = workspace
        assert main(["eval", "--model", str(ckpt), "--data", str(clean), "--limit", "30", "--depth-override", "2"]) == 0
        out = capsys.readouterr().out
        assert "mean_exit_layer: 2.0000" in out

    def test_depth_override_conflicts_with_policy(self, workspace):
        _, clean, ckpt = workspace
        assert main(
            ["eval", "--model", str(ckpt), "--data", str(clean), "--depth-override", "2", "--delta", "0.5"]
        ) == 1

    def test_missing_model_fails_cleanly(self, workspace, capsys):
        _, clean, _ = workspace
        assert main(["eval", "--model", "/nonexistent.ckpt", "--data", str(clean)]) == 1
        assert "error:" in capsys.readouterr().err


class TestSweep:
    def test_outputs_and_row_count(self, workspace, tmp_path):
        _, clean, ckpt = workspace
        out = tmp_path / "reports"
        assert main(
            ["sweep", "--model", str(ckpt), "--data", str(clean), "--limit", "40",
             "--deltas", "0.2,0.5,0.9", "--out-dir", str(out)]
        ) == 0
        rows = read_csv(out / "sweep.csv")
        assert len(rows) == 1 + 3 + 1  # header + grid + reference
        assert (out / "sweep.png").exists()

    def test_no_figures_flag(self, workspace, tmp_path):
        _, clean, ckpt = workspace
        out = tmp_path / "reports"
        assert main(
            ["sweep", "--model", str(ckpt), "--data", str(clean), "--limit", "20",
             "--deltas", "0.5", "--out-dir", str(out), "--no-figures"]
        ) == 0
        assert (out / "sweep.csv").exists()
        assert not (out / "sweep.png").exists()


class TestScheduleSim:
    def test_comparison_outputs(self, workspace, tmp_path):
        _, clean, ckpt = workspace
        out = tmp_path / "reports"
        assert main(
            ["schedule-sim", "--model", str(ckpt), "--data", str(clean), "--limit", "40",
             "--delta", "0.5", "--batch-slots", "4", "--out-dir", str(out)]
        ) == 0
        comparison = read_csv(out / "comparison.csv")
        assert comparison[0] == ["strategy", "n_slots", "accuracy", "compute_ratio", "sim_time", "throughput", "speedup"]
        assert [row[0] for row in comparison[1:]] == ["case1", "case2", "case3", "case4", "alg1"]
        samples = read_csv(out / "samples.csv")
        assert samples[0] == ["sample_id", "label", "prediction", "exit_layer", "exit_stage"]
        assert len(samples) == 41
        steps = read_csv(out / "steps.csv")
        assert steps[0] == ["step", "strategy", "occupancy"]
        assert (out / "strategies.png").exists() and (out / "occupancy.png").exists()

    def test_policy_disabled_reports_unit_compute_ratio(self, workspace, tmp_path):
        _, clean, ckpt = workspace
        out = tmp_path / "reports"
        assert main(
            ["schedule-sim", "--model", str(ckpt), "--data", str(clean), "--limit", "20",
             "--batch-slots", "4", "--out-dir", str(out), "--no-figures"]
        ) == 0
        for row in read_csv(out / "comparison.csv")[1:]:
            assert float(row[3]) == 1.0

    def test_single_strategy_selection(self, workspace, tmp_path):
        _, clean, ckpt = workspace
        out = tmp_path / "reports"
        assert main(
            ["schedule-sim", "--model", str(ckpt), "--data", str(clean), "--limit", "16",
             "--strategy", "alg1", "--delta", "0.5", "--out-dir", str(out), "--no-figures"]
        ) == 0
        rows = read_csv(out / "comparison.csv")
        assert len(rows) == 2 and rows[1][0] == "alg1"


class TestTraceAttention:
    def test_csv_and_figure(self, workspace, tmp_path):
        _, _, ckpt = workspace
        out = tmp_path / "reports"
        assert main(
            ["trace-attention", "--model", str(ckpt), "--text", "Markets rally strongly today!",
             "--out-dir", str(out)]
        ) == 0
        rows = read_csv(out / "attention.csv")
        assert rows[0][0] == "[CLS]"
        assert len(rows) == 1 + 4  # header + one row per layer (depth 4)
        values = np.array([[float(x) for x in row] for row in rows[1:]])
        np.testing.assert_allclose(values.sum(axis=1), 1.0, atol=1e-9)
        assert (out / "attention.png").exists()

    def test_empty_after_preprocess_fails(self, workspace, tmp_path):
        _, _, ckpt = workspace
        assert main(
            ["trace-attention", "--model", str(ckpt), "--text", "!!!", "--out-dir", str(tmp_path)]
        ) == 1


class TestExitCodes:
    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) != 0

    def test_unknown_flag(self):
        assert main(["synth", "--bogus", "1"]) != 0

    def test_missing_required(self):
        assert main(["synth"]) != 0

    def test_help_is_success(self):
        assert main(["--help"]) == 0
