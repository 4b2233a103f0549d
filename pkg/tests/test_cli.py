"""Command-line entry point tests: exit codes and artifact layout."""

import csv
import json

import pytest

from horizonmix.checkpoint import load_policy
from horizonmix.cli import main

CFG = """
model.layers = 1
model.heads = 2
model.d_model = 16
model.d_ff = 32
model.context_tokens = 2
model.encoder_hidden = 16
model.max_horizon = 6
model.stride = 3
train.iterations = 4
train.warmup = 2
train.batch_size = 8
train.checkpoint_every = 0
"""


@pytest.fixture()
def root(tmp_path, monkeypatch):
    monkeypatch.setenv("HORIZONMIX_ROOT", str(tmp_path))
    (tmp_path / "run.cfg").write_text(CFG)
    return tmp_path


def run_train(root, *extra):
    args = ["train", "--config", "run.cfg", "--out", "runs/train",
            "--suite-seed", "0", "--episodes-per-task", "2", *extra]
    assert main(args) == 0
    return root / "runs" / "train" / "checkpoint.bin"


class TestExitCodes:

    def test_bad_config_key_is_2(self, root, capsys):
        (root / "bad.cfg").write_text("train.turbo = yes\n")
        assert main(["train", "--config", "bad.cfg"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_override_is_2(self, root):
        assert main(["train", "--config", "run.cfg",
                     "--set", "model.stride=0"]) == 2

    def test_missing_checkpoint_is_3(self, root):
        assert main(["eval", "--checkpoint", "nope.bin"]) == 3

    def test_unknown_command_is_2(self, root):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 2


class TestTrainEval:

    def test_train_writes_artifacts(self, root):
        ckpt = run_train(root)
        assert ckpt.exists()
        metrics = (root / "runs" / "train" / "metrics.jsonl").read_text()
        assert len(metrics.splitlines()) == 4
        assert (root / "data" / "default" / "data.npz").exists()
        assert (root / "data" / "default" / "manifest.json").exists()
        _, cfg, meta = load_policy(ckpt)
        assert cfg.iterations == 4 and meta["iteration"] == 4

    def test_train_reuses_dataset(self, root):
        run_train(root)
        manifest_path = root / "data" / "default" / "manifest.json"
        stamp = manifest_path.stat().st_mtime_ns
        run_train(root)  # second run must load, not regenerate
        assert manifest_path.stat().st_mtime_ns == stamp

    def test_eval_fixed_writes_csv(self, root):
        ckpt = run_train(root)
        out = root / "eval.csv"
        assert main(["eval", "--checkpoint", str(ckpt), "--executor", "fixed",
                     "--prefix", "3", "--trials", "2",
                     "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["family"] for r in rows] == ["precision-reach",
                                               "waypoint-chain"]
        for r in rows:
            assert r["executor"] == "fixed-3"
            assert 0.0 <= float(r["success_rate"]) <= 1.0
            assert float(r["mean_prefix"]) == 3.0

    def test_eval_consensus_trace(self, root):
        ckpt = run_train(root)
        trace = root / "trace.jsonl"
        assert main(["eval", "--checkpoint", str(ckpt),
                     "--executor", "consensus", "--ratio", "1.1",
                     "--trials", "1", "--trace", str(trace)]) == 0
        lines = [json.loads(l) for l in trace.read_text().splitlines()]
        assert lines
        for rec in lines:
            assert rec["k_exec"] >= 3  # never below min_steps for H=6
            assert rec["threshold"] >= 0.0
            assert len(rec["disagreements"]) == 6

    def test_rollout_prints_summary(self, root, capsys):
        ckpt = run_train(root)
        capsys.readouterr()  # drop training chatter
        assert main(["rollout", "--checkpoint", str(ckpt),
                     "--task-id", "0", "--trial", "0"]) == 0
        out = capsys.readouterr().out
        summary = json.loads(out[out.index("{"):])
        assert summary["task_id"] == 0
        assert summary["steps"] == sum(summary["prefix_lengths"])


class TestSweeps:

    def test_sweep_horizons_rows(self, root):
        assert main(["sweep-horizons", "--config", "run.cfg",
                     "--strides", "3,6", "--trials", "1",
                     "--episodes-per-task", "2",
                     "--out", "runs/sweep"]) == 0
        rows = list(csv.DictReader(
            (root / "runs" / "sweep" / "horizon_sweep.csv").open()))
        assert [r["label"] for r in rows] == ["moh-d3", "moh-d6",
                                              "baseline-h6"]
        assert [int(r["n_horizons"]) for r in rows] == [2, 1, 1]
        for r in rows:
            assert 0.0 <= float(r["mixed_avg"]) <= 1.0

    def test_gate_stats_requires_mixture(self, root):
        ckpt = run_train(root, "--set", "model.stride=6")
        assert main(["gate-stats", "--checkpoint", str(ckpt),
                     "--out", "gate.csv"]) == 2

    def test_gate_stats_csv(self, root):
        ckpt = run_train(root)
        assert main(["gate-stats", "--checkpoint", str(ckpt),
                     "--samples", "32", "--episodes", "1",
                     "--out", "gate.csv"]) == 0
        rows = list(csv.DictReader((root / "gate.csv").open()))
        assert len(rows) == 12  # (step, horizon) pairs for H=6, N=2
        by_step = {}
        for row in rows:
            by_step.setdefault(int(row["step"]), []).append(
                float(row["mean_weight"]))
        assert sorted(by_step) == list(range(1, 7))
        for weights in by_step.values():
            assert sum(weights) == pytest.approx(1.0, abs=1e-4)

    def test_dyninfer_sweep_csv(self, root):
        ckpt = run_train(root)
        assert main(["dyninfer-sweep", "--checkpoint", str(ckpt),
                     "--ratios", "1.0,2.0", "--trials", "1",
                     "--out", "dyn.csv"]) == 0
        rows = list(csv.DictReader((root / "dyn.csv").open()))
        assert [float(r["r"]) for r in rows] == [1.0, 2.0]
        for r in rows:
            assert 0.0 <= float(r["success_rate"]) <= 1.0
            assert float(r["mean_prefix"]) >= 3.0
