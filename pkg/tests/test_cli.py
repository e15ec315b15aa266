import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mmfusion.cli import main

TINY = {
    "text_encoder": {"d_model": 16, "n_heads": 2, "n_layers": 1, "ffn_width": 32,
                     "embedding_dim": 8, "share_layers": True, "max_len": 16},
    "image_encoder": {"d_model": 16, "n_heads": 2, "n_layers": 1, "ffn_width": 32,
                      "embedding_dim": 16, "share_layers": False, "max_len": 32},
    "trainer": {"epochs": 2, "batch_size": 8, "lr_text": 1e-3, "lr_image": 1e-3,
                "lr_other": 1e-3, "weight_decay": 5e-4},
    "data": {"n_classes": 3, "samples_per_class": 10, "image_size": 8,
             "patch_size": 4, "vocab_size": 16, "sentence_len": [3, 5],
             "noise_level": 0.0, "seed": 0},
    "seed": 0,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestTrain:
    def test_train_writes_all_artifacts(self, tiny_config, tmp_path):
        out = str(tmp_path / "run")
        assert main(["train", "--config", tiny_config, "--out", out]) == 0
        for name in ("loss_history.csv", "metrics.json", "pr_curve.csv",
                     "run_config.json"):
            assert os.path.exists(os.path.join(out, name)), name
        assert os.path.exists(os.path.join(out, "checkpoint", "weights.bin"))
        rows = read_csv(os.path.join(out, "loss_history.csv"))
        assert [r["epoch"] for r in rows] == ["0", "1"]

    def test_repeat_runs_are_byte_identical(self, tiny_config, tmp_path):
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["train", "--config", tiny_config, "--out", out1, "--seed", "7"]) == 0
        assert main(["train", "--config", tiny_config, "--out", out2, "--seed", "7"]) == 0
        h1 = open(os.path.join(out1, "loss_history.csv"), "rb").read()
        h2 = open(os.path.join(out2, "loss_history.csv"), "rb").read()
        assert h1 == h2
        w1 = open(os.path.join(out1, "checkpoint", "weights.bin"), "rb").read()
        w2 = open(os.path.join(out2, "checkpoint", "weights.bin"), "rb").read()
        assert w1 == w2

    def test_gamma_zero_total_equals_interaction_loss(self, tiny_config, tmp_path):
        out = str(tmp_path / "g0")
        assert main(["train", "--config", tiny_config, "--out", out, "--gamma", "0"]) == 0
        for row in read_csv(os.path.join(out, "loss_history.csv")):
            assert row["total"] == row["loss_H"]

    def test_zero_epochs_keeps_initialization(self, tiny_config, tmp_path):
        out = str(tmp_path / "e0")
        assert main(["train", "--config", tiny_config, "--out", out,
                     "--epochs", "0"]) == 0
        # checkpoint equals a freshly built model's parameters
        from mmfusion.checkpoint import load_checkpoint
        from mmfusion.data import generate
        from mmfusion.model import MultimodalClassifier, RunConfig
        cfg = RunConfig.from_dict(json.loads(open(tiny_config).read()))
        ds = generate(cfg.data)
        fresh = MultimodalClassifier(cfg, vocab_size=len(ds.vocab))
        stored = load_checkpoint(os.path.join(out, "checkpoint"))
        for name, p in fresh.named_parameters():
            assert np.array_equal(stored[name], p.data), name
        assert os.path.exists(os.path.join(out, "metrics.json"))

    def test_invalid_config_exits_2_with_diagnostics(self, tmp_path, capsys):
        bad = dict(TINY)
        bad["fusion"] = {"p": 0.0, "alpha": -1.0}
        bad["decision"] = {"gamma": 3.0}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "x")]) == 2
        err = capsys.readouterr().err
        assert "keep probability" in err
        assert "alpha" in err
        assert "gamma" in err

    def test_unknown_config_key_exits_2(self, tmp_path):
        doc = dict(TINY)
        doc["optimiser"] = {"lr": 1}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "x")]) == 2

    def test_missing_dataset_dir_exits_4(self, tiny_config, tmp_path):
        assert main(["train", "--config", tiny_config, "--data",
                     str(tmp_path / "nope"), "--out", str(tmp_path / "x")]) == 4


class TestGenerateAndEval:
    def test_generate_then_train_then_eval(self, tiny_config, tmp_path):
        data_dir = str(tmp_path / "ds")
        assert main(["generate", "--config", tiny_config, "--out", data_dir]) == 0
        assert os.path.exists(os.path.join(data_dir, "dataset.json"))
        run_dir = str(tmp_path / "run")
        assert main(["train", "--config", tiny_config, "--data", data_dir,
                     "--out", run_dir]) == 0
        eval_dir = str(tmp_path / "eval")
        assert main(["eval", "--config", tiny_config, "--data", data_dir,
                     "--checkpoint", os.path.join(run_dir, "checkpoint"),
                     "--out", eval_dir]) == 0
        report = json.loads(open(os.path.join(eval_dir, "metrics.json")).read())
        trained = json.loads(open(os.path.join(run_dir, "metrics.json")).read())
        assert report["accuracy"] == trained["accuracy"]

    def test_generate_from_spec_file(self, tmp_path):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(TINY["data"]))
        out = str(tmp_path / "ds")
        assert main(["generate", "--spec", str(spec_path), "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "images.bin"))


class TestAblate:
    def test_eight_rows_with_required_columns(self, tiny_config, tmp_path):
        out = str(tmp_path / "abl")
        assert main(["ablate", "--config", tiny_config, "--out", out]) == 0
        rows = read_csv(os.path.join(out, "ablation.csv"))
        assert len(rows) == 8
        combos = {(r["HAM"], r["RM"], r["MLF"]) for r in rows}
        assert len(combos) == 8
        for r in rows:
            assert r["error"] == ""
            assert 0.0 <= float(r["accuracy"]) <= 1.0
            assert r["seed"] == "0"

    def test_ablate_reproducible(self, tiny_config, tmp_path):
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        main(["ablate", "--config", tiny_config, "--out", out1])
        main(["ablate", "--config", tiny_config, "--out", out2])
        assert open(os.path.join(out1, "ablation.csv")).read() == \
            open(os.path.join(out2, "ablation.csv")).read()

    def test_row_failure_does_not_discard_other_rows(self, tiny_config, tmp_path,
                                                     monkeypatch):
        import mmfusion.cli as cli
        real = cli._train_once
        calls = {"n": 0}

        def flaky(cfg, dataset, out_dir=None):
            calls["n"] += 1
            if calls["n"] == 3:
                raise RuntimeError("synthetic failure for isolation test")
            return real(cfg, dataset, out_dir=out_dir)

        monkeypatch.setattr(cli, "_train_once", flaky)
        out = str(tmp_path / "abl")
        assert main(["ablate", "--config", tiny_config, "--out", out]) == 0
        rows = read_csv(os.path.join(out, "ablation.csv"))
        assert len(rows) == 8
        failed = [r for r in rows if r["error"]]
        assert len(failed) == 1 and "synthetic failure" in failed[0]["error"]
        assert sum(1 for r in rows if r["accuracy"]) == 7


class TestGammaSweep:
    def test_default_grid_six_rows_echoing_gammas(self, tiny_config, tmp_path):
        out = str(tmp_path / "sweep")
        assert main(["gamma-sweep", "--config", tiny_config, "--out", out]) == 0
        rows = read_csv(os.path.join(out, "gamma_sweep.csv"))
        assert [float(r["gamma"]) for r in rows] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
        for r in rows:
            assert r["error"] == ""
        notes = json.loads(open(os.path.join(out, "gamma_sweep_notes.json")).read())
        assert notes["full_scale_reference_optimum"] == 0.1

    def test_out_of_range_grid_rejected(self, tiny_config, tmp_path):
        assert main(["gamma-sweep", "--config", tiny_config,
                     "--out", str(tmp_path / "s"), "--grid", "0.0", "0.7"]) == 2


class TestBench:
    def test_three_topologies_with_positive_medians(self, tiny_config, tmp_path):
        out = str(tmp_path / "bench")
        assert main(["bench-attention", "--config", tiny_config, "--out", out,
                     "--repeats", "10"]) == 0
        rows = read_csv(os.path.join(out, "bench.csv"))
        assert sorted(r["topology"] for r in rows) == ["hybrid", "interaction", "merged"]
        for r in rows:
            assert float(r["median_ms"]) > 0.0
            assert int(r["parameters"]) > 0
        ref = json.loads(open(os.path.join(out, "bench_reference.json")).read())
        assert ref["latency_ms"]["hybrid"] == 11.25

    def test_too_few_repeats_rejected(self, tiny_config, tmp_path):
        assert main(["bench-attention", "--config", tiny_config,
                     "--out", str(tmp_path / "b"), "--repeats", "3"]) == 2


def test_module_invocation_round_trip(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(TINY))
    out = tmp_path / "run"
    proc = subprocess.run(
        [sys.executable, "-m", "mmfusion", "train", "--config", str(cfg),
         "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "loss_history.csv").exists()
