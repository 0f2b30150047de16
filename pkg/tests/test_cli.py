import json
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from aenib.cli import main
from aenib.config import ExperimentConfig, load_config, save_config
from aenib.datasets import write_idx

rng = np.random.default_rng(21)


@pytest.fixture(scope="module")
def digit_root(tmp_path_factory):
    """A tiny synthetic digit-shaped dataset in the classic binary layout."""
    root = tmp_path_factory.mktemp("digits")
    r = np.random.default_rng(0)

    def blobby(n):
        # images whose mean intensity encodes the class, learnable quickly
        labels = r.integers(0, 10, n).astype(np.uint8)
        base = r.random((n, 28, 28)) * 0.15
        bump = (labels / 12.0)[:, None, None]
        imgs = np.clip(base + bump, 0, 1)
        return (imgs * 255).astype(np.uint8), labels

    tr_x, tr_y = blobby(512)
    te_x, te_y = blobby(128)
    write_idx(root / "train-images-idx3-ubyte.gz", tr_x)
    write_idx(root / "train-labels-idx1-ubyte.gz", tr_y)
    write_idx(root / "t10k-images-idx3-ubyte.gz", te_x)
    write_idx(root / "t10k-labels-idx1-ubyte.gz", te_y)
    return root


def smoke_config(digit_root, out_dir, steps=60, **overrides) -> Path:
    cfg = ExperimentConfig()
    cfg.encoder.conv_channels = (4, 8, 8, 8)
    cfg.encoder.k = 8
    cfg.encoder.k_n = 16
    cfg.encoder.mlp_hidden = 32
    cfg.encoder.sim_hidden = 16
    cfg.encoder.sim_embed_dim = 8
    cfg.decoder.conv_channels = (8, 4)
    cfg.train.total_steps = steps
    cfg.train.checkpoint_every = steps
    cfg.train.eval_every = steps
    cfg.train.encoder_opt.warmup_steps = 5
    cfg.eval.ood_noise_count = 64
    cfg.eval.smoothing.n0 = 10
    cfg.eval.smoothing.n = 50
    cfg.eval.smoothing.subset = 4
    cfg.dataset_root = str(digit_root)
    cfg.out_dir = str(out_dir)
    cfg.seed = 11
    for key, value in overrides.items():
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = getattr(node, p)
        setattr(node, parts[-1], value)
    path = out_dir / "config.yaml"
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, path)
    return path


class TestConfig:
    def test_yaml_round_trip(self, tmp_path, digit_root):
        p = smoke_config(digit_root, tmp_path)
        cfg = load_config(p)
        assert cfg.encoder.conv_channels == (4, 8, 8, 8)
        assert cfg.train.total_steps == 60

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("bogus_section: 1\n")
        with pytest.raises(ValueError):
            load_config(p)

    def test_override_flag(self, tmp_path, digit_root):
        p = smoke_config(digit_root, tmp_path)
        cfg = load_config(p, overrides=["train.total_steps=5", "weights.beta=0.01"])
        assert cfg.train.total_steps == 5
        assert cfg.weights.beta == 0.01

    def test_hash_stability(self, tmp_path, digit_root):
        p = smoke_config(digit_root, tmp_path)
        assert load_config(p).config_hash() == load_config(p).config_hash()


class TestTrainCommand:
    def test_missing_dataset_exits_2(self, tmp_path, capsys):
        cfg_path = smoke_config(tmp_path / "d", tmp_path, steps=2)
        code = main(["train", "--config", str(cfg_path), "--quiet"])
        assert code == 2
        err = capsys.readouterr().err
        rec = json.loads(err.strip().splitlines()[-1])
        assert rec["error"] == "missing-dataset"
        assert "path" in rec

    def test_smoke_train_under_budget(self, tmp_path, digit_root):
        out = tmp_path / "run"
        cfg_path = smoke_config(digit_root, out, steps=200)
        t0 = time.perf_counter()
        code = main(["train", "--config", str(cfg_path), "--quiet"])
        elapsed = time.perf_counter() - t0
        assert code == 0
        assert elapsed < 120.0  # smoke budget: a tiny config stays fast
        assert (out / "summary.json").exists()
        assert (out / "checkpoint_latest.ckpt").exists()
        assert (out / "metrics.jsonl").exists()

    def test_identical_seeds_identical_summaries(self, tmp_path, digit_root):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            cfg_path = smoke_config(digit_root, out, steps=8)
            assert main(["train", "--config", str(cfg_path), "--quiet"]) == 0
            outs.append((out / "summary.json").read_bytes())
        assert outs[0] == outs[1]


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, digit_root):
    out = tmp_path_factory.mktemp("trained")
    cfg_path = smoke_config(digit_root, out, steps=40)
    assert main(["train", "--config", str(cfg_path), "--quiet"]) == 0
    return out


class TestEvalCommand:
    def test_corruption_mode_table_shape(self, trained_run, tmp_path):
        out = tmp_path / "corr"
        code = main(["eval", "--checkpoint", str(trained_run / "checkpoint_latest.ckpt"),
                     "--mode", "corruption", "--out", str(out)])
        assert code == 0
        table = json.loads((out / "error_table.json").read_text())
        kinds = {c["kind"] for c in table["cells"]}
        severities = {c["severity"] for c in table["cells"]}
        assert len(kinds) == 7 and severities == {1, 2, 3, 4, 5}
        assert "clean_error" in table
        assert "config_hash" in table and "seed" in table
        csv_first = (out / "error_table.csv").read_text().splitlines()
        assert csv_first[0].startswith("# config_hash=")
        assert csv_first[1] == "kind,severity,error"

    def test_ood_mode_rows_per_score_and_pair(self, trained_run, tmp_path):
        out = tmp_path / "ood"
        code = main(["eval", "--checkpoint", str(trained_run / "checkpoint_latest.ckpt"),
                     "--mode", "ood", "--out", str(out)])
        assert code == 0
        det = json.loads((out / "detection.json").read_text())
        scores = [r["score"] for r in det["results"]]
        assert sorted(scores) == sorted(["msp", "dirichlet", "nuisance", "combined"])
        assert (out / "dump_in.jsonl").exists()

    def test_certify_mode_emits_curve(self, trained_run, tmp_path):
        out = tmp_path / "cert"
        code = main(["eval", "--checkpoint", str(trained_run / "checkpoint_latest.ckpt"),
                     "--mode", "certify", "--out", str(out)])
        assert code == 0
        curve = json.loads((out / "certified_curve.json").read_text())
        accs = curve["certified_accuracy"]
        assert all(a >= b for a, b in zip(accs, accs[1:]))  # monotone non-increasing
        assert (out / "certify.csv").exists()

    def test_swap_and_resample_mosaics(self, trained_run, tmp_path):
        for mode, fname in (("swap", "swap_mosaic.png"), ("resample", "resample_mosaic.png")):
            out = tmp_path / mode
            code = main(["eval", "--checkpoint",
                         str(trained_run / "checkpoint_latest.ckpt"),
                         "--mode", mode, "--out", str(out)])
            assert code == 0
            assert (out / fname).exists()

    def test_lemma1_mode_all_pass(self, trained_run, tmp_path):
        out = tmp_path / "lemma"
        code = main(["eval", "--checkpoint", str(trained_run / "checkpoint_latest.ckpt"),
                     "--mode", "lemma1", "--out", str(out)])
        assert code == 0
        rep = json.loads((out / "lemma1_report.json").read_text())
        assert rep["all_ok"] and len(rep["fixtures"]) == 5

    def test_bad_checkpoint_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "junk.ckpt"
        bad.write_bytes(b"nope")
        code = main(["eval", "--checkpoint", str(bad), "--mode", "corruption"])
        assert code == 2
        rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert rec["error"] == "bad-checkpoint"

    def test_combined_score_on_vq_checkpoint_fails_cleanly(self, tmp_path, digit_root,
                                                           capsys):
        out = tmp_path / "vitrun"
        cfg_path = smoke_config(
            digit_root, out, steps=4,
            **{"encoder.family": "small-transformer", "encoder.embed_dim": 64,
               "encoder.depth": 1, "encoder.heads": 4, "decoder.depth": 1,
               "weights.recon_kind": "d2sq"})
        assert main(["train", "--config", str(cfg_path), "--quiet"]) == 0
        code = main(["eval", "--checkpoint", str(out / "checkpoint_latest.ckpt"),
                     "--mode", "ood", "--out", str(tmp_path / "oodvq")])
        assert code == 2
        rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert rec["error"] == "unsupported-configuration"


class TestReportCommand:
    def test_training_only_run_renders_loss_curves(self, trained_run, tmp_path):
        out = tmp_path / "rep"
        code = main(["report", str(trained_run), "--out", str(out)])
        assert code == 0
        assert (out / "loss_curves.png").exists()
        assert (out / "summary.md").exists()

    def test_corrupted_metrics_line_counted(self, trained_run, tmp_path):
        run = tmp_path / "run2"
        run.mkdir()
        good = (trained_run / "metrics.jsonl").read_text().splitlines()[:5]
        (run / "metrics.jsonl").write_text("\n".join(good + ["{broken json", ""]))
        out = tmp_path / "rep2"
        code = main(["report", str(run), "--out", str(out)])
        assert code == 0
        assert "skipped 1 corrupted metrics line" in (out / "summary.md").read_text()

    def test_tables_byte_identical_on_regeneration(self, trained_run, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["report", str(trained_run), "--out", str(out1)]) == 0
        assert main(["report", str(trained_run), "--out", str(out2)]) == 0
        assert (out1 / "summary.md").read_bytes() == (out2 / "summary.md").read_bytes()

    def test_empty_dir_exits_2(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["report", str(empty)]) == 2

    def test_missing_dir_exits_2(self, tmp_path):
        assert main(["report", str(tmp_path / "missing")]) == 2


def test_checkpoint_save_load_save_byte_identical_via_trainer(tmp_path, digit_root):
    out = tmp_path / "ck"
    cfg_path = smoke_config(digit_root, out, steps=4)
    assert main(["train", "--config", str(cfg_path), "--quiet"]) == 0
    from aenib.checkpoint import load_checkpoint, save_checkpoint
    p1 = out / "checkpoint_latest.ckpt"
    loaded = load_checkpoint(p1)
    p2 = tmp_path / "resaved.ckpt"
    save_checkpoint(p2, arrays=loaded.arrays, step=loaded.step, seed=loaded.seed,
                    config=loaded.config, extra_meta=loaded.meta)
    assert p1.read_bytes() == p2.read_bytes()
