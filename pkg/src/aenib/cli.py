"""Command-line surface: train / eval / report.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime or training
failure. Failures emit a one-line machine-readable JSON error record on
stderr. Every table written embeds the run's config hash and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import ExperimentConfig, load_config, save_config
from .datasets import Dataset, gaussian_noise_images, load_digit_dataset
from .errors import ConfigurationError, TrainingDivergenceError
from .evaluation import (ErrorTable, evaluate_corruptions, resample_nuisance,
                         save_mosaic, swap_nuisance)
from .models import ConvAENIB, build_model
from .ood import ScoreKind, detection_metrics, score_samples
from .smoothing import SmoothingConfig, certified_accuracy_curve, smoothed_predict
from .training import STREAM_EVAL, Trainer, build_from_config, fit, step_rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _error_record(kind: str, message: str, **extra):
    rec = {"error": kind, "message": message, **extra}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def _resolve_data_root(cfg: ExperimentConfig) -> Path:
    root = Path(cfg.dataset_root)
    if not root.is_absolute():
        base = os.environ.get("AENIB_DATA_ROOT", "")
        if base:
            root = Path(base) / root
    return root


def _load_splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    root = _resolve_data_root(cfg)
    train = load_digit_dataset(root, "train")
    test = load_digit_dataset(root, "test")
    return train, test


def _stamp(cfg_hash: str, seed: int, payload: dict) -> dict:
    out = {"config_hash": cfg_hash, "seed": seed}
    out.update(payload)
    return out


def write_json(path: Path, obj: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list[str], rows: list, cfg_hash: str, seed: int):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash} seed={seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    try:
        train_ds, test_ds = _load_splits(cfg)
    except FileNotFoundError as e:
        _error_record("missing-dataset", str(e), path=str(_resolve_data_root(cfg)))
        return EXIT_CONFIG
    mean, std = train_ds.channel_stats()
    cfg.encoder.norm_mean, cfg.encoder.norm_std = mean, std
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.yaml")
    cfg_hash = cfg.config_hash()

    def log(rec):
        if not args.quiet and (rec.get("kind") == "eval" or rec.get("step", 0) % 1000 == 0):
            print(json.dumps(rec, sort_keys=True))

    try:
        model, history = fit(train_ds, test_ds, cfg, out_dir=out_dir, log_fn=log)
    except TrainingDivergenceError as e:
        _error_record("training-divergence", str(e), term=e.term, step=e.step)
        return EXIT_RUNTIME
    last = history.reports[-1] if history.reports else {}
    snap = history.snapshots[-1] if history.snapshots else {}
    summary = _stamp(cfg_hash, cfg.seed, {
        "objective": cfg.train.objective,
        "total_steps": cfg.train.total_steps,
        "final_losses": {k: v for k, v in last.items() if k not in ("step", "lr")},
        "clean_error": snap.get("clean_error"),
        "ood_auroc_noise": snap.get("ood_auroc_noise"),
    })
    write_json(out_dir / "summary.json", summary)
    if not args.quiet:
        print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def _model_from_checkpoint(path, override: bool = False):
    loaded = load_checkpoint(path)
    cfg_dict = loaded.config
    cfg = _config_from_dict(cfg_dict)
    model = build_from_config(cfg)
    prefix = "model."
    model.load_state({k[len(prefix):]: v for k, v in loaded.arrays.items()
                      if k.startswith(prefix)})
    model.eval()
    return model, cfg, loaded


def _config_from_dict(data: dict) -> ExperimentConfig:
    from .config import _build
    return _build(ExperimentConfig, data)


def _score_dump(model, images, labels, alpha: float, batch: int = 256) -> list[dict]:
    from .autodiff import Tensor, no_grad
    rows = []
    for i in range(0, images.shape[0], batch):
        chunk = images[i:i + batch]
        with no_grad():
            res = model.encode(Tensor(chunk.astype(model.spec.np_dtype)))
            probs = model.classify(res.pair.z).data
        zn = res.pair.z_n.data if not res.pair.is_vq else None
        for j in range(chunk.shape[0]):
            rows.append({
                "id": i + j,
                "label": int(labels[i + j]) if labels is not None else -1,
                "probs": [float(p) for p in probs[j]],
                "z_n": [float(v) for v in zn[j]] if zn is not None else None,
            })
    return rows


def _dump_scores(rows: list[dict], kind: ScoreKind, alpha: float) -> np.ndarray:
    probs = np.array([r["probs"] for r in rows])
    zn = None
    if rows and rows[0].get("z_n") is not None:
        zn = np.array([r["z_n"] for r in rows])
    return score_samples(kind, probs, zn, alpha)


def cmd_eval(args) -> int:
    out_dir = Path(args.out or "eval_out")
    try:
        model, cfg, loaded = _model_from_checkpoint(args.checkpoint)
    except (ConfigurationError, FileNotFoundError) as e:
        _error_record("bad-checkpoint", str(e), path=str(args.checkpoint))
        return EXIT_CONFIG
    cfg_hash = loaded.config_hash
    seed = args.seed if args.seed is not None else loaded.seed
    mode = args.mode
    try:
        if mode == "corruption":
            return _eval_corruption(model, cfg, cfg_hash, seed, out_dir)
        if mode == "ood":
            return _eval_ood(model, cfg, cfg_hash, seed, out_dir, args)
        if mode == "certify":
            return _eval_certify(model, cfg, cfg_hash, seed, out_dir)
        if mode == "swap":
            return _eval_swap(model, cfg, cfg_hash, seed, out_dir)
        if mode == "resample":
            return _eval_resample(model, cfg, cfg_hash, seed, out_dir)
        if mode == "lemma1":
            return _eval_lemma1(cfg_hash, seed, out_dir, args)
        _error_record("bad-mode", f"unknown eval mode {mode!r}")
        return EXIT_CONFIG
    except ConfigurationError as e:
        _error_record("unsupported-configuration", str(e), mode=mode)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        _error_record("missing-input", str(e), mode=mode)
        return EXIT_CONFIG


def _eval_corruption(model, cfg, cfg_hash, seed, out_dir) -> int:
    _, test_ds = _load_splits(cfg)
    table = evaluate_corruptions(model, test_ds, cfg.eval.corruption_kinds,
                                 cfg.eval.severities, seed=seed)
    rows = [["clean", 0, repr(table.clean_error)]]
    rows += [[k, s, repr(e)] for k, s, e in table.to_rows()]
    write_csv(out_dir / "error_table.csv", ["kind", "severity", "error"], rows,
              cfg_hash, seed)
    write_json(out_dir / "error_table.json",
               _stamp(cfg_hash, seed, json.loads(table.to_json())))
    print(f"clean error {table.clean_error:.4f}; "
          f"per-severity averages {table.per_severity_average()}")
    return EXIT_OK


def _eval_ood(model, cfg, cfg_hash, seed, out_dir, args) -> int:
    _, test_ds = _load_splits(cfg)
    alpha = cfg.eval.dirichlet_alpha
    in_rows = _score_dump(model, test_ds.images, test_ds.labels, alpha)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "dump_in.jsonl", "w") as fh:
        for r in in_rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    sources = args.ood or ["noise"]
    results = []
    for src in sources:
        if src == "noise":
            rng = step_rng(seed, STREAM_EVAL, 0)
            images = gaussian_noise_images(cfg.eval.ood_noise_count,
                                           test_ds.images.shape[1:], rng)
            out_rows = _score_dump(model, images, None, alpha)
            name = "noise"
        elif src.startswith("dump:"):
            path = Path(src[5:])
            out_rows = [json.loads(line) for line in path.read_text().splitlines()]
            name = path.stem
        else:
            ds = load_digit_dataset(Path(src), "test")
            out_rows = _score_dump(model, ds.images, ds.labels, alpha)
            name = Path(src).name
        with open(out_dir / f"dump_out_{name}.jsonl", "w") as fh:
            for r in out_rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        for kind in cfg.eval.score_kinds:
            kind = ScoreKind(kind)
            if kind in (ScoreKind.NUISANCE, ScoreKind.COMBINED) and model.spec.is_vq:
                from .errors import UnsupportedConfigurationError
                raise UnsupportedConfigurationError(
                    f"score kind {kind.value!r} needs a dense nuisance channel; "
                    f"this checkpoint uses the VQ path")
            s_in = _dump_scores(in_rows, kind, alpha)
            s_out = _dump_scores(out_rows, kind, alpha)
            det = detection_metrics(s_in, s_out)
            results.append({"score": kind.value, "ood": name, **det.as_dict()})
    write_csv(out_dir / "detection.csv",
              ["score", "ood", "auroc", "aupr", "fpr_at_95tpr", "n_in", "n_out"],
              [[r["score"], r["ood"], repr(r["auroc"]), repr(r["aupr"]),
                repr(r["fpr_at_95tpr"]), r["n_in"], r["n_out"]] for r in results],
              cfg_hash, seed)
    write_json(out_dir / "detection.json", _stamp(cfg_hash, seed, {"results": results}))
    for r in results:
        print(f"{r['score']:>9s} vs {r['ood']}: AUROC {r['auroc']:.4f} "
              f"AUPR {r['aupr']:.4f} FPR@95 {r['fpr_at_95tpr']:.4f}")
    return EXIT_OK


def _make_label_classifier(model):
    def classify(batch: np.ndarray) -> np.ndarray:
        return np.argmax(model.predict_probs(batch.astype(np.float32)), axis=-1)
    return classify


def _eval_certify(model, cfg, cfg_hash, seed, out_dir) -> int:
    _, test_ds = _load_splits(cfg)
    sm = cfg.eval.smoothing
    scfg = SmoothingConfig(sigma=sm.sigma, n0=sm.n0, n=sm.n, alpha_conf=sm.alpha_conf)
    subset = min(sm.subset, len(test_ds))
    images, labels = test_ds.images[:subset], test_ds.labels[:subset]
    fracs, records = certified_accuracy_curve(
        _make_label_classifier(model), images, labels, list(sm.radii), scfg,
        seed=seed, n_classes=test_ds.n_classes)
    write_csv(out_dir / "certify.csv",
              ["id", "label", "prediction", "radius", "p_lower"],
              [[r["index"], r["label"], r["prediction"], repr(r["radius"]),
                repr(r["p_lower"])] for r in records], cfg_hash, seed)
    write_json(out_dir / "certified_curve.json", _stamp(cfg_hash, seed, {
        "sigma": scfg.sigma, "n0": scfg.n0, "n": scfg.n,
        "alpha_conf": scfg.alpha_conf,
        "radii": list(sm.radii), "certified_accuracy": fracs}))
    print("certified accuracy:", {f"{r:g}": round(f, 4) for r, f in zip(sm.radii, fracs)})
    return EXIT_OK


def _eval_swap(model, cfg, cfg_hash, seed, out_dir) -> int:
    _, test_ds = _load_splits(cfg)
    rng = step_rng(seed, STREAM_EVAL, 1)
    n = 8
    idx_a = rng.choice(len(test_ds), n, replace=False)
    idx_b = rng.choice(len(test_ds), n, replace=False)
    tiles = []
    for i in idx_a:
        for j in idx_b:
            tiles.append(swap_nuisance(model, test_ds.images[i:i + 1],
                                       test_ds.images[j:j + 1])[0])
    save_mosaic(np.stack(tiles), out_dir / "swap_mosaic.png", grid=(n, n))
    write_json(out_dir / "swap_meta.json", _stamp(cfg_hash, seed, {
        "rows_semantic_from": [int(v) for v in idx_a],
        "cols_nuisance_from": [int(v) for v in idx_b]}))
    print(f"wrote {n}x{n} swap mosaic")
    return EXIT_OK


def _eval_resample(model, cfg, cfg_hash, seed, out_dir, count: int = 8,
                   n_inputs: int = 8) -> int:
    _, test_ds = _load_splits(cfg)
    rng = step_rng(seed, STREAM_EVAL, 2)
    tiles, variances = [], []
    for i in range(n_inputs):
        x = test_ds.images[i:i + 1]
        samples = resample_nuisance(model, x, count, rng)
        tiles.append(model.decode(model.encode(x).pair).data[0])
        tiles.extend(s[0] for s in samples)
        variances.append(float(np.var(np.stack([s[0] for s in samples]), axis=0).mean()))
    save_mosaic(np.stack(tiles), out_dir / "resample_mosaic.png",
                grid=(n_inputs, count + 1))
    write_json(out_dir / "resample_stats.json", _stamp(cfg_hash, seed, {
        "count": count, "mean_pixel_variance": float(np.mean(variances)),
        "per_input_variance": variances}))
    print(f"mean resample pixel variance {np.mean(variances):.5f}")
    return EXIT_OK


def _eval_lemma1(cfg_hash, seed, out_dir, args) -> int:
    from importlib import resources
    from .infotheory import load_lemma1_fixture, verify_lemma1
    fixture_dir = args.fixtures
    if fixture_dir:
        paths = sorted(Path(fixture_dir).glob("*.txt"))
    else:
        base = resources.files("aenib") / "fixtures" / "lemma1"
        paths = sorted(Path(str(base)).glob("*.txt"))
    results, all_ok = [], True
    for p in paths:
        joint, channel, fmap, expect = load_lemma1_fixture(p)
        rep = verify_lemma1(joint, channel, fmap)
        violated = rep.violated()
        if expect.startswith("satisfied"):
            ok = not violated and rep.equality_holds
        else:
            want = expect.split()[1:]
            ok = violated == want
        all_ok &= ok
        results.append({"fixture": p.name, "expect": expect,
                        "violated": violated, "i_x_y": rep.i_x_y,
                        "i_z_y": rep.i_z_y, "equality": rep.equality_holds,
                        "ok": ok})
    write_json(out_dir / "lemma1_report.json",
               _stamp(cfg_hash, seed, {"all_ok": all_ok, "fixtures": results}))
    for r in results:
        print(f"{'PASS' if r['ok'] else 'FAIL'} {r['fixture']}: expect {r['expect']}, "
              f"violated {r['violated']}")
    return EXIT_OK if all_ok else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# report

def cmd_report(args) -> int:
    from .reporting import render_report
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        _error_record("missing-run-dir", f"{run_dir} is not a directory")
        return EXIT_CONFIG
    try:
        summary = render_report(run_dir, Path(args.out) if args.out else run_dir / "report")
    except FileNotFoundError as e:
        _error_record("empty-run", str(e))
        return EXIT_CONFIG
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aenib",
        description="Nuisance-extended information bottleneck training and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a YAML config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", help="output directory (overrides config)")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--override", action="append", default=[],
                         help="dotted.key=value config override (repeatable)")
    p_train.add_argument("--quiet", action="store_true")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--mode", required=True,
                        choices=["corruption", "ood", "certify", "swap",
                                 "resample", "lemma1"])
    p_eval.add_argument("--out")
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--ood", action="append",
                        help="OOD source: 'noise', a dataset root, or dump:PATH")
    p_eval.add_argument("--fixtures", help="lemma1 fixture directory override")
    p_eval.set_defaults(fn=cmd_eval)

    p_rep = sub.add_parser("report", help="render plots and a summary for a run")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--out")
    p_rep.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except ConfigurationError as e:
        _error_record("configuration", str(e))
        return EXIT_CONFIG
    except (ValueError, KeyError) as e:
        _error_record("invalid-argument", str(e))
        return EXIT_CONFIG
    except Exception as e:  # runtime failures get a stable exit code
        _error_record("runtime", f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
