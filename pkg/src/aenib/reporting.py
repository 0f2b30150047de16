"""Run-report rendering: loss curves, corruption error bars, certified-accuracy
curves, and OOD score histograms, plus a consolidated markdown summary.

Tables and the summary are byte-stable across regenerations; figures carry no
timestamps. Corrupted metrics lines are skipped and counted as warnings.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_report"]


def _read_metrics(path: Path) -> tuple[list[dict], list[dict], int]:
    steps, evals, bad = [], [], 0
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            bad += 1
            continue
        (evals if rec.get("kind") == "eval" else steps).append(rec)
    return steps, evals, bad


def _plot_losses(steps: list[dict], out: Path):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    xs = [r["step"] for r in steps]
    for key in ("total", "vib", "recon", "nuis", "ind", "sim", "vq"):
        ys = [r.get(key) for r in steps]
        if any(v is not None for v in ys):
            axes[0].plot(xs, [v if v is not None else np.nan for v in ys],
                         label=key, linewidth=0.8)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("loss")
    axes[0].legend(fontsize=7)
    axes[0].set_title("loss terms")
    axes[1].plot(xs, [r.get("lr", np.nan) for r in steps], linewidth=0.8)
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("encoder lr")
    axes[1].set_title("learning rate")
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)


def _plot_error_table(table: dict, out: Path):
    cells = table["cells"]
    kinds = sorted({c["kind"] for c in cells})
    severities = sorted({c["severity"] for c in cells})
    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.8 / len(kinds)
    for i, kind in enumerate(kinds):
        errs = [next(c["error"] for c in cells
                     if c["kind"] == kind and c["severity"] == s) for s in severities]
        ax.bar(np.arange(len(severities)) + i * width, errs, width, label=kind)
    ax.axhline(table["clean_error"], color="k", linestyle=":", linewidth=1,
               label="clean")
    ax.set_xticks(np.arange(len(severities)) + 0.4)
    ax.set_xticklabels([str(s) for s in severities])
    ax.set_xlabel("severity")
    ax.set_ylabel("error rate")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)


def _plot_curve(curve: dict, out: Path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(curve["radii"], curve["certified_accuracy"], marker="o")
    ax.set_xlabel("radius")
    ax.set_ylabel("certified accuracy")
    ax.set_ylim(0, 1)
    ax.set_title(f"sigma={curve['sigma']}, n={curve['n']}")
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)


def _plot_score_hists(run_dir: Path, detection: dict, out: Path):
    from .ood import ScoreKind, score_samples
    dump_in = run_dir / "dump_in.jsonl"
    outs = sorted(run_dir.glob("dump_out_*.jsonl"))
    if not dump_in.exists() or not outs:
        return False
    rows_in = [json.loads(l) for l in dump_in.read_text().splitlines()]
    kinds = sorted({r["score"] for r in detection.get("results", [])})
    fig, axes = plt.subplots(1, max(len(kinds), 1), figsize=(4 * len(kinds), 3.2))
    axes = np.atleast_1d(axes)
    for ax, kind in zip(axes, kinds):
        def scores_of(rows):
            probs = np.array([r["probs"] for r in rows])
            zn = np.array([r["z_n"] for r in rows]) if rows[0].get("z_n") else None
            return score_samples(ScoreKind(kind), probs, zn)
        ax.hist(scores_of(rows_in), bins=50, alpha=0.6, label="in", density=True)
        for path in outs:
            rows_out = [json.loads(l) for l in path.read_text().splitlines()]
            ax.hist(scores_of(rows_out), bins=50, alpha=0.6,
                    label=path.stem.replace("dump_out_", ""), density=True)
        ax.set_title(kind, fontsize=9)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return True


def render_report(run_dir: Path, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    produced, warnings = [], 0
    lines = ["# Run report", ""]

    metrics = run_dir / "metrics.jsonl"
    if metrics.exists():
        steps, evals, bad = _read_metrics(metrics)
        warnings += bad
        if steps:
            _plot_losses(steps, out_dir / "loss_curves.png")
            produced.append("loss_curves.png")
            last = steps[-1]
            lines += [f"- training steps logged: {len(steps)} "
                      f"(final total {last.get('total'):.4f})"]
        if bad:
            lines += [f"- WARNING: skipped {bad} corrupted metrics line(s)"]
        for ev in evals[-3:]:
            lines += [f"- eval @ step {ev['step']}: clean_error={ev['clean_error']:.4f}, "
                      f"ood_auroc_noise={ev.get('ood_auroc_noise', float('nan')):.4f}"]

    summary = run_dir / "summary.json"
    if summary.exists():
        s = json.loads(summary.read_text())
        lines += ["", "## Training summary", "```",
                  json.dumps(s, indent=2, sort_keys=True), "```"]

    table_path = run_dir / "error_table.json"
    if table_path.exists():
        table = json.loads(table_path.read_text())
        _plot_error_table(table, out_dir / "corruption_errors.png")
        produced.append("corruption_errors.png")
        lines += ["", "## Corruption errors",
                  f"- clean error: {table['clean_error']:.4f}"]
        for sev, avg in sorted(table["per_severity_average"].items()):
            lines += [f"- severity {sev} average: {avg:.4f}"]

    curve_path = run_dir / "certified_curve.json"
    if curve_path.exists():
        curve = json.loads(curve_path.read_text())
        _plot_curve(curve, out_dir / "certified_accuracy.png")
        produced.append("certified_accuracy.png")
        lines += ["", "## Certified accuracy",
                  "| radius | accuracy |", "| --- | --- |"]
        lines += [f"| {r:g} | {a:.4f} |"
                  for r, a in zip(curve["radii"], curve["certified_accuracy"])]

    det_path = run_dir / "detection.json"
    if det_path.exists():
        det = json.loads(det_path.read_text())
        if _plot_score_hists(run_dir, det, out_dir / "ood_histograms.png"):
            produced.append("ood_histograms.png")
        lines += ["", "## OOD detection",
                  "| score | ood | auroc | aupr | fpr@95tpr |", "| --- | --- | --- | --- | --- |"]
        lines += [f"| {r['score']} | {r['ood']} | {r['auroc']:.4f} | {r['aupr']:.4f} "
                  f"| {r['fpr_at_95tpr']:.4f} |" for r in det.get("results", [])]

    if not produced and len(lines) <= 2:
        raise FileNotFoundError(f"no reportable artifacts under {run_dir}")
    (out_dir / "summary.md").write_text("\n".join(lines) + "\n")
    return {"artifacts": produced + ["summary.md"], "warnings": warnings,
            "out_dir": str(out_dir)}
