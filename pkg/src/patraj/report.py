"""Cross-fold summaries as delimited text plus matplotlib figures."""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import MetricsReport, read_reports, summarize  # noqa: E402

SUMMARY_TSV = "summary.tsv"
SUMMARY_JSONL = "summary.jsonl"


def group_reports(reports: Sequence[MetricsReport]) -> dict:
    groups = defaultdict(list)
    for r in reports:
        if r.kind == "fold":
            groups[(r.task, r.fingerprint)].append(r)
    return dict(sorted(groups.items()))


def summary_rows(reports: Sequence[MetricsReport]) -> list[tuple]:
    rows = []
    for (task, fp), group in group_reports(reports).items():
        for metric, stats in summarize(group).items():
            rows.append((task, fp[:12], metric, stats["mean"], stats["std"], stats["n"]))
    return rows


def write_summary(reports: Sequence[MetricsReport], out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / SUMMARY_TSV, "w", encoding="utf-8") as fh:
        fh.write("task\tconfig\tmetric\tmean\tstd\tn_folds\n")
        for task, fp, metric, mean, std, n in summary_rows(reports):
            fh.write(f"{task}\t{fp}\t{metric}\t{mean:.6f}\t{std:.6f}\t{n}\n")
    with open(out / SUMMARY_JSONL, "w", encoding="utf-8") as fh:
        for (task, fp), group in group_reports(reports).items():
            record = {"kind": "summary", "task": task, "fingerprint": fp,
                      "folds": sorted(r.fold for r in group if r.fold is not None),
                      "metrics": summarize(group), "schema_version": group[0].schema_version}
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    paths = {"summary_tsv": out / SUMMARY_TSV, "summary_jsonl": out / SUMMARY_JSONL}
    paths.update(plot_fold_metrics(reports, out))
    return paths


def plot_fold_metrics(reports: Sequence[MetricsReport], out_dir) -> dict:
    """Per-fold metric bars with the cross-fold mean marked, one figure per config."""
    out = Path(out_dir)
    written = {}
    for i, ((task, fp), group) in enumerate(group_reports(reports).items()):
        group = sorted(group, key=lambda r: (r.fold is None, r.fold))
        metrics = [m for m in MetricsReport.METRICS if any(getattr(r, m) is not None for r in group)]
        if not metrics:
            continue
        fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(metrics)), 4))
        width = 0.8 / len(group)
        x = np.arange(len(metrics))
        for j, r in enumerate(group):
            vals = [getattr(r, m) if getattr(r, m) is not None else np.nan for m in metrics]
            ax.bar(x + j * width - 0.4 + width / 2, vals, width, label=f"fold {r.fold}", alpha=0.8)
        means = [summarize(group)[m]["mean"] for m in metrics]
        ax.scatter(x, means, color="black", marker="_", s=400, zorder=3, label="mean")
        ax.set_xticks(x)
        ax.set_xticklabels(metrics, rotation=30, ha="right")
        ax.set_ylim(0, 1)
        ax.set_title(f"{task} ({fp[:12]})")
        ax.legend(fontsize=6, ncol=2)
        fig.tight_layout()
        path = out / f"fold_metrics_{i}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written[f"fold_metrics_{i}"] = path
    return written


def read_history(path) -> dict:
    curves = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        next(fh, None)
        for line in fh:
            fold, epoch, tr, va = line.rstrip("\n").split("\t")
            curves[int(fold)].append((int(epoch), float(tr), float(va)))
    return dict(curves)


def plot_history(history_path, out_path) -> Path:
    curves = read_history(history_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for fold, rows in sorted(curves.items()):
        epochs, tr, va = zip(*rows)
        line, = ax.plot(epochs, tr, lw=1, label=f"fold {fold} train")
        ax.plot(epochs, va, lw=1, ls="--", color=line.get_color())
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return Path(out_path)


def report(report_paths: Sequence, out_dir) -> dict:
    """Merge report files, write the summary and figures; learning curves if histories exist."""
    reports = [r for p in report_paths for r in read_reports(p)]
    paths = write_summary(reports, out_dir)
    for i, p in enumerate(report_paths):
        hist = Path(p).with_name("history.tsv")
        if hist.exists():
            paths[f"learning_curves_{i}"] = plot_history(hist, Path(out_dir) / f"learning_curves_{i}.png")
    return paths
