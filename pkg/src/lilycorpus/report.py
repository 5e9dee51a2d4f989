"""Probe report rendering: delimited tables, JSON, and a layer figure."""

from __future__ import annotations

import json
from pathlib import Path

from .probe import ProbeReport

REPORT_COLUMNS = (
    "task", "layer", "model", "n_samples", "n_classes",
    "acc_mean", "acc_std", "precision_mean", "precision_std",
    "recall_mean", "recall_std",
)


def report_to_csv(report: ProbeReport) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for row in report.rows:
        lines.append(",".join([
            row.task,
            str(row.layer),
            row.model,
            str(row.n_samples),
            str(row.n_classes),
            f"{row.acc_mean:.4f}",
            f"{row.acc_std:.4f}",
            f"{row.precision_mean:.4f}",
            f"{row.precision_std:.4f}",
            f"{row.recall_mean:.4f}",
            f"{row.recall_std:.4f}",
        ]))
    return "\n".join(lines) + "\n"


def report_to_json(report: ProbeReport) -> str:
    payload = {
        "metadata": report.metadata,
        "rows": [
            {
                "task": row.task,
                "layer": row.layer,
                "model": row.model,
                "n_samples": row.n_samples,
                "n_classes": row.n_classes,
                "acc_mean": row.acc_mean,
                "acc_std": row.acc_std,
                "precision_mean": row.precision_mean,
                "precision_std": row.precision_std,
                "recall_mean": row.recall_mean,
                "recall_std": row.recall_std,
            }
            for row in report.rows
        ],
        "confusion": report.confusions,
    }
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def plot_layer_accuracy(report: ProbeReport, path: str | Path) -> None:
    """Accuracy (mean over folds, std as error bars) against layer, one
    series per task. PNG output is kept byte-deterministic."""
    import matplotlib
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    by_task: dict[str, list] = {}
    for row in report.rows:
        by_task.setdefault(row.task, []).append(row)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for task in sorted(by_task):
        rows = sorted(by_task[task], key=lambda r: r.layer)
        layers = [r.layer for r in rows]
        means = [r.acc_mean for r in rows]
        stds = [r.acc_std for r in rows]
        ax.errorbar(layers, means, yerr=stds, marker="o", capsize=3,
                    label=task)
    ax.set_xlabel("encoder layer")
    ax.set_ylabel("probe accuracy (mean over folds)")
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(sorted({r.layer for r in report.rows}))
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def write_report(
    report: ProbeReport, out_dir: str | Path, stem: str = "probe_report",
    figure: bool = True,
) -> list[Path]:
    """Write CSV + JSON (+ PNG) into out_dir; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    csv_path = out / f"{stem}.csv"
    csv_path.write_text(report_to_csv(report), encoding="utf-8")
    written.append(csv_path)
    json_path = out / f"{stem}.json"
    json_path.write_text(report_to_json(report), encoding="utf-8")
    written.append(json_path)
    if figure:
        png_path = out / f"{stem}_layers.png"
        plot_layer_accuracy(report, png_path)
        written.append(png_path)
    return written
