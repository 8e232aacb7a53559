"""Report emission: delimited files plus rendered figures.

Every report path writes machine-readable CSV/JSON and a matplotlib
figure next to it, so runs can be inspected without replotting.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .gan import DistributionReport  # noqa: E402


def write_history_csv(history: list, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "d_loss", "g_loss", "d_accuracy"])
        for i, (d_loss, g_loss, acc) in enumerate(history):
            writer.writerow([i, repr(d_loss), repr(g_loss), repr(acc)])


def plot_history(history: list, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    hist = np.asarray(history, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = np.arange(hist.shape[0])
    ax.plot(epochs, hist[:, 0], label="discriminator loss", lw=1.0)
    ax.plot(epochs, hist[:, 1], label="generator loss", lw=1.0)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, hist[:, 2], label="discriminator accuracy",
             color="tab:green", lw=1.0, alpha=0.7)
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0.0, 1.05)
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_distribution_report(report: DistributionReport, out_dir, stem) -> dict:
    """CSV (shared-bin histograms), JSON (KS statistics), PNG (figure).

    Returns the written paths keyed by kind.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.dist.csv"
    json_path = out_dir / f"{stem}.dist.json"
    png_path = out_dir / f"{stem}.dist.png"

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["parameter", "bin_lo", "bin_hi", "real_count", "generated_count"])
        for entry in report.entries:
            for lo, hi, rc, gc in zip(entry.bin_edges[:-1], entry.bin_edges[1:],
                                      entry.real_counts, entry.gen_counts):
                writer.writerow([entry.name, repr(float(lo)), repr(float(hi)),
                                 int(rc), int(gc)])

    payload = {
        "n_real": report.n_real,
        "n_generated": report.n_generated,
        "ks": {entry.name: entry.ks for entry in report.entries},
    }
    json_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    for ax, entry in zip(axes.ravel(), report.entries):
        centers = 0.5 * (entry.bin_edges[:-1] + entry.bin_edges[1:])
        width = np.diff(entry.bin_edges)
        ax.bar(centers, entry.real_counts, width=width, alpha=0.55, label="real")
        ax.bar(centers, entry.gen_counts, width=width, alpha=0.55, label="generated")
        ax.set_title(f"{entry.name} (KS = {entry.ks:.3f})", fontsize=9)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
    return {"csv": csv_path, "json": json_path, "png": png_path}


def write_encode_summary(rows: list[dict], path) -> None:
    """Per-room encoding summary: count, T60 mean/std, mean reflection count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["room", "count", "t60_mean", "t60_std", "mean_d"])
        for row in rows:
            writer.writerow([row["room"], row["count"],
                             repr(row["t60_mean"]), repr(row["t60_std"]),
                             repr(row["mean_d"])])


def write_stats_rollup(per_room: dict[str, DistributionReport], path) -> None:
    """Cross-room KS table, one row per room."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names: list[str] = []
    for report in per_room.values():
        for entry in report.entries:
            if entry.name not in names:
                names.append(entry.name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["room"] + [f"ks_{n}" for n in names])
        for room in sorted(per_room):
            ks = {e.name: e.ks for e in per_room[room].entries}
            writer.writerow([room] + [repr(ks.get(n, float("nan"))) for n in names])
