"""Delimited reports and matplotlib figures for training and analysis runs."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def write_eval_csv(metrics: dict[str, float], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name, value in metrics.items():
            w.writerow([name, f"{value:.2f}"])


def plot_loss_curve(history: list[dict], path: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    epochs = [row["epoch"] for row in history]
    for key, label in (("l_align", "alignment"), ("l_he1", "layer distill"),
                       ("l_he2", "attribute distill"), ("l_reg", "regularizer")):
        ax.plot(epochs, [row[key] for row in history], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog")
    ax.legend()
    ax.set_title("training loss by term")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_removal_csv(rows_by_mode: dict[str, list[dict]], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "run", "hits_at_1", "jaccard_attributes",
                    "jaccard_neighbors"])
        for mode, rows in rows_by_mode.items():
            for row in rows:
                w.writerow([mode, row["run"], f"{row['hits_at_1']:.2f}",
                            f"{row['jaccard_attributes']:.4f}",
                            f"{row['jaccard_neighbors']:.4f}"])


def plot_removal(rows_by_mode: dict[str, list[dict]], path: str) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4.5))
    for mode, rows in rows_by_mode.items():
        runs = [row["run"] for row in rows]
        ax1.plot(runs, [row["hits_at_1"] for row in rows], marker="o", label=mode)
        key = "jaccard_attributes" if mode != "neighbors" else "jaccard_neighbors"
        ax2.plot(runs, [row[key] for row in rows], marker="o", label=mode)
    ax1.set_xlabel("removal run")
    ax1.set_ylabel("Hits@1 (%)")
    ax1.set_title("accuracy under feature removal")
    ax1.legend()
    ax2.set_xlabel("removal run")
    ax2.set_ylabel("mean explanation Jaccard")
    ax2.set_title("explanation consistency")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_hits(metrics: dict[str, float], path: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    names = list(metrics)
    ax.bar(names, [metrics[n] for n in names])
    ax.set_ylim(0, 100)
    ax.set_ylabel("%")
    ax.set_title("alignment accuracy")
    for i, n in enumerate(names):
        ax.text(i, metrics[n] + 1, f"{metrics[n]:.2f}", ha="center")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_partition_sizes(sizes: list[int], edge_cut: int, path: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(sizes)), sizes)
    ax.set_xlabel("part")
    ax.set_ylabel("entities")
    ax.set_title(f"partition balance (edge cut {edge_cut})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_partition_csv(parts: list[set[int]], names, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["entity", "part"])
        for p, members in enumerate(parts):
            for v in sorted(members):
                w.writerow([names(v), p])


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
