"""Matplotlib figure rendering for the CLI report paths.

Figures are written next to the delimited/JSON outputs; they are
presentation artifacts, never inputs to any computation.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

plt.rcParams.update({
    "figure.figsize": (5.0, 3.2),
    "axes.labelsize": 9,
    "font.size": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
})


def loss_curve(history, path: str):
    steps = [rec.step for rec in history]
    fig, ax = plt.subplots()
    ax.plot(steps, [rec.loss for rec in history], label="total", color="k")
    ax.plot(steps, [rec.loss_e for rec in history], label="caption", color="tab:blue")
    ax.plot(steps, [rec.loss_cls for rec in history], label="emotion", color="tab:red")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if all(rec.loss > 0 for rec in history):
        ax.set_yscale("log")
    ax.legend(loc="upper right")
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)


def metric_bars(report_dict: dict, path: str):
    keys = ["bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_l",
            "acc_sw", "acc_c", "bfs", "cfs"]
    values = [report_dict[k] for k in keys]
    fig, ax = plt.subplots()
    ax.bar(range(len(keys)), values, color="tab:blue")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels(keys, rotation=45, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(f"consensus metric: {report_dict['cider']:.3f}", fontsize=9)
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)


def bias_bars(report_dict: dict, path: str):
    labels = list(report_dict["proportions"].keys())
    values = [report_dict["proportions"][k] for k in labels]
    fig, ax = plt.subplots()
    ax.bar(range(len(labels)), values, color=["tab:red", "tab:gray", "tab:blue"])
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1.0)
    ax.set_ylabel("proportion of videos")
    for i, v in enumerate(values):
        ax.text(i, v + 0.01, f"{v:.1%}", ha="center", fontsize=8)
    fig.savefig(path, bbox_inches="tight", dpi=150)
    plt.close(fig)
