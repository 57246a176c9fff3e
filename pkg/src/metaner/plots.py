"""Figures for ablation and low-resource reports (written to files, never shown)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def ablation_figure(result, path):
    """Mean F1 per variant as bars, with each seed as a dot."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(result.variants))
    means = [100 * result.mean(v) for v in result.variants]
    ax.bar(x, means, color="#9db4c0", edgecolor="#33475b")
    for i, v in enumerate(result.variants):
        pts = [100 * result.f1[v, s] for s in result.seeds]
        ax.scatter(np.full(len(pts), i), pts, s=12, color="#33475b", zorder=3)
    ax.set_xticks(x)
    ax.set_xticklabels(result.variants, rotation=20)
    ax.set_ylabel("phrase F1 (%)")
    ax.set_title(f"target F1 over seeds {', '.join(map(str, result.seeds))}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def low_resource_figure(scores, path):
    """Direct transfer vs fine-tuned F1, one pair of bars per seed."""
    seeds = sorted(scores)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(seeds))
    ax.bar(x - 0.2, [100 * scores[s][0] for s in seeds], 0.4, label="direct")
    ax.bar(x + 0.2, [100 * scores[s][1] for s in seeds], 0.4, label="fine-tuned")
    ax.set_xticks(x)
    ax.set_xticklabels([f"seed {s}" for s in seeds])
    ax.set_ylabel("phrase F1 (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def loss_figure(logs, path):
    """Training loss curves; ``logs`` maps a label to (step, loss) pairs."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, pairs in logs.items():
        steps, losses = zip(*pairs) if pairs else ((), ())
        ax.plot(steps, losses, label=label, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("summed loss")
    if logs:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
