"""Report figures rendered straight to files (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import parse_region_id  # noqa: E402
from .metrics import Metrics  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.bbox": "tight",
}


def _figure(figsize):
    with plt.rc_context(STYLE):
        return plt.subplots(figsize=figsize)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    with plt.rc_context(STYLE):
        fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_mae_map(metrics: Metrics, path, title: str = "Per-region MAE") -> Path:
    coords = np.array([parse_region_id(r) for r in metrics.region_ids])
    fig, ax = _figure((7, 4))
    sc = ax.scatter(coords[:, 1], coords[:, 0], c=metrics.per_region_mae, cmap="viridis", marker="s", s=40)
    fig.colorbar(sc, ax=ax, label=f"MAE ({metrics.scale})")
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    ax.set_title(title)
    return _save(fig, path)


def plot_loss_curve(history: Sequence[Mapping], path) -> Path:
    epochs = [h["epoch"] for h in history]
    fig, ax = _figure((5, 3.5))
    ax.plot(epochs, [h["train_loss"] for h in history], label="train")
    ax.plot(epochs, [h["val_loss"] for h in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("L1 loss (normalized)")
    ax.legend()
    return _save(fig, path)


def plot_ablation(results: Mapping[str, float], path, metric: str = "MSE") -> Path:
    names = list(results)
    fig, ax = _figure((5, 3.5))
    ax.bar(names, [results[n] for n in names], color="tab:blue")
    ax.set_ylabel(f"test {metric}")
    ax.tick_params(axis="x", rotation=20)
    return _save(fig, path)


def plot_forecast(inputs: np.ndarray, target: np.ndarray, pred: np.ndarray, path, title: str = "") -> Path:
    T, tau = len(inputs), len(target)
    fig, ax = _figure((5, 3.5))
    ax.plot(range(T), inputs, color="k", label="input")
    ax.plot(range(T, T + tau), target, color="tab:green", label="observed")
    ax.plot(range(T, T + tau), pred, color="tab:red", linestyle="--", label="forecast")
    ax.set_xlabel("step")
    ax.set_ylabel("SST")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)
