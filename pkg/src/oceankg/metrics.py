"""MAE / MSE over sliding-window forecasts, per region and in aggregate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Metrics:
    mae: float
    mse: float
    per_region_mae: np.ndarray
    per_region_mse: np.ndarray
    region_ids: list[str] = field(default_factory=list)
    scale: str = "celsius"
    n_windows: int = 0
    normalized: Metrics | None = None

    def as_dict(self) -> dict:
        out = {
            "scale": self.scale,
            "mae": self.mae,
            "mse": self.mse,
            "n_windows": self.n_windows,
            "per_region": {
                rid: {"mae": float(a), "mse": float(s)}
                for rid, a, s in zip(self.region_ids, self.per_region_mae, self.per_region_mse)
            },
        }
        if self.normalized is not None:
            out["normalized"] = self.normalized.as_dict()
        return out


def window_errors(y_hat: np.ndarray, y_true: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-window MAE and MSE averaged over the horizon.

    Sums are correctly rounded (``math.fsum``), so results do not depend on
    summation order.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    if y_hat.shape != y_true.shape:
        raise ValueError(f"prediction shape {y_hat.shape} != target shape {y_true.shape}")
    err = (y_true - y_hat).reshape(-1, y_hat.shape[-1])
    tau = err.shape[-1]
    mae = np.array([math.fsum(row) for row in np.abs(err)]) / tau
    mse = np.array([math.fsum(row) for row in err ** 2]) / tau
    return mae.reshape(y_hat.shape[:-1]), mse.reshape(y_hat.shape[:-1])


def compute_metrics(
    y_hat: np.ndarray,
    y_true: np.ndarray,
    region: np.ndarray,
    region_ids: list[str],
    scale: str = "celsius",
) -> Metrics:
    """Average window errors within each region, then across regions."""
    mae_w, mse_w = window_errors(y_hat, y_true)
    region = np.asarray(region)
    n = len(region_ids)
    counts = np.bincount(region, minlength=n)
    if np.any(counts == 0):
        raise ValueError("every region needs at least one window")
    per_mae = np.array([math.fsum(mae_w[region == r]) for r in range(n)]) / counts
    per_mse = np.array([math.fsum(mse_w[region == r]) for r in range(n)]) / counts
    return Metrics(
        math.fsum(per_mae) / n, math.fsum(per_mse) / n, per_mae, per_mse,
        list(region_ids), scale, int(len(region)),
    )
