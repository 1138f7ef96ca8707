"""Instance normalization, patching and patch embedding for SST series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class RevinStats:
    mean: float
    std: float
    eps: float = 1e-5


def revin_normalize(x, eps: float = 1e-5):
    """Standardize a series with its own mean and population std.

    Returns ``(normalized, RevinStats)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeError("revin_normalize expects a nonempty 1-d series")
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    mean = float(x.mean())
    std = float(x.std())
    return (x - mean) / (std + eps), RevinStats(mean, std, eps)


def revin_denormalize(y, stats: RevinStats):
    y = np.asarray(y, dtype=np.float64)
    return y * (stats.std + stats.eps) + stats.mean


class RevIN(nn.Module):
    """Batched reversible instance normalization over the last axis.

    ``affine=True`` adds a learnable scale and shift after standardization;
    it is off by default so the transform is plain standardization.
    """

    def __init__(self, eps: float = 1e-5, affine: bool = False):
        super().__init__()
        if eps <= 0:
            raise ConfigurationError("eps must be positive")
        self.eps = eps
        self.affine = affine
        if affine:
            self.weight = nn.Parameter(torch.ones(1))
            self.bias = nn.Parameter(torch.zeros(1))

    def normalize(self, x: torch.Tensor):
        mean = x.mean(dim=-1, keepdim=True)
        std = x.std(dim=-1, keepdim=True, unbiased=False)
        out = (x - mean) / (std + self.eps)
        if self.affine:
            out = out * self.weight + self.bias
        return out, mean, std

    def denormalize(self, y: torch.Tensor, mean: torch.Tensor, std: torch.Tensor):
        if self.affine:
            y = (y - self.bias) / self.weight
        return y * (std + self.eps) + mean


@dataclass
class PatchSet:
    patches: np.ndarray  # P x L_p
    patch_len: int
    stride: int

    @property
    def count(self) -> int:
        return self.patches.shape[0]


def patch_count(T: int, patch_len: int, stride: int) -> int:
    return (T - patch_len) // stride + 2


def _check_patching(T, patch_len, stride):
    if patch_len < 1 or stride < 1:
        raise ConfigurationError("patch length and stride must be at least 1")
    if patch_len > T:
        raise ConfigurationError(f"patch length {patch_len} exceeds series length {T}")


def patchify(x, patch_len: int, stride: int) -> PatchSet:
    """Overlapping windows after right-padding with ``stride`` copies of the last value."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("patchify expects a 1-d series")
    _check_patching(len(x), patch_len, stride)
    padded = np.concatenate([x, np.repeat(x[-1:], stride)])
    n = patch_count(len(x), patch_len, stride)
    patches = np.stack([padded[i * stride: i * stride + patch_len] for i in range(n)])
    return PatchSet(patches, patch_len, stride)


def patchify_batch(x: torch.Tensor, patch_len: int, stride: int) -> torch.Tensor:
    """(B, T) -> (B, P, L_p), same padding rule as :func:`patchify`."""
    _check_patching(x.shape[-1], patch_len, stride)
    padded = torch.cat([x, x[..., -1:].expand(*x.shape[:-1], stride)], dim=-1)
    return padded.unfold(-1, patch_len, stride)


def encode_patches(patches, w1, b1, w2, b2):
    """Two-layer perceptron relu(X W1 + b1) W2 + b2 applied per patch row."""
    torch_in = isinstance(patches, torch.Tensor)
    X = patches.patches if isinstance(patches, PatchSet) else patches
    if X.shape[-1] != w1.shape[0] or w1.shape[1] != b1.shape[-1] or w1.shape[1] != w2.shape[0] or w2.shape[1] != b2.shape[-1]:
        raise ShapeError(
            f"patch encoder shapes inconsistent: X{tuple(X.shape)} W1{tuple(w1.shape)} "
            f"b1{tuple(b1.shape)} W2{tuple(w2.shape)} b2{tuple(b2.shape)}"
        )
    if torch_in:
        return torch.relu(X @ w1 + b1) @ w2 + b2
    return np.maximum(np.asarray(X) @ w1 + b1, 0.0) @ w2 + b2


class PatchEncoder(nn.Module):
    """Learned map from patches (..., P, L_p) to temporal tokens (..., P, d_m).

    ``linear=True`` replaces the perceptron with a single linear layer over the
    raw patch values (the no-time-series-encoding ablation).
    """

    def __init__(self, patch_len: int, d_model: int, hidden: int | None = None, linear: bool = False):
        super().__init__()
        self.linear = linear
        if linear:
            self.proj = nn.Linear(patch_len, d_model)
        else:
            hidden = hidden or 2 * d_model
            self.fc1 = nn.Linear(patch_len, hidden)
            self.fc2 = nn.Linear(hidden, d_model)

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        if self.linear:
            return self.proj(patches)
        return encode_patches(patches, self.fc1.weight.T, self.fc1.bias, self.fc2.weight.T, self.fc2.bias)
