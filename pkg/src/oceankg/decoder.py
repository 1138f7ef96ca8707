"""Trainable decoder on top of the backbone, forecast head and training loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .alignment import attention_allowed
from .errors import ConfigurationError, EmptySequenceError, ShapeError


def multi_head_attention(x, w_q, w_k, w_v, w_o, b_o, heads: int, allowed=None):
    """Self-attention with ``heads`` heads; projections are (D, D) right-multiplied.

    Head ``i`` uses columns ``i*D/h:(i+1)*D/h`` of each projection. Returns
    ``(output, weights)`` with weights shaped (B, h, L, L).
    """
    B, L, D = x.shape
    if D % heads:
        raise ConfigurationError(f"model dim {D} not divisible by {heads} heads")
    dh = D // heads
    split = lambda t: t.view(B, L, heads, dh).transpose(1, 2)
    q, k, v = split(x @ w_q), split(x @ w_k), split(x @ w_v)
    logits = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if allowed is not None:
        logits = logits.masked_fill(~allowed, float("-inf"))
    weights = torch.softmax(logits, dim=-1)
    heads_out = (weights @ v).transpose(1, 2).reshape(B, L, D)
    return heads_out @ w_o + b_o, weights


class DecoderLayer(nn.Module):
    """Pre-norm block: x + MHA(LN(x)), then x + FFN(LN(x)); causal like the backbone."""

    def __init__(self, dim: int, heads: int, ff_mult: int = 2):
        super().__init__()
        if heads < 1 or dim % heads:
            raise ConfigurationError(f"decoder dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.ln1 = nn.LayerNorm(dim)
        self.w_q = nn.Parameter(torch.empty(dim, dim))
        self.w_k = nn.Parameter(torch.empty(dim, dim))
        self.w_v = nn.Parameter(torch.empty(dim, dim))
        self.w_o = nn.Parameter(torch.empty(dim, dim))
        self.b_o = nn.Parameter(torch.zeros(dim))
        for w in (self.w_q, self.w_k, self.w_v, self.w_o):
            nn.init.xavier_uniform_(w)
        self.ln2 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, ff_mult * dim)
        self.ff2 = nn.Linear(ff_mult * dim, dim)

    def forward(self, x, mask, return_weights=False):
        allowed = attention_allowed(mask)
        att, weights = multi_head_attention(
            self.ln1(x), self.w_q, self.w_k, self.w_v, self.w_o, self.b_o, self.heads, allowed
        )
        x = x + att
        x = x + self.ff2(F.gelu(self.ff1(self.ln2(x))))
        x = x * mask.unsqueeze(-1).to(x.dtype)
        return (x, weights) if return_weights else x


class Decoder(nn.Module):
    def __init__(self, dim: int, heads: int = 8, layers: int = 2):
        super().__init__()
        self.layers = nn.ModuleList(DecoderLayer(dim, heads) for _ in range(layers))
        self.ln_f = nn.LayerNorm(dim)

    def forward(self, h, mask):
        for layer in self.layers:
            h = layer(h, mask)
        return self.ln_f(h)


def decode(h: torch.Tensor, decoder: Decoder, mask: torch.Tensor | None = None) -> torch.Tensor:
    if mask is None:
        mask = torch.ones(h.shape[:2], dtype=torch.bool)
    return decoder(h, mask)


def last_valid(seq: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Vector at the final valid position of each row: (B, L, D) -> (B, D)."""
    counts = mask.sum(dim=-1)
    if bool((counts == 0).any()):
        raise EmptySequenceError("a sequence has no valid positions")
    L = mask.shape[-1]
    pos = L - 1 - torch.flip(mask, dims=[-1]).to(torch.int64).argmax(dim=-1)
    return seq[torch.arange(seq.shape[0]), pos]


def project(refined, mask, weight, bias, mean, std, eps: float, tau: int | None = None):
    """Affine read-out of the last valid position, then instance de-normalization.

    Returns ``(forecast, normalized_forecast)``; ``mean``/``std`` are (B, 1).
    """
    if tau is not None and (tau < 1 or weight.shape[0] != tau):
        raise ShapeError(f"head produces {weight.shape[0]} steps, requested {tau}")
    z = last_valid(refined, mask) @ weight.T + bias
    return z * (std + eps) + mean, z


class ForecastHead(nn.Module):
    def __init__(self, dim: int, horizon: int):
        super().__init__()
        if horizon < 1:
            raise ConfigurationError("horizon must be at least 1")
        self.horizon = horizon
        self.linear = nn.Linear(dim, horizon)

    def forward(self, refined, mask, mean, std, eps):
        return project(refined, mask, self.linear.weight, self.linear.bias, mean, std, eps, self.horizon)


def l1_loss(y_hat, y_true):
    """Mean absolute error over horizon, regions and batch."""
    if tuple(y_hat.shape) != tuple(y_true.shape):
        raise ShapeError(f"prediction shape {tuple(y_hat.shape)} != target shape {tuple(y_true.shape)}")
    if isinstance(y_hat, torch.Tensor):
        return (y_hat - y_true).abs().mean()
    return float(np.mean(np.abs(np.asarray(y_hat, dtype=np.float64) - np.asarray(y_true, dtype=np.float64))))


@dataclass
class ForecastResult:
    y_hat: np.ndarray
    horizon: int
    y_true: np.ndarray | None = None
    region_ids: list[str] | None = None
