"""Query construction, cross-attention alignment and the frozen causal backbone."""

from __future__ import annotations

import hashlib
import math

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigurationError, ContextLengthError, PreconditionError, ShapeError


def build_query(e_region: torch.Tensor, e_ts: torch.Tensor, ln: nn.LayerNorm) -> torch.Tensor:
    """LayerNorm over [e_region ; e_ts] along the token axis.

    ``e_region`` is (..., d_m) and ``e_ts`` is (..., P, d_m); the result has
    1 + P rows.
    """
    if e_region.shape[-1] != e_ts.shape[-1]:
        raise ShapeError(f"region embedding dim {e_region.shape[-1]} != temporal dim {e_ts.shape[-1]}")
    return ln(torch.cat([e_region.unsqueeze(-2), e_ts], dim=-2))


def cross_attend(query, keys, w_q, w_k, w_v, key_mask=None):
    """Scaled dot-product attention of ``query`` rows over ``keys`` rows.

    Projections multiply on the right: ``query @ w_q`` etc. Returns
    ``(aligned, weights)`` where weights are row-stochastic over valid keys.
    """
    if keys.shape[-2] == 0:
        raise PreconditionError("cross attention needs at least one key")
    if query.shape[-1] != w_q.shape[0] or keys.shape[-1] != w_k.shape[0] or keys.shape[-1] != w_v.shape[0]:
        raise ShapeError("projection shapes do not match query/key dimensions")
    if w_q.shape[1] != w_k.shape[1]:
        raise ShapeError("query and key projections differ in width")
    q = query @ w_q
    k = keys @ w_k
    v = keys @ w_v
    logits = q @ k.transpose(-1, -2) / math.sqrt(w_k.shape[1])
    if key_mask is not None:
        if not bool(key_mask.any(dim=-1).all()):
            raise PreconditionError("a query group has no valid keys")
        logits = logits.masked_fill(~key_mask.unsqueeze(-2), float("-inf"))
    weights = torch.softmax(logits, dim=-1)
    return weights @ v, weights


class CrossAlignment(nn.Module):
    """Single-head cross attention from temporal queries to knowledge keys/values.

    With ``residual=True`` the projected query is added to the attention
    output, so the temporal signal reaches the backbone even when attention
    is nearly uniform.
    """

    def __init__(self, d_query: int, d_key: int, d_attn: int, residual: bool = False):
        super().__init__()
        if d_attn <= 0:
            raise ConfigurationError("attention width must be positive")
        self.w_q = nn.Parameter(torch.empty(d_query, d_attn))
        self.w_k = nn.Parameter(torch.empty(d_key, d_attn))
        self.w_v = nn.Parameter(torch.empty(d_key, d_attn))
        for w in (self.w_q, self.w_k, self.w_v):
            nn.init.xavier_uniform_(w)
        self.residual = nn.Linear(d_query, d_attn, bias=False) if residual else None

    def forward(self, query, keys, key_mask=None, return_weights=False):
        out, weights = cross_attend(query, keys, self.w_q, self.w_k, self.w_v, key_mask)
        if self.residual is not None:
            out = out + self.residual(query)
        return (out, weights) if return_weights else out


# ---------------------------------------------------------------- backbones


def attention_allowed(mask: torch.Tensor, causal: bool = True) -> torch.Tensor:
    """(B, L) validity mask -> (B, 1, L, L) boolean attention permission.

    Valid queries see valid keys at or before their position. Padded
    positions see only themselves, which keeps their rows finite; their
    outputs are zeroed by the callers.
    """
    L = mask.shape[-1]
    allowed = mask.unsqueeze(-2) & mask.unsqueeze(-1)
    if causal:
        allowed = allowed & torch.ones(L, L, dtype=torch.bool, device=mask.device).tril()
    allowed = allowed | torch.eye(L, dtype=torch.bool, device=mask.device)
    return allowed.unsqueeze(1)


class FrozenBackbone(nn.Module):
    """Causal sequence model with fixed weights.

    Subclasses implement ``_forward(x, mask)``. All parameters are created
    with ``requires_grad=False`` and the module stays in eval mode.
    """

    identity = "abstract"
    hidden_size: int
    context_limit: int

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        super().train(False)
        return self

    def train(self, mode: bool = True):
        return super().train(False)

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self._forward(x, mask)


class _Block(nn.Module):
    def __init__(self, hidden: int, heads: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(hidden)
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.out = nn.Linear(hidden, hidden)
        self.ln2 = nn.LayerNorm(hidden)
        self.fc1 = nn.Linear(hidden, 4 * hidden)
        self.fc2 = nn.Linear(4 * hidden, hidden)

    def forward(self, x, allowed):
        B, L, H = x.shape
        q, k, v = self.qkv(self.ln1(x)).split(H, dim=-1)
        split = lambda t: t.view(B, L, self.heads, H // self.heads).transpose(1, 2)
        att = F.scaled_dot_product_attention(split(q), split(k), split(v), attn_mask=allowed)
        x = x + self.out(att.transpose(1, 2).reshape(B, L, H))
        return x + self.fc2(F.gelu(self.fc1(self.ln2(x))))


class CausalTransformerBackbone(FrozenBackbone):
    """Small decoder-only transformer, seed-initialized and frozen.

    Stands in for a pretrained language model at desk scale; initialization
    follows the usual GPT recipe (normal(0, 0.02) weights, learned positions).
    """

    def __init__(self, hidden: int = 64, layers: int = 4, heads: int = 8, context: int = 512, seed: int = 0):
        super().__init__()
        if hidden % heads:
            raise ConfigurationError(f"backbone hidden size {hidden} not divisible by {heads} heads")
        self.hidden_size = hidden
        self.context_limit = context
        self.identity = f"causal-transformer:h={hidden}:l={layers}:heads={heads}:ctx={context}:seed={seed}"
        gen = torch.Generator().manual_seed(seed)
        self.pos = nn.Parameter(torch.empty(context, hidden))
        self.blocks = nn.ModuleList(_Block(hidden, heads) for _ in range(layers))
        self.ln_f = nn.LayerNorm(hidden)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                elif ".ln" in name or name.startswith("ln_f"):
                    p.fill_(1.0)
                else:
                    p.normal_(0.0, 0.02, generator=gen)
        self.freeze()

    def _forward(self, x, mask):
        L = x.shape[1]
        h = x + self.pos[:L]
        allowed = attention_allowed(mask)
        for block in self.blocks:
            h = block(h, allowed)
        return self.ln_f(h)


class HFBackbone(FrozenBackbone):
    """Any ``transformers`` decoder accepting ``inputs_embeds`` (GPT-2, Llama, ...)."""

    def __init__(self, model, identity: str | None = None):
        super().__init__()
        self.model = model
        cfg = model.config
        self.hidden_size = getattr(cfg, "hidden_size", None) or cfg.n_embd
        self.context_limit = getattr(cfg, "max_position_embeddings", None) or getattr(cfg, "n_positions")
        self.identity = identity or f"hf:{getattr(cfg, '_name_or_path', '') or cfg.model_type}"
        self.freeze()

    @classmethod
    def from_pretrained(cls, name: str):
        from transformers import AutoModel

        return cls(AutoModel.from_pretrained(name), identity=f"hf:{name}")

    def _forward(self, x, mask):
        out = self.model(inputs_embeds=x, attention_mask=mask.long())
        return out.last_hidden_state


def backbone_forward(batch: torch.Tensor, mask: torch.Tensor, backbone: FrozenBackbone) -> torch.Tensor:
    """Run the frozen backbone on a padded batch; padded positions come back as zeros."""
    if batch.shape[:2] != mask.shape:
        raise ShapeError(f"batch {tuple(batch.shape)} and mask {tuple(mask.shape)} disagree")
    if batch.shape[1] > backbone.context_limit:
        raise ContextLengthError(
            f"sequence length {batch.shape[1]} exceeds backbone context {backbone.context_limit}"
        )
    if not backbone.frozen:
        raise PreconditionError(f"backbone {backbone.identity} is not frozen")
    out = backbone(batch, mask)
    return out * mask.unsqueeze(-1).to(out.dtype)
