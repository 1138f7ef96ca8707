"""End-to-end forecaster: patches + knowledge -> alignment -> frozen backbone -> decoder."""

from __future__ import annotations

from typing import Mapping, Sequence

import torch
from torch import nn

from .alignment import (
    CausalTransformerBackbone,
    CrossAlignment,
    FrozenBackbone,
    HFBackbone,
    backbone_forward,
    build_query,
)
from .config import ExperimentConfig
from .decoder import Decoder, ForecastHead
from .errors import ConfigurationError
from .graph import KnowledgeGraph
from .kg_encoding import HashTextEncoder, KnowledgeEncoder, TextEncoder
from .transe import EmbeddingTable
from .ts_encoding import PatchEncoder, RevIN, patch_count, patchify_batch


def make_backbone(cfg: ExperimentConfig) -> FrozenBackbone:
    if cfg.backbone == "causal-transformer":
        return CausalTransformerBackbone(
            cfg.backbone_hidden, cfg.backbone_layers, cfg.backbone_heads, seed=cfg.backbone_seed
        )
    if cfg.backbone.startswith("hf:"):
        return HFBackbone.from_pretrained(cfg.backbone[3:])
    raise ConfigurationError(f"unknown backbone {cfg.backbone!r}")


def key_regions(g: KnowledgeGraph, region_ids: Sequence[str], limit: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Per region: itself, then its 1-hop region neighbours in id order, up to ``limit``.

    Returns a (N, limit) index tensor into ``region_ids`` and its validity mask.
    """
    index = {r: i for i, r in enumerate(region_ids)}
    rows, masks = [], []
    for rid in region_ids:
        nbrs = sorted(n for n in g.neighbors(rid) if n in index and n != rid)
        chosen = [index[rid]] + [index[n] for n in nbrs][: limit - 1]
        rows.append(chosen + [index[rid]] * (limit - len(chosen)))
        masks.append([True] * len(chosen) + [False] * (limit - len(chosen)))
    return torch.tensor(rows, dtype=torch.long), torch.tensor(masks, dtype=torch.bool)


def compact(tokens: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Move valid tokens to the front of each row (stable), padding at the right."""
    order = torch.argsort((~mask).to(torch.int8), dim=-1, stable=True)
    tokens = torch.gather(tokens, 1, order.unsqueeze(-1).expand_as(tokens))
    return tokens, torch.gather(mask, 1, order)


class Forecaster(nn.Module):
    """Region-wise SST forecaster.

    ``variant`` selects the ablation: ``full``; ``no_ts_encoding`` (linear
    patch map); ``no_kg_encoding`` (temporal tokens only, no alignment);
    ``no_alignment`` (own-region knowledge tokens concatenated before the
    temporal tokens instead of cross attention).
    """

    def __init__(
        self,
        cfg: ExperimentConfig,
        graph: KnowledgeGraph,
        table: EmbeddingTable,
        region_ids: Sequence[str],
        mean_sst: Mapping[str, float] | None = None,
        encoder: TextEncoder | None = None,
        backbone: FrozenBackbone | None = None,
    ):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.variant = cfg.variant
        self.region_ids = list(region_ids)
        self.n_patches = patch_count(cfg.lookback, cfg.patch_len, cfg.stride)

        self.revin = RevIN(cfg.revin_eps, cfg.revin_affine)
        self.patch_encoder = PatchEncoder(
            cfg.patch_len, cfg.d_model, cfg.d_hidden, linear=cfg.variant == "no_ts_encoding"
        )
        self.backbone = backbone or make_backbone(cfg)
        H = self.backbone.hidden_size

        if cfg.variant != "no_kg_encoding":
            encoder = encoder or HashTextEncoder(cfg.d, cfg.text_vocab, cfg.text_seed)
            self.encoder_identity = encoder.identity
            self.knowledge = KnowledgeEncoder(
                graph, table, encoder, self.region_ids, cfg.k_hops, cfg.token_len, mean_sst
            )
        else:
            self.encoder_identity = None
            self.knowledge = None

        if cfg.variant in ("full", "no_ts_encoding"):
            idx, mask = key_regions(graph, self.region_ids, cfg.max_key_regions)
            self.register_buffer("key_index", idx)
            self.register_buffer("key_mask", mask)
            self.region_proj = nn.Linear(cfg.d, cfg.d_model)
            self.query_norm = nn.LayerNorm(cfg.d_model)
            self.align = CrossAlignment(cfg.d_model, cfg.d, cfg.d_k, residual=cfg.align_residual)
            self.in_proj = nn.Linear(cfg.d_k, H)
        elif cfg.variant == "no_alignment":
            self.kg_proj = nn.Linear(cfg.d, H)
            self.ts_proj = nn.Linear(cfg.d_model, H)
        else:
            self.ts_proj = nn.Linear(cfg.d_model, H)

        self.decoder = Decoder(H, cfg.decoder_heads, cfg.decoder_layers)
        self.head = ForecastHead(H, cfg.horizon)

    def trainable_parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def embed(self, x: torch.Tensor, region: torch.Tensor) -> dict:
        """Everything up to the backbone input: tokens, mask and instance stats."""
        xn, mean, std = self.revin.normalize(x)
        e_ts = self.patch_encoder(patchify_batch(xn, self.cfg.patch_len, self.cfg.stride))
        B = x.shape[0]
        out = {"mean": mean, "std": std, "e_ts": e_ts}

        if self.knowledge is None:
            tokens = self.ts_proj(e_ts)
            mask = torch.ones(tokens.shape[:2], dtype=torch.bool, device=x.device)
        elif self.variant == "no_alignment":
            e_kg, kg_mask = self.knowledge(region)
            tokens = torch.cat([self.kg_proj(e_kg), self.ts_proj(e_ts)], dim=1)
            mask = torch.cat([kg_mask, torch.ones(e_ts.shape[:2], dtype=torch.bool, device=x.device)], dim=1)
            tokens, mask = compact(tokens, mask)
            keep = int(mask.sum(-1).max())
            tokens, mask = tokens[:, :keep], mask[:, :keep]
            out["aligned"] = tokens
        else:
            e_region = self.region_proj(self.knowledge.struct[region])
            query = build_query(e_region, e_ts, self.query_norm)
            kr = self.key_index[region]                       # B x R
            e_kg, tok_mask = self.knowledge(kr)               # B x R x l x d, B x R x l
            tok_mask = tok_mask & self.key_mask[region].unsqueeze(-1)
            keys = e_kg.reshape(B, -1, e_kg.shape[-1])
            aligned = self.align(query, keys, tok_mask.reshape(B, -1))
            out["aligned"] = aligned
            tokens = self.in_proj(aligned)
            mask = torch.ones(tokens.shape[:2], dtype=torch.bool, device=x.device)
        out["tokens"] = tokens
        out["mask"] = mask
        return out

    def forward(self, x: torch.Tensor, region: torch.Tensor) -> dict:
        out = self.embed(x, region)
        hidden = backbone_forward(out["tokens"], out["mask"], self.backbone)
        refined = self.decoder(hidden, out["mask"])
        mean, std = out["mean"], out["std"]
        if self.revin.affine:
            z = self.head.linear(refined[torch.arange(x.shape[0]), out["mask"].sum(-1) - 1])
            pred = self.revin.denormalize(z, mean, std)
        else:
            pred, _ = self.head(refined, out["mask"], mean, std, self.revin.eps)
        pred_norm = (pred - mean) / (std + self.revin.eps)
        out.update(pred=pred, pred_norm=pred_norm, hidden=hidden, refined=refined)
        return out
