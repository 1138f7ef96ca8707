"""Knowledge embeddings per region: verbalized neighborhoods fused with TransE vectors.

A region's text (its description plus the descriptions of nearby triples) is
turned into ``l`` token vectors by a frozen text encoder. Each token row is
prefixed with the region's structural vector and passed through a trainable
affine + ReLU adapter, giving an ``l x d`` block per region.
"""

from __future__ import annotations

import hashlib
import logging
import re
import warnings
import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .errors import EncoderError, EntityLookupError, ShapeError
from .graph import KnowledgeGraph, verbalize
from .transe import EmbeddingTable

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class TextEncoder:
    """Interface for token-embedding providers.

    Subclasses implement :meth:`token_embeddings`, which returns one row per
    token of the untruncated text. :meth:`encode` applies the fixed-length
    policy and is what the pipeline calls.
    """

    identity = "abstract"
    dim: int
    deterministic = True

    def token_embeddings(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def encode(self, text: str, length: int) -> tuple[np.ndarray, np.ndarray]:
        rows = np.asarray(self.token_embeddings(text), dtype=np.float64).reshape(-1, self.dim)
        out = np.zeros((length, self.dim))
        mask = np.zeros(length, dtype=bool)
        n = min(length, len(rows))
        out[:n] = rows[:n]
        mask[:n] = True
        return out, mask


class HashTextEncoder(TextEncoder):
    """Frozen random token table addressed by a CRC32 hash of each token.

    Words and punctuation are lowercased tokens; a fixed seed makes the table,
    and therefore every encoding, reproducible without downloaded weights.
    """

    def __init__(self, dim: int, vocab_size: int = 4096, seed: int = 0):
        self.dim = dim
        self.vocab_size = vocab_size
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._table = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab_size, dim))
        self._table.setflags(write=False)
        self.identity = f"hash-token-v1:d={dim}:vocab={vocab_size}:seed={seed}"

    def tokenize(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text.lower())

    def token_ids(self, text: str) -> list[int]:
        return [zlib.crc32(tok.encode("utf-8")) % self.vocab_size for tok in self.tokenize(text)]

    def token_embeddings(self, text: str) -> np.ndarray:
        ids = self.token_ids(text)
        if not ids:
            return np.zeros((0, self.dim))
        return self._table[ids]


def embed_text(text: str, encoder: TextEncoder, length: int) -> tuple[np.ndarray, np.ndarray]:
    """``length x d`` token matrix and validity mask (right-truncated / zero-padded)."""
    if length < 1:
        raise ValueError("token length must be at least 1")
    if not text.strip():
        warnings.warn("empty text; returning all-padding token matrix", stacklevel=2)
        return np.zeros((length, encoder.dim)), np.zeros(length, dtype=bool)
    try:
        mat, mask = encoder.encode(text, length)
    except Exception as exc:  # plug-in encoders may fail in arbitrary ways
        raise EncoderError(f"text encoder {encoder.identity!r} failed: {exc}") from exc
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape != (length, encoder.dim):
        raise EncoderError(f"encoder returned shape {mat.shape}, expected {(length, encoder.dim)}")
    return mat, np.asarray(mask, dtype=bool)


def fuse(e_struct, e_text, weight, bias):
    """relu(W [e_struct ; row] + b) for every token row; W has shape (d, 2d)."""
    torch_in = isinstance(e_text, torch.Tensor)
    d = e_struct.shape[-1]
    if e_text.shape[-1] != d or weight.shape[-1] != 2 * d or weight.shape[0] != bias.shape[-1]:
        raise ShapeError(
            f"adapter shapes inconsistent: e_struct{tuple(e_struct.shape)} e_text{tuple(e_text.shape)} "
            f"W{tuple(weight.shape)} b{tuple(bias.shape)}"
        )
    if torch_in:
        # W [s ; x] = W_s s + W_x x, so the structural part is computed once per entity
        head = (e_struct @ weight[:, :d].T + bias).unsqueeze(-2)
        return torch.relu(e_text @ weight[:, d:].T + head)
    e_text = np.asarray(e_text)
    prefix = np.broadcast_to(np.asarray(e_struct)[..., None, :], e_text.shape)
    return np.maximum(np.concatenate([prefix, e_text], axis=-1) @ np.asarray(weight).T + bias, 0.0)


class Adapter(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.linear = nn.Linear(2 * d, d)

    def forward(self, e_struct: torch.Tensor, e_text: torch.Tensor) -> torch.Tensor:
        return fuse(e_struct, e_text, self.linear.weight, self.linear.bias)


@dataclass
class KnowledgeEmbedding:
    region_ids: list[str]
    stack: np.ndarray  # N x l x d
    mask: np.ndarray   # N x l


def region_texts(
    g: KnowledgeGraph,
    region_ids: Sequence[str],
    k: int = 1,
    mean_sst: Mapping[str, float] | None = None,
) -> list[str]:
    return [verbalize(g, r, k, mean_sst) for r in region_ids]


def encode_all_regions(
    g: KnowledgeGraph,
    table: EmbeddingTable,
    encoder: TextEncoder,
    adapter: Adapter,
    k: int = 1,
    length: int = 64,
    region_ids: Sequence[str] | None = None,
    mean_sst: Mapping[str, float] | None = None,
) -> KnowledgeEmbedding:
    """Verbalize, embed and fuse every region, stacked in ``region_ids`` order."""
    region_ids = list(g.region_ids() if region_ids is None else region_ids)
    param = next(adapter.parameters())
    rows, masks = [], []
    for rid in region_ids:
        try:
            struct = table.entity(rid)
        except EntityLookupError:
            raise EntityLookupError(f"region {rid!r} has no structural embedding") from None
        text_mat, mask = embed_text(verbalize(g, rid, k, mean_sst), encoder, length)
        with torch.no_grad():
            fused = adapter(
                torch.tensor(struct, dtype=param.dtype),
                torch.as_tensor(text_mat, dtype=param.dtype),
            )
        rows.append(fused.numpy())
        masks.append(mask)
    d = table.d
    stack = np.stack(rows) if rows else np.zeros((0, length, d))
    mask = np.stack(masks) if masks else np.zeros((0, length), dtype=bool)
    return KnowledgeEmbedding(region_ids, stack, mask)


class KnowledgeEncoder(nn.Module):
    """Frozen structural and token buffers for a region list plus the trainable adapter.

    ``forward(idx)`` fuses the requested regions on the fly so gradients
    reach the adapter; :meth:`encode_all` returns the full stack and caches it
    until the adapter parameters change.
    """

    def __init__(
        self,
        g: KnowledgeGraph,
        table: EmbeddingTable,
        encoder: TextEncoder,
        region_ids: Sequence[str],
        k: int = 1,
        length: int = 64,
        mean_sst: Mapping[str, float] | None = None,
    ):
        super().__init__()
        if encoder.dim != table.d:
            raise ShapeError(f"text encoder dim {encoder.dim} != structural dim {table.d}")
        self.region_ids = list(region_ids)
        self.encoder_identity = encoder.identity
        struct, text, mask = [], [], []
        for rid in self.region_ids:
            try:
                struct.append(table.entity(rid))
            except EntityLookupError:
                raise EntityLookupError(f"region {rid!r} has no structural embedding") from None
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                m, v = embed_text(verbalize(g, rid, k, mean_sst), encoder, length)
            if not v.any():
                log.warning("region %s has empty knowledge text", rid)
            text.append(m)
            mask.append(v)
        self.register_buffer("struct", torch.tensor(np.array(struct), dtype=torch.float32))
        self.register_buffer("text", torch.tensor(np.array(text), dtype=torch.float32))
        self.register_buffer("text_mask", torch.tensor(np.array(mask), dtype=torch.bool))
        self.adapter = Adapter(table.d)
        self._cache: tuple[str, torch.Tensor] | None = None

    @property
    def d(self) -> int:
        return self.struct.shape[-1]

    def forward(self, idx: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # fuse each distinct region once, then gather
        uniq, inverse = torch.unique(idx, return_inverse=True)
        fused = self.adapter(self.struct[uniq], self.text[uniq])
        return fused[inverse], self.text_mask[idx]

    def _fingerprint(self) -> str:
        h = hashlib.sha256()
        for p in self.adapter.parameters():
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def encode_all(self) -> torch.Tensor:
        key = self._fingerprint()
        if self._cache is None or self._cache[0] != key:
            with torch.no_grad():
                self._cache = (key, self.adapter(self.struct, self.text))
        return self._cache[1]
