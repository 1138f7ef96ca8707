"""Translational (TransE) embeddings for graph entities and relations.

Training minimizes the margin ranking loss between observed triples and
head/tail-corrupted negatives. The finished table is frozen: its arrays are
read-only and downstream models copy them into non-trainable buffers.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import ConfigurationError, DegenerateGraphError, EntityLookupError, ShapeError
from .graph import KnowledgeGraph, Triple

log = logging.getLogger(__name__)

MAX_RESAMPLE_ATTEMPTS = 100


class NegativeSamplingFallbackWarning(UserWarning):
    """Every sampled corruption was a known positive; an unfiltered one was kept."""


@dataclass
class TransEConfig:
    d: int = 64
    gamma: float = 1.0
    p: int = 1
    negatives_per_positive: int = 1
    epochs: int = 100
    learning_rate: float = 0.1
    batch_size: int = 128
    seed: int = 0

    def validate(self) -> TransEConfig:
        if self.gamma <= 0:
            raise ConfigurationError("gamma must be positive")
        if self.p not in (1, 2):
            raise ConfigurationError("p must be 1 or 2")
        for name in ("d", "negatives_per_positive", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be nonnegative")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        return self


@dataclass
class EmbeddingTable:
    entity_ids: tuple[str, ...]
    entity_matrix: np.ndarray
    relation_ids: tuple[str, ...]
    relation_matrix: np.ndarray
    p: int = 1
    gamma: float = 1.0
    seed: int = 0
    epochs: int = 0
    frozen: bool = False
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.entity_ids = tuple(self.entity_ids)
        self.relation_ids = tuple(self.relation_ids)
        if self.entity_matrix.shape[0] != len(self.entity_ids):
            raise ShapeError("entity matrix rows do not match entity ids")
        if self.relation_matrix.shape[0] != len(self.relation_ids):
            raise ShapeError("relation matrix rows do not match relation ids")
        if self.entity_matrix.shape[1] != self.relation_matrix.shape[1]:
            raise ShapeError("entity and relation vectors differ in dimension")
        self._entity_index = {e: i for i, e in enumerate(self.entity_ids)}
        self._relation_index = {r: i for i, r in enumerate(self.relation_ids)}
        if self.frozen:
            self.entity_matrix.setflags(write=False)
            self.relation_matrix.setflags(write=False)

    @property
    def d(self) -> int:
        return self.entity_matrix.shape[1]

    def entity_index(self, eid: str) -> int:
        try:
            return self._entity_index[eid]
        except KeyError:
            raise EntityLookupError(f"no structural vector for entity {eid!r}") from None

    def relation_index(self, rid: str) -> int:
        try:
            return self._relation_index[rid]
        except KeyError:
            raise EntityLookupError(f"no structural vector for relation {rid!r}") from None

    def entity(self, eid: str) -> np.ndarray:
        return self.entity_matrix[self.entity_index(eid)]

    def relation(self, rid: str) -> np.ndarray:
        return self.relation_matrix[self.relation_index(rid)]

    def freeze(self) -> EmbeddingTable:
        ent = np.array(self.entity_matrix, dtype=np.float64, copy=True)
        rel = np.array(self.relation_matrix, dtype=np.float64, copy=True)
        return EmbeddingTable(
            self.entity_ids, ent, self.relation_ids, rel, self.p, self.gamma,
            self.seed, self.epochs, frozen=True, loss_history=list(self.loss_history),
        )

    def checksum(self) -> str:
        h = hashlib.sha256()
        for ids, mat in ((self.entity_ids, self.entity_matrix), (self.relation_ids, self.relation_matrix)):
            h.update("\x1f".join(ids).encode())
            h.update(np.ascontiguousarray(mat, dtype=np.float64).tobytes())
        return h.hexdigest()

    def save(self, path) -> Path:
        path = Path(path)
        meta = {
            "d": self.d, "p": self.p, "gamma": self.gamma, "seed": self.seed,
            "epochs": self.epochs, "frozen": self.frozen, "loss_history": self.loss_history,
        }
        with open(path, "wb") as fh:
            np.savez(
                fh,
                meta=np.array(json.dumps(meta)),
                entity_ids=np.array(self.entity_ids, dtype=str),
                entity_matrix=self.entity_matrix,
                relation_ids=np.array(self.relation_ids, dtype=str),
                relation_matrix=self.relation_matrix,
            )
        return path

    @classmethod
    def load(cls, path) -> EmbeddingTable:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            return cls(
                tuple(z["entity_ids"].tolist()),
                np.array(z["entity_matrix"], dtype=np.float64),
                tuple(z["relation_ids"].tolist()),
                np.array(z["relation_matrix"], dtype=np.float64),
                p=meta["p"], gamma=meta["gamma"], seed=meta["seed"], epochs=meta["epochs"],
                frozen=meta["frozen"], loss_history=meta["loss_history"],
            )


def score(h_vec, r_vec, t_vec, p: int = 1):
    """Distance ||h + r - t||_p; lower is more plausible.

    Works on numpy arrays (returns a float or array over leading axes) and on
    torch tensors (returns a differentiable tensor).
    """
    if isinstance(h_vec, torch.Tensor):
        if not (h_vec.shape[-1] == r_vec.shape[-1] == t_vec.shape[-1]):
            raise ShapeError("score vectors differ in dimension")
        return torch.linalg.vector_norm(h_vec + r_vec - t_vec, ord=p, dim=-1)
    h, r, t = (np.asarray(v, dtype=np.float64) for v in (h_vec, r_vec, t_vec))
    if not (h.shape[-1] == r.shape[-1] == t.shape[-1]):
        raise ShapeError("score vectors differ in dimension")
    out = np.linalg.norm(h + r - t, ord=p, axis=-1)
    return float(out) if out.ndim == 0 else out


def margin_loss(pos_scores, neg_scores, gamma: float):
    """Mean hinge max(0, gamma + f(pos) - f(neg)) over matched pairs."""
    pos = torch.as_tensor(pos_scores, dtype=torch.float64) if not isinstance(pos_scores, torch.Tensor) else pos_scores
    neg = torch.as_tensor(neg_scores, dtype=torch.float64) if not isinstance(neg_scores, torch.Tensor) else neg_scores
    if pos.shape != neg.shape:
        raise ShapeError(f"positive/negative score shapes differ: {tuple(pos.shape)} vs {tuple(neg.shape)}")
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    if pos.numel() == 0:
        return pos.sum()
    return torch.clamp(gamma + pos - neg, min=0.0).mean()


def sample_negatives(
    g: KnowledgeGraph,
    triple: Triple,
    n: int,
    rng: np.random.Generator,
) -> list[Triple]:
    """Corrupt the head or the tail of ``triple`` ``n`` times.

    The slot is chosen with probability 1/2 and the replacement uniformly
    among the other entities. Known positives are rejected and redrawn; after
    ``MAX_RESAMPLE_ATTEMPTS`` rejections the last draw is kept with a warning.
    """
    ids = g.entity_ids()
    if len(ids) < 2:
        raise DegenerateGraphError("negative sampling needs at least two entities")
    if n < 1:
        raise ValueError("n must be at least 1")
    known = g.triples
    out = []
    for _ in range(n):
        for attempt in range(MAX_RESAMPLE_ATTEMPTS):
            corrupt_head = rng.random() < 0.5
            original = triple.head if corrupt_head else triple.tail
            j = int(rng.integers(len(ids) - 1))
            replacement = _skip_original(ids, j, original)
            cand = (
                Triple(replacement, triple.relation, triple.tail)
                if corrupt_head
                else Triple(triple.head, triple.relation, replacement)
            )
            if cand not in known:
                break
        else:
            warnings.warn(
                f"no filtered negative for {triple.key} after {MAX_RESAMPLE_ATTEMPTS} attempts",
                NegativeSamplingFallbackWarning,
                stacklevel=2,
            )
        out.append(cand)
    return out


def _skip_original(ids: Sequence[str], j: int, original: str) -> str:
    """Map a draw from range(len(ids) - 1) onto the sorted ids minus ``original``."""
    pos = bisect.bisect_left(ids, original)
    return ids[j + 1] if j >= pos else ids[j]


def init_table(g: KnowledgeGraph, cfg: TransEConfig) -> EmbeddingTable:
    rng = np.random.default_rng(cfg.seed)
    bound = 6.0 / np.sqrt(cfg.d)
    ent = rng.uniform(-bound, bound, size=(len(g.entities), cfg.d))
    rel = rng.uniform(-bound, bound, size=(len(g.relations), cfg.d))
    ent /= np.linalg.norm(ent, axis=1, keepdims=True)
    return EmbeddingTable(
        g.entity_ids(), ent, tuple(sorted(g.relations)), rel, cfg.p, cfg.gamma, cfg.seed, 0,
    )


def pretrain(
    g: KnowledgeGraph,
    cfg: TransEConfig | None = None,
    triples: Sequence[Triple] | None = None,
) -> EmbeddingTable:
    """Fit TransE on ``g`` (or on the ``triples`` subset) and return a frozen table.

    Negatives are filtered against every triple of ``g``, so held-out facts
    are never used as negatives.
    """
    cfg = (cfg or TransEConfig()).validate()
    if not g.entities:
        raise DegenerateGraphError("cannot pretrain on an empty graph")
    table = init_table(g, cfg)
    if cfg.epochs == 0:
        return table.freeze()

    train = sorted(triples if triples is not None else g.triples, key=lambda t: t.key)
    if not train:
        raise DegenerateGraphError("no training triples")
    rng = np.random.default_rng(cfg.seed + 1)
    ent = torch.nn.Parameter(torch.from_numpy(table.entity_matrix.copy()))
    rel = torch.nn.Parameter(torch.from_numpy(table.relation_matrix.copy()))
    opt = torch.optim.SGD([ent, rel], lr=cfg.learning_rate)
    e_idx, r_idx = table._entity_index, table._relation_index

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            pos_idx, neg_idx = [], []
            for t in batch:
                for neg in sample_negatives(g, t, cfg.negatives_per_positive, rng):
                    pos_idx.append((e_idx[t.head], r_idx[t.relation], e_idx[t.tail]))
                    neg_idx.append((e_idx[neg.head], r_idx[neg.relation], e_idx[neg.tail]))
            pi = torch.tensor(pos_idx)
            ni = torch.tensor(neg_idx)
            pos = score(ent[pi[:, 0]], rel[pi[:, 1]], ent[pi[:, 2]], cfg.p)
            neg = score(ent[ni[:, 0]], rel[ni[:, 1]], ent[ni[:, 2]], cfg.p)
            loss = margin_loss(pos, neg, cfg.gamma)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(pi)
            count += len(pi)
        with torch.no_grad():
            ent /= torch.linalg.vector_norm(ent, dim=1, keepdim=True)
        history.append(total / count)
        log.debug("transe epoch %d loss %.5f", epoch, history[-1])

    table = EmbeddingTable(
        table.entity_ids, ent.detach().numpy().copy(), table.relation_ids,
        rel.detach().numpy().copy(), cfg.p, cfg.gamma, cfg.seed, cfg.epochs,
        loss_history=history,
    )
    return table.freeze()


def tail_ranks(
    table: EmbeddingTable,
    test: Sequence[Triple],
    known: set | frozenset,
) -> np.ndarray:
    """Filtered rank of each true tail among all entities (1 = best)."""
    ent = table.entity_matrix
    ranks = []
    for t in test:
        h = ent[table.entity_index(t.head)]
        r = table.relation(t.relation)
        scores = np.linalg.norm(h + r - ent, ord=table.p, axis=1)
        true_i = table.entity_index(t.tail)
        keep = np.ones(len(ent), dtype=bool)
        for i, cand in enumerate(table.entity_ids):
            if i != true_i and Triple(t.head, t.relation, cand) in known:
                keep[i] = False
        ranks.append(1 + int(np.sum(scores[keep] < scores[true_i])))
    return np.asarray(ranks)


def filtered_mean_rank(table: EmbeddingTable, test: Sequence[Triple], known) -> float:
    return float(np.mean(tail_ranks(table, test, known)))


def config_dict(cfg: TransEConfig) -> dict:
    return asdict(cfg)
