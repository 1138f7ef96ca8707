"""Artifact writers: metrics documents, per-region error grids, region embeddings."""

from __future__ import annotations

import json
from collections import deque
from pathlib import Path

import numpy as np
import torch

from .data import SSTMatrix, parse_region_id
from .errors import ExportError
from .graph import KnowledgeGraph
from .metrics import Metrics


def ocean_label(g: KnowledgeGraph, rid: str, max_hops: int = 3) -> str:
    """Nearest Ocean entity reached through located_in / part_of edges, or ''."""
    seen, queue = {rid}, deque([(rid, 0)])
    while queue:
        node, depth = queue.popleft()
        if depth and g.entity(node).kind == "Ocean":
            return node
        if depth == max_hops:
            continue
        for t in sorted(g.adjacency.get(node, ()), key=lambda t: t.canonical_key):
            if t.head == node and g.relations[t.relation].name in ("located_in", "part_of") and t.tail not in seen:
                seen.add(t.tail)
                queue.append((t.tail, depth + 1))
    return ""


def current_labels(g: KnowledgeGraph, rid: str) -> list[str]:
    return sorted(n for n in g.neighbors(rid) if g.entity(n).kind == "Current")


@torch.no_grad()
def region_embeddings(ckpt, data: SSTMatrix) -> np.ndarray:
    """Mean over valid backbone-input tokens, using each region's last lookback window."""
    model = ckpt.model
    model.eval()
    if list(data.region_ids) != model.region_ids:
        data = data.regions(model.region_ids)
    T = model.cfg.lookback
    x = torch.tensor(data.values[:, -T:], dtype=torch.float32)
    out = model.embed(x, torch.arange(data.n_regions))
    tokens = out.get("aligned", out["tokens"])
    mask = out["mask"].unsqueeze(-1).to(tokens.dtype)
    return ((tokens * mask).sum(1) / mask.sum(1)).double().numpy()


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc
    return path


def export_embeddings(ckpt, out, data: SSTMatrix) -> Path:
    """TSV: region id, ocean label, comma-joined current labels, embedding values."""
    vectors = region_embeddings(ckpt, data)
    lines = []
    for rid, vec in zip(ckpt.model.region_ids, vectors):
        fields = [rid, ocean_label(ckpt.graph, rid), ",".join(current_labels(ckpt.graph, rid))]
        fields += [f"{v:.9g}" for v in vec]
        lines.append("\t".join(fields))
    return _write(Path(out), "\n".join(lines) + "\n")


def write_metrics(metrics: Metrics | dict, path, extra: dict | None = None) -> Path:
    doc = metrics.as_dict() if isinstance(metrics, Metrics) else dict(metrics)
    if extra:
        doc.update(extra)
    return _write(Path(path), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_mae_grid(metrics: Metrics, path) -> Path:
    """Whitespace ``lat lon mae`` rows for map plotting."""
    lines = ["lat lon mae"]
    for rid, mae in zip(metrics.region_ids, metrics.per_region_mae):
        lat, lon = parse_region_id(rid)
        lines.append(f"{lat:g} {lon:g} {mae:.6g}")
    return _write(Path(path), "\n".join(lines) + "\n")
