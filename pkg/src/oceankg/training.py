"""Training loop, evaluation, ablations, baselines and checkpoints."""

from __future__ import annotations

import copy
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .alignment import FrozenBackbone
from .config import ExperimentConfig, config_from_dict, lr_schedule
from .data import SSTMatrix, chrono_split, ingest_sst, make_windows
from .decoder import l1_loss
from .errors import ConfigurationError, PreconditionError, TrainingDivergedError
from .graph import Entity, KnowledgeGraph, Relation, Triple, load_graph_dir
from .metrics import Metrics, compute_metrics
from .model import Forecaster, make_backbone
from .synthetic import correlated_dataset
from .transe import EmbeddingTable, pretrain

log = logging.getLogger(__name__)


@dataclass
class Experiment:
    """Inputs shared by every run of one configuration."""

    cfg: ExperimentConfig
    graph: KnowledgeGraph
    data: SSTMatrix
    table: EmbeddingTable
    train: SSTMatrix
    val: SSTMatrix
    test: SSTMatrix

    @property
    def mean_sst(self) -> dict[str, float]:
        return self.train.region_means()


def prepare(
    cfg: ExperimentConfig,
    graph: KnowledgeGraph | None = None,
    data: SSTMatrix | None = None,
    table: EmbeddingTable | None = None,
) -> Experiment:
    """Load (or synthesize) graph and data, align regions, split, get embeddings."""
    cfg.validate()
    if graph is None or data is None:
        synth = None
        if graph is None and cfg.kg_dir is None or data is None and cfg.sst_path is None:
            synth = correlated_dataset(cfg.synthetic)
        if graph is None:
            graph = load_graph_dir(cfg.kg_dir) if cfg.kg_dir else synth.graph
        if data is None:
            data = ingest_sst(cfg.sst_path, cfg.min_coverage) if cfg.sst_path else synth.data

    known = set(graph.region_ids())
    keep = [r for r in data.region_ids if r in known]
    if not keep:
        raise PreconditionError("no SST region appears as a Region entity in the graph")
    if len(keep) < data.n_regions:
        log.warning("dropping %d SST cells without a graph region", data.n_regions - len(keep))
        data = data.regions(keep)

    if table is None:
        table = EmbeddingTable.load(cfg.kge_path) if cfg.kge_path else pretrain(graph, cfg.kge)
    if table.d != cfg.d:
        raise ConfigurationError(f"embedding table has d={table.d}, config expects d={cfg.d}")
    train, val, test = chrono_split(data, cfg.split, min_length=cfg.lookback + cfg.horizon)
    return Experiment(cfg, graph, data, table, train, val, test)


@dataclass
class Checkpoint:
    model: Forecaster
    cfg: ExperimentConfig
    graph: KnowledgeGraph
    table: EmbeddingTable
    region_ids: list[str]
    mean_sst: dict[str, float]
    epoch: int = 0
    best_val_loss: float = math.inf
    history: list[dict] = field(default_factory=list)
    rng_state: dict | None = None

    @property
    def backbone_identity(self) -> str:
        return self.model.backbone.identity

    def state_dict(self) -> dict:
        """Trainable state only; the frozen backbone is rebuilt from its identity."""
        return {k: v.detach().clone() for k, v in self.model.state_dict().items() if not k.startswith("backbone.")}


def _tensors(windows, dtype=torch.float32):
    return (
        torch.tensor(windows.inputs, dtype=dtype),
        torch.tensor(windows.targets, dtype=dtype),
        torch.tensor(windows.region, dtype=torch.long),
    )


def _seed_everything(seed: int):
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


@torch.no_grad()
def predict(model: Forecaster, data: SSTMatrix, batch_size: int = 256):
    """Forecasts for every sliding window of ``data``.

    Returns ``(windows, pred, pred_norm, target_norm)`` as numpy arrays.
    ``data`` rows must follow ``model.region_ids``.
    """
    if list(data.region_ids) != model.region_ids:
        data = data.regions(model.region_ids)
    model.eval()
    w = make_windows(data, model.cfg.lookback, model.cfg.horizon)
    x, y, r = _tensors(w)
    preds, norms, targets = [], [], []
    for i in range(0, len(w), batch_size):
        out = model(x[i:i + batch_size], r[i:i + batch_size])
        preds.append(out["pred"])
        norms.append(out["pred_norm"])
        targets.append((y[i:i + batch_size] - out["mean"]) / (out["std"] + model.revin.eps))
    cat = lambda ts: torch.cat(ts).double().numpy()
    return w, cat(preds), cat(norms), cat(targets)


def _window_loss(model: Forecaster, data: SSTMatrix) -> float:
    _, _, pred_norm, target_norm = predict(model, data)
    return l1_loss(pred_norm, target_norm)


def train(
    cfg: ExperimentConfig,
    graph: KnowledgeGraph | None = None,
    data: SSTMatrix | None = None,
    table: EmbeddingTable | None = None,
    backbone: FrozenBackbone | None = None,
    experiment: Experiment | None = None,
) -> Checkpoint:
    """Fit the trainable stages with L1 loss on instance-normalized targets.

    Adam, learning rate halved every ``cfg.lr_halving_epochs`` epochs, early
    stopping on validation loss with ``cfg.patience`` (``None`` disables it).
    With ``cfg.restore_best`` the lowest-validation weights are returned.
    """
    exp = experiment or prepare(cfg, graph, data, table)
    cfg = exp.cfg if experiment is None else cfg.validate()
    rng = _seed_everything(cfg.seed)
    model = Forecaster(cfg, exp.graph, exp.table, exp.train.region_ids, exp.mean_sst, backbone=backbone)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    schedule = lr_schedule(cfg.learning_rate, cfg.max_epochs, cfg.lr_halving_epochs)

    x, y, r = _tensors(make_windows(exp.train, cfg.lookback, cfg.horizon))
    bs = cfg.effective_batch_size
    history: list[dict] = []
    best, best_state, best_epoch, stale = math.inf, None, 0, 0
    log.info("training %s: %d windows, %d trainable parameters",
             cfg.variant, len(r), model.trainable_parameter_count())

    for epoch, lr in enumerate(schedule):
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        perm = torch.from_numpy(rng.permutation(len(r)))
        total, seen = 0.0, 0
        for i in range(0, len(perm), bs):
            idx = perm[i:i + bs]
            out = model(x[idx], r[idx])
            target = (y[idx] - out["mean"]) / (out["std"] + model.revin.eps)
            loss = l1_loss(out["pred_norm"], target)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, value)
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            opt.step()
            total += value * len(idx)
            seen += len(idx)
        train_loss = total / seen
        val_loss = _window_loss(model, exp.val)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(epoch, val_loss)
        history.append({"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_loss": val_loss})
        log.debug("epoch %d lr %.2e train %.4f val %.4f", epoch, lr, train_loss, val_loss)
        if val_loss < best:
            best, best_epoch, stale = val_loss, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if cfg.patience is not None and stale >= cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break

    last_epoch = history[-1]["epoch"] if history else 0
    if cfg.restore_best and best_state is not None:
        model.load_state_dict(best_state)
        epoch_out = best_epoch
    else:
        epoch_out = last_epoch
    model.eval()
    return Checkpoint(
        model, cfg, exp.graph, exp.table, list(exp.train.region_ids), exp.mean_sst,
        epoch_out, best, history, rng.bit_generator.state,
    )


def evaluate(ckpt: Checkpoint, data: SSTMatrix, tau: int | None = None) -> Metrics:
    """Sliding-window MAE/MSE in degrees; ``.normalized`` holds the instance-normalized scale."""
    if tau is not None and tau != ckpt.cfg.horizon:
        raise ConfigurationError(f"checkpoint forecasts {ckpt.cfg.horizon} steps, asked for {tau}")
    w, pred, pred_norm, target_norm = predict(ckpt.model, data)
    metrics = compute_metrics(pred, w.targets, w.region, ckpt.region_ids, "celsius")
    metrics.normalized = compute_metrics(pred_norm, target_norm, w.region, ckpt.region_ids, "normalized")
    return metrics


def ablate(cfg: ExperimentConfig, variant: str, experiment: Experiment | None = None, **kw) -> Metrics:
    """Train ``variant`` under otherwise identical settings and score it on the test segment."""
    run_cfg = cfg.replace(variant=variant)
    exp = experiment or prepare(run_cfg, **kw)
    ckpt = train(run_cfg, experiment=exp)
    return evaluate(ckpt, exp.test)


def _baseline_windows(data: SSTMatrix, tau: int, lookback: int):
    return make_windows(data, lookback, tau)


def persistence_baseline(data: SSTMatrix, tau: int, lookback: int = 8) -> Metrics:
    """Repeat the last observed value over the horizon."""
    w = _baseline_windows(data, tau, lookback)
    pred = np.repeat(w.inputs[:, -1:], tau, axis=1)
    return compute_metrics(pred, w.targets, w.region, list(data.region_ids))


def linear_trend_baseline(data: SSTMatrix, tau: int, lookback: int = 8) -> Metrics:
    """Least-squares line through each input window, extrapolated."""
    w = _baseline_windows(data, tau, lookback)
    t = np.arange(lookback, dtype=np.float64)
    slope, intercept = np.polyfit(t, w.inputs.T, 1)
    future = np.arange(lookback, lookback + tau, dtype=np.float64)
    pred = intercept[:, None] + slope[:, None] * future
    return compute_metrics(pred, w.targets, w.region, list(data.region_ids))


# ---- checkpoint file format ----

def graph_to_dict(g: KnowledgeGraph) -> dict:
    return {
        "entities": [[e.id, e.kind, e.description, list(e.coords) if e.coords else None]
                     for e in (g.entity(i) for i in g.entity_ids())],
        "relations": [[r.id, r.name, r.description] for r in g.relations.values()],
        "triples": [[t.head, t.relation, t.tail, t.description] for t in g.triple_list()],
    }


def graph_from_dict(d: dict) -> KnowledgeGraph:
    return KnowledgeGraph(
        [Entity(i, k, desc, tuple(c) if c else None) for i, k, desc, c in d["entities"]],
        [Relation(*r) for r in d["relations"]],
        [Triple(*t) for t in d["triples"]],
    )


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write everything needed to reproduce the model's forecasts exactly."""
    path = Path(path)
    table_buf = io.BytesIO()
    np.savez(table_buf, entity_matrix=ckpt.table.entity_matrix, relation_matrix=ckpt.table.relation_matrix)
    meta = {
        "version": __version__,
        "config": ckpt.cfg.to_dict(),
        "graph": graph_to_dict(ckpt.graph),
        "table": {
            "entity_ids": list(ckpt.table.entity_ids), "relation_ids": list(ckpt.table.relation_ids),
            "p": ckpt.table.p, "gamma": ckpt.table.gamma, "seed": ckpt.table.seed,
            "epochs": ckpt.table.epochs, "checksum": ckpt.table.checksum(),
        },
        "region_ids": ckpt.region_ids,
        "mean_sst": ckpt.mean_sst,
        "backbone": {"identity": ckpt.backbone_identity, "checksum": ckpt.model.backbone.checksum()},
        "encoder": ckpt.model.encoder_identity,
        "epoch": ckpt.epoch,
        "best_val_loss": ckpt.best_val_loss,
        "history": ckpt.history,
        "rng_state": ckpt.rng_state,
    }
    torch.save({
        "meta": json.dumps(meta),
        "state": ckpt.state_dict(),
        "table": torch.frombuffer(bytearray(table_buf.getvalue()), dtype=torch.uint8),
    }, path)
    return path


def load_checkpoint(path, backbone: FrozenBackbone | None = None) -> Checkpoint:
    """Rebuild a checkpoint; the backbone is regenerated and its checksum verified."""
    blob = torch.load(path, map_location="cpu", weights_only=True)
    meta = json.loads(blob["meta"])
    cfg = config_from_dict(meta["config"])
    graph = graph_from_dict(meta["graph"])
    with np.load(io.BytesIO(blob["table"].numpy().tobytes())) as z:
        tm = meta["table"]
        table = EmbeddingTable(
            tuple(tm["entity_ids"]), np.array(z["entity_matrix"]), tuple(tm["relation_ids"]),
            np.array(z["relation_matrix"]), tm["p"], tm["gamma"], tm["seed"], tm["epochs"], frozen=True,
        )
    if table.checksum() != tm["checksum"]:
        raise PreconditionError("embedding table checksum mismatch")
    backbone = backbone or make_backbone(cfg)
    if backbone.checksum() != meta["backbone"]["checksum"]:
        raise PreconditionError(
            f"backbone {backbone.identity} does not match the checkpoint ({meta['backbone']['identity']})"
        )
    model = Forecaster(cfg, graph, table, meta["region_ids"], meta["mean_sst"], backbone=backbone)
    missing, unexpected = model.load_state_dict(blob["state"], strict=False)
    missing = [k for k in missing if not k.startswith("backbone.")]
    if missing or unexpected:
        raise PreconditionError(f"checkpoint state mismatch: missing {missing}, unexpected {unexpected}")
    model.eval()
    return Checkpoint(
        model, cfg, graph, table, meta["region_ids"], meta["mean_sst"], meta["epoch"],
        meta["best_val_loss"], meta["history"], meta["rng_state"],
    )
