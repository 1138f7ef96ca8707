"""Command line entry point: ``oceankg <command> [options]``.

Every command prints a tab-separated summary to stdout; commands that
produce reports also write JSON/TSV artifacts and PNG figures to ``--out``.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import HORIZONS, VARIANTS, ExperimentConfig, load_config
from .errors import OceanKGError

log = logging.getLogger("oceankg")


def _emit(rows, header=None, out=None):
    lines = []
    if header:
        lines.append("\t".join(header))
    lines.extend("\t".join(str(v) for v in row) for row in rows)
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    changes = {}
    if getattr(args, "horizon", None) is not None:
        changes["horizon"] = args.horizon
    if getattr(args, "variant", None) is not None:
        changes["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        # one seed drives model init, embedding pretraining and the synthetic generator
        changes["seed"] = args.seed
        changes["kge"] = dataclasses.replace(cfg.kge, seed=args.seed)
        changes["synthetic"] = dataclasses.replace(cfg.synthetic, seed=args.seed)
    return cfg.replace(**changes).validate() if changes else cfg.validate()


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_make_synthetic(args):
    from .data import write_sst
    from .graph import save_boundaries, save_graph, stats
    from .synthetic import correlated_dataset, ocean_graph

    cfg = resolve_config(args)
    out = _out(args)
    if args.kind == "ocean":
        bundle = ocean_graph(cfg.synthetic.seed)
        graph, bounds = bundle.graph, bundle.boundaries
    else:
        ds = correlated_dataset(cfg.synthetic)
        graph, bounds = ds.graph, ds.boundaries
        write_sst(ds.data, out / "sst.txt")
    save_graph(graph, out / "kg")
    save_boundaries(bounds, out / "kg" / "boundaries.tsv")
    _emit(stats(graph).as_table().items(), ["kind", "count"], out / "kg_stats.tsv")


def cmd_build_kg(args):
    from .graph import load_graph_dir, save_graph, stats
    from .synthetic import ocean_graph

    cfg = resolve_config(args)
    kg_dir = args.kg_dir or cfg.kg_dir
    graph = load_graph_dir(kg_dir) if kg_dir else ocean_graph(cfg.synthetic.seed).graph
    out = _out(args)
    if not kg_dir:
        save_graph(graph, out / "kg")
    table = stats(graph).as_table()
    table["adjacency_convention"] = graph.adjacency_convention
    _emit(table.items(), ["kind", "count"], out / "kg_stats.tsv")


def cmd_pretrain_kge(args):
    from .graph import load_graph_dir
    from .synthetic import correlated_dataset
    from .transe import pretrain

    cfg = resolve_config(args)
    kg_dir = args.kg_dir or cfg.kg_dir
    graph = load_graph_dir(kg_dir) if kg_dir else correlated_dataset(cfg.synthetic).graph
    table = pretrain(graph, cfg.kge)
    out = _out(args)
    table.save(out / "embeddings.npz")
    _emit(([i, _fmt(v)] for i, v in enumerate(table.loss_history)), ["epoch", "loss"], out / "kge_loss.tsv")
    log.info("wrote %s (checksum %s)", out / "embeddings.npz", table.checksum()[:12])


def _report(ckpt, metrics, data, out: Path, prefix: str = ""):
    from .export import write_mae_grid, write_metrics
    from .plotting import plot_forecast, plot_mae_map
    from .training import predict

    write_metrics(metrics, out / f"{prefix}metrics.json", {
        "variant": ckpt.cfg.variant, "horizon": ckpt.cfg.horizon, "seed": ckpt.cfg.seed,
        "epoch": ckpt.epoch, "backbone": ckpt.backbone_identity,
    })
    write_mae_grid(metrics, out / f"{prefix}mae_grid.txt")
    plot_mae_map(metrics, out / f"{prefix}mae_map.png", f"{ckpt.cfg.variant}, horizon {ckpt.cfg.horizon}")
    w, pred, _, _ = predict(ckpt.model, data)
    i = len(w) // data.n_regions - 1      # last window of the first region
    plot_forecast(w.inputs[i], w.targets[i], pred[i], out / f"{prefix}forecast.png", ckpt.region_ids[0])


def _metric_rows(name, m):
    return [
        [name, "celsius", _fmt(m.mae), _fmt(m.mse)],
        [name, "normalized", _fmt(m.normalized.mae), _fmt(m.normalized.mse)],
    ]


def cmd_train(args):
    from .plotting import plot_loss_curve
    from .training import evaluate, prepare, save_checkpoint, train

    cfg = resolve_config(args)
    exp = prepare(cfg)
    ckpt = train(cfg, experiment=exp)
    out = _out(args)
    save_checkpoint(ckpt, out / "checkpoint.pt")
    rows = [[h["epoch"], _fmt(h["lr"]), _fmt(h["train_loss"]), _fmt(h["val_loss"])] for h in ckpt.history]
    header = ["epoch", "lr", "train_loss", "val_loss"]
    Path(out / "history.tsv").write_text(
        "\n".join("\t".join(map(str, r)) for r in [header, *rows]) + "\n", encoding="utf-8")
    plot_loss_curve(ckpt.history, out / "loss_curve.png")
    metrics = evaluate(ckpt, exp.test)
    _report(ckpt, metrics, exp.test, out)
    _emit(_metric_rows(cfg.variant, metrics), ["variant", "scale", "mae", "mse"], out / "summary.tsv")


def cmd_evaluate(args):
    from .training import evaluate, load_checkpoint, prepare

    ckpt = load_checkpoint(args.checkpoint)
    if args.horizon is not None and args.horizon != ckpt.cfg.horizon:
        from .errors import ConfigurationError

        raise ConfigurationError(f"checkpoint forecasts {ckpt.cfg.horizon} steps, asked for {args.horizon}")
    data = None
    if args.sst:
        from .data import ingest_sst

        data = ingest_sst(args.sst, ckpt.cfg.min_coverage)
    exp = prepare(ckpt.cfg, graph=ckpt.graph, data=data, table=ckpt.table)
    metrics = evaluate(ckpt, exp.test, args.horizon)
    out = _out(args)
    _report(ckpt, metrics, exp.test, out, "eval_")
    _emit(_metric_rows(ckpt.cfg.variant, metrics), ["variant", "scale", "mae", "mse"], out / "eval_summary.tsv")


def cmd_ablate(args):
    from .plotting import plot_ablation
    from .training import evaluate, prepare, train

    cfg = resolve_config(args)
    variants = args.variants or list(VARIANTS)
    exp = prepare(cfg)
    out = _out(args)
    rows, mse = [], {}
    for v in variants:
        ckpt = train(cfg.replace(variant=v), experiment=exp)
        m = evaluate(ckpt, exp.test)
        mse[v] = m.mse
        rows += _metric_rows(v, m)
    plot_ablation(mse, out / "ablation.png")
    _emit(rows, ["variant", "scale", "mae", "mse"], out / "ablation.tsv")


def cmd_baseline(args):
    from .training import linear_trend_baseline, persistence_baseline, prepare

    cfg = resolve_config(args)
    exp = prepare(cfg)
    rows = []
    for name, fn in (("persistence", persistence_baseline), ("linear_trend", linear_trend_baseline)):
        m = fn(exp.test, cfg.horizon, cfg.lookback)
        rows.append([name, "celsius", _fmt(m.mae), _fmt(m.mse)])
    _emit(rows, ["baseline", "scale", "mae", "mse"], _out(args) / "baselines.tsv")


def cmd_export_embeddings(args):
    from .export import export_embeddings
    from .training import load_checkpoint, prepare

    ckpt = load_checkpoint(args.checkpoint)
    exp = prepare(ckpt.cfg, graph=ckpt.graph, table=ckpt.table)
    path = export_embeddings(ckpt, _out(args) / "embeddings.tsv", exp.train)
    _emit([["rows", len(ckpt.region_ids)], ["path", path]])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--horizon", type=int, choices=HORIZONS)
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--out", default="runs/latest", help="output directory (default: %(default)s)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="oceankg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", parents=[common], help="write a synthetic graph (and SST grid)")
    p.add_argument("--kind", choices=("correlated", "ocean"), default="correlated")
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("build-kg", parents=[common], help="load or build the ocean graph and report counts")
    p.add_argument("--kg-dir")
    p.set_defaults(func=cmd_build_kg)

    p = sub.add_parser("pretrain-kge", parents=[common], help="train structural embeddings")
    p.add_argument("--kg-dir")
    p.set_defaults(func=cmd_pretrain_kge)

    p = sub.add_parser("train", parents=[common], help="train, checkpoint and evaluate on the test segment")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on the test segment")
    p.add_argument("checkpoint")
    p.add_argument("--sst", help="SST grid to evaluate on (default: the checkpoint's data source)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="train and score a set of variants")
    p.add_argument("--variants", nargs="+", choices=VARIANTS)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("baseline", parents=[common], help="persistence and linear-trend reference scores")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("export-embeddings", parents=[common], help="per-region aligned embeddings as TSV")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_export_embeddings)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except OceanKGError as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
