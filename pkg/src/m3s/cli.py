"""Command-line entry point: ``m3s run|sweep-layers|sweep-clusters|convert-dataset``."""
import argparse
import json
import logging
import os
import sys

from .datasets import DATA_DIR_ENV, load_canonical, load_dataset, load_linqs, load_pubmed_tab, save_canonical
from .exceptions import M3SError
from .experiments import (
    METHODS,
    PRESETS,
    ExperimentConfig,
    cluster_sweep,
    format_table,
    layer_sweep,
    preset_configs,
    run_experiment,
)
from .training import StageConfig

logger = logging.getLogger("m3s")


def parse_rate(text):
    """Label rate as a fraction; accepts ``0.005`` or ``0.5%``."""
    text = text.strip()
    if text.endswith("%"):
        return float(text[:-1]) / 100.0
    return float(text)


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _rate_list(text):
    return [parse_rate(v) for v in text.split(",") if v.strip()]


def _common(p):
    p.add_argument("--dataset", help="dataset name under the data dir, or a canonical file path (default cora, or the preset's dataset)")
    p.add_argument("--data-dir", help=f"dataset root (default ${DATA_DIR_ENV} or ./data)")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--stages", type=int, default=1, help="number of self-training stages K")
    p.add_argument("--t", type=int, default=None, help="nodes added per class per stage (default: |L0|/classes)")
    p.add_argument("--clusters", type=int, default=200)
    p.add_argument("--epochs", type=int, default=200, help="epochs per stage")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--l2", type=float, default=5e-4)
    p.add_argument("--l2-all-layers", action="store_true")
    p.add_argument("--no-normalize", action="store_true", help="skip L1 row normalization of features")
    p.add_argument("--cold-start", action="store_true", help="re-initialize weights at every stage")
    p.add_argument("--embedding", choices=("probs", "logits", "hidden"), default="probs")
    p.add_argument("--cluster-on", choices=("all", "unlabeled"), default="all")
    p.add_argument("--lp-alpha", type=float, default=0.99)
    p.add_argument("--unbalanced", action="store_true", help="sample L0 uniformly instead of per class")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="base seed; run i uses seed + i")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json", "markdown"), default="csv")
    p.add_argument("--timings", action="store_true", help="include wall-clock columns (not reproducible)")
    p.add_argument("--stage-log", help="write per-stage reports as JSON lines")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="m3s", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment or a table preset")
    _common(run)
    run.add_argument("--method", choices=METHODS, default=None)
    group = run.add_mutually_exclusive_group()
    group.add_argument("--rate", type=parse_rate)
    group.add_argument("--per-class", type=int)
    run.add_argument("--preset", choices=sorted(PRESETS))

    sl = sub.add_parser("sweep-layers", help="accuracy per (layers, rate) cell")
    _common(sl)
    sl.add_argument("--method", choices=METHODS, default="gcn")
    sl.add_argument("--layer-list", type=_int_list, default=[2, 3, 4, 5])
    sl.add_argument("--rates", type=_rate_list, default=[0.005, 0.01, 0.02, 0.03, 0.04])

    sc = sub.add_parser("sweep-clusters", help="M3S accuracy and max-min ratio per cluster count")
    _common(sc)
    group = sc.add_mutually_exclusive_group()
    group.add_argument("--rate", type=parse_rate)
    group.add_argument("--per-class", type=int)
    sc.add_argument("--cluster-list", type=_int_list, default=None)

    conv = sub.add_parser("convert-dataset", help="convert LINQS or PubMed files to the canonical format")
    conv.add_argument("--source", choices=("linqs", "pubmed", "canonical"), default="linqs")
    conv.add_argument("--content", required=True, help=".content file, or the PubMed NODE.paper.tab file")
    conv.add_argument("--cites", help=".cites file, or the PubMed DIRECTED.cites.tab file")
    conv.add_argument("--name")
    conv.add_argument("--out", required=True)
    conv.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _stage_config(args):
    return StageConfig(
        n_stages=args.stages,
        additions_per_class=args.t,
        epochs_per_stage=args.epochs,
        warm_start=not args.cold_start,
        layers=args.layers,
        hidden_units=args.hidden,
        clusters_k=args.clusters,
        learning_rate=args.lr,
        dropout=args.dropout,
        l2=args.l2,
        l2_all_layers=args.l2_all_layers,
        normalize_features=not args.no_normalize,
        embedding=args.embedding,
        cluster_on=args.cluster_on,
    )


def _experiment_config(args, method):
    rate = getattr(args, "rate", None)
    per_class = getattr(args, "per_class", None)
    if rate is None and per_class is None:
        rate = 0.005
    return ExperimentConfig(
        dataset=args.dataset or "cora",
        method=method,
        rate=rate,
        per_class=per_class,
        balanced=not args.unbalanced,
        stage=_stage_config(args),
        lp_alpha=args.lp_alpha,
        n_runs=args.runs,
        base_seed=args.seed,
    )


def _write(args, reports, extra_columns=()):
    text = format_table(reports, args.format, timings=args.timings, extra_columns=extra_columns)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.stage_log:
        with open(args.stage_log, "w", encoding="utf-8", newline="\n") as fh:
            for rep in reports:
                for run, stages in enumerate(rep.stage_reports or []):
                    for st in stages:
                        record = {"dataset": rep.config.dataset, "method": rep.config.method, "run": run, **st}
                        fh.write(json.dumps(record) + "\n")


def cmd_run(args):
    if args.preset:
        methods = [args.method] if args.method else list(METHODS)
        configs = preset_configs(args.preset, methods, args.runs, args.seed, _stage_config(args))
        dataset = load_dataset(args.dataset or configs[0].dataset, args.data_dir)
    else:
        configs = [_experiment_config(args, args.method or "m3s")]
        dataset = load_dataset(configs[0].dataset, args.data_dir)
    for cfg in configs:
        cfg.dataset = dataset.name
        cfg.validate()
    reports = [run_experiment(cfg, dataset) for cfg in configs]
    _write(args, reports)


def cmd_sweep_layers(args):
    cfg = _experiment_config(args, args.method)
    dataset = load_dataset(cfg.dataset, args.data_dir)
    cfg.dataset = dataset.name
    _write(args, layer_sweep(cfg, args.layer_list, args.rates, dataset))


def cmd_sweep_clusters(args):
    cfg = _experiment_config(args, "m3s")
    dataset = load_dataset(cfg.dataset, args.data_dir)
    if cfg.rate == 0.005 and args.rate is None and args.per_class is None:
        cfg.rate, cfg.per_class = None, 2
    cfg.dataset = dataset.name
    ks = args.cluster_list or sorted({dataset.n_classes, 2 * dataset.n_classes, 50, 100, 200})
    _write(args, cluster_sweep(cfg, ks, dataset), extra_columns=("max_min_ratio",))


def cmd_convert(args):
    if args.source == "linqs":
        if not args.cites:
            raise M3SError("--cites is required for LINQS input")
        ds = load_linqs(args.content, args.cites, name=args.name)
    elif args.source == "pubmed":
        if not args.cites:
            raise M3SError("--cites is required for PubMed input")
        ds = load_pubmed_tab(args.content, args.cites, name=args.name or "pubmed")
    else:
        ds = load_canonical(args.content, name=args.name)
    save_canonical(ds, args.out)
    logger.info("wrote %s: %d nodes, %d edges, %d classes", args.out, ds.n_nodes, ds.n_edges, ds.n_classes)


COMMANDS = {
    "run": cmd_run,
    "sweep-layers": cmd_sweep_layers,
    "sweep-clusters": cmd_sweep_clusters,
    "convert-dataset": cmd_convert,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "data_dir", None):
        os.environ[DATA_DIR_ENV] = args.data_dir
    try:
        COMMANDS[args.command](args)
    except (M3SError, OSError) as exc:
        print(f"m3s: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
