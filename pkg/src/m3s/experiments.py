"""Repeated-run experiments, parameter sweeps and table output."""
import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .baselines import PropagationConfig, label_propagation
from .datasets import CitationDataset, load_dataset, sample_split
from .exceptions import ConfigurationError
from .gcn import accuracy, prepare_features
from .graph import normalized_adjacency
from .training import StageConfig, default_additions, m3s_train, multi_stage_train, self_training, train_gcn

logger = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "ExperimentConfig",
    "ExperimentReport",
    "run_experiment",
    "layer_sweep",
    "cluster_sweep",
    "emit_table",
    "format_table",
    "load_reports",
    "PRESETS",
    "preset_configs",
    "TABLE_COLUMNS",
]

METHODS = ("lp", "gcn", "selftrain", "multistage", "m3s")
TABLE_COLUMNS = ("dataset", "method", "rate", "layers", "K", "t", "k_clusters", "mean", "std", "runs")


@dataclass
class ExperimentConfig:
    dataset: str = "cora"
    method: str = "m3s"
    rate: float = None
    per_class: int = None
    balanced: bool = True
    stage: StageConfig = field(default_factory=StageConfig)
    lp_alpha: float = 0.99
    n_runs: int = 10
    base_seed: int = 0

    def validate(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if (self.rate is None) == (self.per_class is None):
            raise ConfigurationError("give exactly one of rate or per_class")
        if self.n_runs < 1:
            raise ConfigurationError("n_runs must be at least 1")
        if self.method in ("selftrain", "gcn") and self.stage.n_stages != 1:
            self.stage = replace(self.stage, n_stages=1)
        self.stage.validate()
        if self.method == "lp" and not 0 < self.lp_alpha < 1:
            raise ConfigurationError("lp_alpha must lie strictly inside (0, 1)")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["stage"] = StageConfig(**d.get("stage", {}))
        return cls(**d)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    accuracies: list  # percent, one per run
    mean: float
    std: float
    additions_per_class: int = None
    max_min_ratios: list = None  # stage-1 ratio per run (m3s only)
    stage_reports: list = None  # per run, list of StageReport dicts
    wall_clock: list = None  # seconds per run; not written unless requested

    @property
    def mean_max_min_ratio(self):
        if not self.max_min_ratios:
            return None
        return float(np.mean(self.max_min_ratios))

    def row(self):
        cfg = self.config
        return {
            "dataset": cfg.dataset,
            "method": cfg.method,
            "rate": cfg.rate if cfg.rate is not None else f"{cfg.per_class}/class",
            "layers": cfg.stage.layers if cfg.method != "lp" else None,
            "K": cfg.stage.n_stages if cfg.method in ("multistage", "m3s", "selftrain") else None,
            "t": self.additions_per_class,
            "k_clusters": cfg.stage.clusters_k if cfg.method == "m3s" else None,
            "mean": self.mean,
            "std": self.std,
            "runs": len(self.accuracies),
        }

    def to_dict(self, timings=False):
        d = {
            "config": self.config.to_dict(),
            "accuracies": self.accuracies,
            "mean": self.mean,
            "std": self.std,
            "additions_per_class": self.additions_per_class,
            "max_min_ratios": self.max_min_ratios,
            "stage_reports": self.stage_reports,
        }
        if timings:
            d["wall_clock"] = self.wall_clock
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["config"] = ExperimentConfig.from_dict(d["config"])
        return cls(**d)


_TRAINERS = {
    "gcn": train_gcn,
    "selftrain": self_training,
    "multistage": multi_stage_train,
    "m3s": m3s_train,
}


def _resolve(dataset):
    if isinstance(dataset, CitationDataset):
        return dataset
    return load_dataset(dataset)


def run_experiment(config, dataset=None):
    """Run ``config.n_runs`` seeds (base, base+1, ...), resampling the split each time."""
    config.validate()
    ds = _resolve(dataset if dataset is not None else config.dataset)
    A_hat = normalized_adjacency(ds.adjacency)
    X = prepare_features(ds.features, config.stage.normalize_features)
    accs, ratios, stage_reports, clock = [], [], [], []
    t_used = None
    for r in range(config.n_runs):
        seed = config.base_seed + r
        start = time.perf_counter()
        split = sample_split(ds, rate=config.rate, per_class=config.per_class, seed=seed, balanced=config.balanced)
        if config.method == "lp":
            res = label_propagation(ds, split, PropagationConfig(alpha=config.lp_alpha))
            acc = accuracy(res.predictions, ds.labels, split.unlabeled)
            stage_reports.append([])
        else:
            stage_cfg = replace(config.stage, seed=seed)
            res = _TRAINERS[config.method](ds, split, stage_cfg, A_hat=A_hat, X=X)
            acc = res.accuracy
            stage_reports.append([asdict(rep) for rep in res.reports])
            if config.method != "gcn":
                t_used = stage_cfg.additions_per_class or default_additions(split, ds.n_classes)
            if config.method == "m3s":
                ratios.append(res.reports[1].max_min_ratio)
        accs.append(100.0 * acc)
        clock.append(time.perf_counter() - start)
        logger.info("%s %s run %d/%d: %.2f%% (%.1fs)", ds.name, config.method, r + 1, config.n_runs, accs[-1], clock[-1])
    mean = float(np.mean(accs))
    std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    return ExperimentReport(
        config=config,
        accuracies=accs,
        mean=mean,
        std=std,
        additions_per_class=t_used,
        max_min_ratios=ratios or None,
        stage_reports=stage_reports,
        wall_clock=clock,
    )


def layer_sweep(config, layer_list, rate_list, dataset=None):
    """Mean accuracy for every (layers, rate) cell."""
    if not layer_list or any(L < 1 for L in layer_list):
        raise ConfigurationError("layer_list must be non-empty with positive entries")
    ds = _resolve(dataset if dataset is not None else config.dataset)
    out = []
    for rate in rate_list:
        for L in layer_list:
            cfg = replace(config, rate=rate, per_class=None, stage=replace(config.stage, layers=L))
            out.append(run_experiment(cfg, ds))
    return out


def cluster_sweep(config, k_list, dataset=None):
    """M3S accuracy and max-min ratio for each cluster count."""
    ds = _resolve(dataset if dataset is not None else config.dataset)
    if any(k < ds.n_classes for k in k_list):
        raise ConfigurationError("every cluster count must be at least the number of classes")
    out = []
    for k in k_list:
        cfg = replace(config, method="m3s", stage=replace(config.stage, clusters_k=k))
        out.append(run_experiment(cfg, ds))
    return out


def _order(reports):
    def key(rep):
        cfg = rep.config
        rate = cfg.rate if cfg.rate is not None else float("inf")
        return (METHODS.index(cfg.method), rate, cfg.per_class or 0)

    return sorted(reports, key=key)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_table(reports, fmt="csv", timings=False, extra_columns=()):
    """Render reports as CSV, JSON or a markdown table.

    Rows are ordered by method (in ``METHODS`` order) and then by label rate.
    JSON carries the complete reports and can be read back with
    :func:`load_reports`; the other formats hold the summary columns.
    """
    if not reports:
        raise ConfigurationError("no reports to emit")
    reports = _order(reports)
    if fmt == "json":
        return json.dumps([r.to_dict(timings) for r in reports], indent=2) + "\n"
    columns = list(TABLE_COLUMNS) + list(extra_columns)
    rows = []
    for rep in reports:
        row = rep.row()
        if "max_min_ratio" in columns:
            row["max_min_ratio"] = rep.mean_max_min_ratio
        if timings:
            row["seconds"] = float(np.sum(rep.wall_clock))
        rows.append(row)
    if timings:
        columns.append("seconds")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
        lines += ["| " + " | ".join(_cell(row[c]) for c in columns) + " |" for row in rows]
        return "\n".join(lines) + "\n"
    raise ConfigurationError(f"unknown format {fmt!r}")


def emit_table(reports, path, fmt="csv", timings=False, extra_columns=()):
    text = format_table(reports, fmt, timings, extra_columns)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def load_reports(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [ExperimentReport.from_dict(d) for d in json.load(fh)]


CORA_RATES = (0.005, 0.01, 0.02, 0.03, 0.04)
CITESEER_RATES = CORA_RATES
PUBMED_RATES = (0.0003, 0.0005, 0.001)

# per-rate (layers, stages) schedules
PRESETS = {
    "table2": ("cora", CORA_RATES, (4, 3, 3, 2, 2), (5, 4, 4, 2, 2)),
    "table3": ("citeseer", CITESEER_RATES, (3, 3, 3, 2, 2), (3, 3, 3, 3, 3)),
    "table4": ("pubmed", PUBMED_RATES, (4, 4, 4), (4, 4, 4)),
}


def preset_configs(name, methods=METHODS, n_runs=10, base_seed=0, stage=None):
    """Experiment configs reproducing one of the headline result tables."""
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    dataset, rates, layers, stages = PRESETS[name]
    base = stage or StageConfig()
    out = []
    for method in methods:
        for rate, L, K in zip(rates, layers, stages):
            out.append(
                ExperimentConfig(
                    dataset=dataset,
                    method=method,
                    rate=rate,
                    stage=replace(base, layers=L, n_stages=1 if method in ("gcn", "selftrain") else K),
                    n_runs=n_runs,
                    base_seed=base_seed,
                )
            )
    return out
