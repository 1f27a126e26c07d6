"""Self-training, multi-stage training and M3S on top of the GCN.

Every procedure first trains a GCN on the initial labeled set and then runs
stages that move confident unlabeled nodes into the labeled set with virtual
labels before training again. M3S additionally clusters the node embeddings
and keeps a candidate only when its cluster aligns with the class it was
selected for.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .clustering import deepcluster_pseudo_labels, max_min_ratio
from .exceptions import ConfigurationError
from .gcn import (
    GCNClassifier,
    accuracy,
    forward,
    init_model,
    layer_dims_for,
    prepare_features,
    train_epochs,
)
from .graph import normalized_adjacency

logger = logging.getLogger(__name__)

__all__ = [
    "StageConfig",
    "StageReport",
    "TrainResult",
    "default_additions",
    "select_top_confident",
    "self_training_stage",
    "m3s_stage",
    "train_gcn",
    "self_training",
    "multi_stage_train",
    "m3s_train",
    "write_stage_reports",
    "read_stage_reports",
    "MultiStageGCN",
    "M3SGCN",
]

EMBEDDINGS = ("probs", "logits", "hidden")


@dataclass
class StageConfig:
    n_stages: int = 1
    additions_per_class: int = None  # None: derived from the initial split
    epochs_per_stage: int = 200
    warm_start: bool = True
    layers: int = 2
    hidden_units: int = 16
    clusters_k: int = 200
    learning_rate: float = 0.01
    dropout: float = 0.5
    l2: float = 5e-4
    l2_all_layers: bool = False
    normalize_features: bool = True
    embedding: str = "probs"
    cluster_on: str = "all"
    kmeans_max_iter: int = 300
    self_check: bool = True
    seed: int = 0

    def validate(self):
        if self.n_stages < 1:
            raise ConfigurationError("n_stages must be at least 1")
        if self.additions_per_class is not None and self.additions_per_class < 1:
            raise ConfigurationError("additions_per_class must be at least 1")
        if self.epochs_per_stage < 1:
            raise ConfigurationError("epochs_per_stage must be at least 1")
        if self.layers < 1:
            raise ConfigurationError("layers must be at least 1")
        if self.clusters_k < 1:
            raise ConfigurationError("clusters_k must be at least 1")
        if self.embedding not in EMBEDDINGS:
            raise ConfigurationError(f"embedding must be one of {EMBEDDINGS}")
        if self.cluster_on not in ("all", "unlabeled"):
            raise ConfigurationError("cluster_on must be 'all' or 'unlabeled'")
        return self


@dataclass
class StageReport:
    stage: int
    proposed: list
    accepted: list
    n_labeled: int
    precision: float = None
    accuracy: float = None
    max_min_ratio: float = None

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=False)


@dataclass
class TrainResult:
    accuracy: float
    reports: list
    model: object = field(repr=False)
    split: object = field(repr=False)
    probs: np.ndarray = field(repr=False)

    @property
    def predictions(self):
        return np.argmax(self.probs, axis=1)


def write_stage_reports(reports, path):
    """One JSON object per line, in stage order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def read_stage_reports(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [StageReport(**json.loads(line)) for line in fh if line.strip()]


def default_additions(split, n_classes):
    """Initial labeled nodes per class, rounded half up, at least one."""
    return max(1, int(math.floor(len(split.labeled) / n_classes + 0.5)))


def select_top_confident(Z, unlabeled, t):
    """Top-``t`` unlabeled nodes for each class, most confident first.

    A node competes only for its argmax class. Equal scores are ordered by
    node index.
    """
    if t < 1:
        raise ConfigurationError("t must be at least 1")
    Z = np.asarray(Z)
    U = np.asarray(unlabeled, dtype=np.int64)
    owner = np.argmax(Z[U], axis=1) if len(U) else np.empty(0, dtype=np.int64)
    out = {}
    for j in range(Z.shape[1]):
        cand = U[owner == j]
        order = np.lexsort((cand, -Z[cand, j]))
        out[j] = cand[order[:t]].tolist()
    return out


def _precision(nodes, classes, truth):
    if truth is None or len(nodes) == 0:
        return None
    return float(np.mean(truth[np.asarray(nodes)] == np.asarray(classes)))


def _apply(split, chosen):
    nodes = [n for j in sorted(chosen) for n in chosen[j]]
    classes = [j for j in sorted(chosen) for _ in chosen[j]]
    return split.with_added(nodes, classes), nodes, classes


def _self_training_step(model, X, A_hat, split, t, truth=None):
    probs = forward(model, X, A_hat).probs
    candidates = select_top_confident(probs, split.unlabeled, t)
    new_split, nodes, classes = _apply(split, candidates)
    counts = [len(candidates[j]) for j in sorted(candidates)]
    report = StageReport(
        stage=new_split.stage,
        proposed=counts,
        accepted=list(counts),
        n_labeled=len(new_split.labeled),
        precision=_precision(nodes, classes, truth),
    )
    return new_split, report


def self_training_stage(model, X, A_hat, split, t):
    """Move the top-``t`` confident nodes of each class into the labeled set."""
    return _self_training_step(model, X, A_hat, split, t)[0]


def _embedding(trace, kind):
    if kind == "probs":
        return trace.probs
    if kind == "logits":
        return trace.pre_activations[-1]
    if not trace.post_activations:
        raise ConfigurationError("a one-layer GCN has no hidden embedding")
    return trace.post_activations[-1]


def m3s_stage(model, X, A_hat, split, config, seed=0, truth=None, t=None):
    """One M3S stage: cluster, align, then self-train through the self-check."""
    trace = forward(model, X, A_hat)
    probs = trace.probs
    c = probs.shape[1]
    t = t or config.additions_per_class or default_additions(split, c)
    U = split.unlabeled
    candidates = select_top_confident(probs, U, t)
    proposed = [len(candidates[j]) for j in range(c)]

    pseudo, ratio = {}, None
    if len(U):
        emb = _embedding(trace, config.embedding)
        pseudo, _ = deepcluster_pseudo_labels(
            emb, split, c, config.clusters_k, seed=seed, cluster_on=config.cluster_on, max_iter=config.kmeans_max_iter
        )
        ratio = max_min_ratio(pseudo, c)

    if config.self_check:
        kept = {j: [i for i in candidates[j] if pseudo[i] == j] for j in range(c)}
    else:
        kept = candidates
    new_split, nodes, classes = _apply(split, kept)
    report = StageReport(
        stage=new_split.stage,
        proposed=proposed,
        accepted=[len(kept[j]) for j in range(c)],
        n_labeled=len(new_split.labeled),
        precision=_precision(nodes, classes, truth),
        max_min_ratio=ratio,
    )
    return new_split, report


def _seed(config, *path):
    return np.random.SeedSequence([config.seed, *path])


class _Run:
    """State shared by the training procedures for one (graph, split, config)."""

    def __init__(self, X, A_hat, split, n_classes, config, truth=None):
        self.config = config.validate()
        self.X, self.A_hat = X, A_hat
        self.split0 = split
        self.n_classes = n_classes
        self.truth = truth
        self.dims = layer_dims_for(X.shape[1], n_classes, config.layers, config.hidden_units)
        self.model = self._fresh_model(0)
        self.t = config.additions_per_class or default_additions(split, n_classes)

    def _fresh_model(self, stage):
        cfg = self.config
        return init_model(self.dims, cfg.dropout, cfg.l2, seed=_seed(cfg, 0, stage), l2_all_layers=cfg.l2_all_layers)

    def train(self, split, stage):
        cfg = self.config
        if stage > 0 and not cfg.warm_start:
            self.model = self._fresh_model(stage)
        train_epochs(self.model, self.X, self.A_hat, split, cfg.epochs_per_stage, cfg.learning_rate, seed=_seed(cfg, 1, stage))

    def evaluate(self):
        probs = forward(self.model, self.X, self.A_hat).probs
        if self.truth is None:
            return probs, None
        return probs, accuracy(np.argmax(probs, axis=1), self.truth, self.split0.unlabeled)

    def initial(self):
        self.train(self.split0, 0)
        probs, acc = self.evaluate()
        c = self.n_classes
        report = StageReport(0, [0] * c, [0] * c, len(self.split0.labeled), accuracy=acc)
        return report

    def result(self, split, reports):
        probs, acc = self.evaluate()
        return TrainResult(acc, reports, self.model, split, probs)


def _context(dataset, config):
    X = prepare_features(dataset.features, config.normalize_features)
    return X, normalized_adjacency(dataset.adjacency)


def train_gcn(dataset, split, config, A_hat=None, X=None):
    """Plain GCN: one block of ``epochs_per_stage`` epochs on L_0."""
    if X is None or A_hat is None:
        X, A_hat = _context(dataset, config)
    run = _Run(X, A_hat, split, dataset.n_classes, config, dataset.labels)
    reports = [run.initial()]
    return run.result(split, reports)


def self_training(dataset, split, config, A_hat=None, X=None):
    """Self-Training baseline: train, add the top-t nodes per class once, retrain."""
    if X is None or A_hat is None:
        X, A_hat = _context(dataset, config)
    run = _Run(X, A_hat, split, dataset.n_classes, config, dataset.labels)
    reports = [run.initial()]
    split, report = _self_training_step(run.model, X, A_hat, split, run.t, dataset.labels)
    if sum(report.accepted):
        run.train(split, 1)
    report.accuracy = run.evaluate()[1]
    reports.append(report)
    return run.result(split, reports)


def _staged(run, split, step):
    reports = [run.initial()]
    for k in range(1, run.config.n_stages + 1):
        split, report = step(run, split, k)
        if sum(report.accepted):
            run.train(split, k)
        # nothing added: the stage is a no-op and the model carries over
        report.accuracy = run.evaluate()[1]
        reports.append(report)
        logger.debug("stage %d: +%d labeled, accuracy %s", k, sum(report.accepted), report.accuracy)
    return run.result(split, reports)


def _multi_stage(X, A_hat, split, n_classes, config, truth=None):
    run = _Run(X, A_hat, split, n_classes, config, truth)

    def step(run, split, k):
        return _self_training_step(run.model, run.X, run.A_hat, split, run.t, truth)

    return _staged(run, split, step)


def _m3s(X, A_hat, split, n_classes, config, truth=None):
    run = _Run(X, A_hat, split, n_classes, config, truth)

    def step(run, split, k):
        return m3s_stage(run.model, run.X, run.A_hat, split, run.config, seed=_seed(run.config, 2, k), truth=truth, t=run.t)

    return _staged(run, split, step)


def multi_stage_train(dataset, split, config, A_hat=None, X=None):
    """Initial training followed by ``n_stages`` rounds of select, add, retrain.

    With one stage this is exactly the Self-Training baseline. Accuracy is
    measured on the initial unlabeled set against ground truth.
    """
    if X is None or A_hat is None:
        X, A_hat = _context(dataset, config)
    return _multi_stage(X, A_hat, split, dataset.n_classes, config, dataset.labels)


def m3s_train(dataset, split, config, A_hat=None, X=None):
    """Multi-stage training with the DeepCluster self-check on every stage."""
    if X is None or A_hat is None:
        X, A_hat = _context(dataset, config)
    return _m3s(X, A_hat, split, dataset.n_classes, config, dataset.labels)


class MultiStageGCN(GCNClassifier):
    """Multi-stage self-trained GCN (``n_stages=1`` gives plain self-training)."""

    _procedure = staticmethod(_multi_stage)

    def __init__(
        self,
        n_stages=3,
        additions_per_class=None,
        n_layers=2,
        hidden_units=16,
        dropout=0.5,
        l2_weight=5e-4,
        learning_rate=0.01,
        epochs=200,
        warm_start=True,
        normalize_features=True,
        random_state=0,
    ):
        super().__init__(
            n_layers=n_layers,
            hidden_units=hidden_units,
            dropout=dropout,
            l2_weight=l2_weight,
            learning_rate=learning_rate,
            epochs=epochs,
            normalize_features=normalize_features,
            random_state=random_state,
        )
        self.n_stages = n_stages
        self.additions_per_class = additions_per_class
        self.warm_start = warm_start

    def _stage_config(self):
        return StageConfig(
            n_stages=self.n_stages,
            additions_per_class=self.additions_per_class,
            epochs_per_stage=self.epochs,
            warm_start=self.warm_start,
            layers=self.n_layers,
            hidden_units=self.hidden_units,
            learning_rate=self.learning_rate,
            dropout=self.dropout,
            l2=self.l2_weight,
            normalize_features=self.normalize_features,
            seed=self.random_state,
        )

    def fit(self, X, y, adjacency):
        split = self._setup(X, y, adjacency)
        result = self._procedure(self.X_, self.A_hat_, split, len(self.classes_), self._stage_config())
        self.model_ = result.model
        self.stage_reports_ = result.reports
        self.final_split_ = result.split
        self._finish()
        return self


class M3SGCN(MultiStageGCN):
    """Multi-stage GCN whose additions pass a DeepCluster self-check."""

    _procedure = staticmethod(_m3s)

    def __init__(
        self,
        n_stages=3,
        additions_per_class=None,
        n_clusters=200,
        embedding="probs",
        n_layers=2,
        hidden_units=16,
        dropout=0.5,
        l2_weight=5e-4,
        learning_rate=0.01,
        epochs=200,
        warm_start=True,
        normalize_features=True,
        random_state=0,
    ):
        super().__init__(
            n_stages=n_stages,
            additions_per_class=additions_per_class,
            n_layers=n_layers,
            hidden_units=hidden_units,
            dropout=dropout,
            l2_weight=l2_weight,
            learning_rate=learning_rate,
            epochs=epochs,
            warm_start=warm_start,
            normalize_features=normalize_features,
            random_state=random_state,
        )
        self.n_clusters = n_clusters
        self.embedding = embedding

    def _stage_config(self):
        cfg = super()._stage_config()
        cfg.clusters_k = self.n_clusters
        cfg.embedding = self.embedding
        return cfg
