"""Citation-network datasets: loading, canonical serialization and splits."""
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .exceptions import FormatError, SamplingError, ValidationError
from .graph import as_csr

logger = logging.getLogger(__name__)

__all__ = [
    "CitationDataset",
    "SplitState",
    "load_linqs",
    "load_pubmed_tab",
    "load_canonical",
    "save_canonical",
    "load_dataset",
    "make_citation_graph",
    "label_count",
    "sample_split",
    "split_from_labels",
    "DATA_DIR_ENV",
]

DATA_DIR_ENV = "M3S_DATA_DIR"


@dataclass(eq=False)
class CitationDataset:
    """Node features, undirected adjacency and ground-truth labels of a graph.

    ``adjacency`` is symmetric with an empty diagonal; self-loops are added
    later by the propagation operator. ``n_raw_edges`` counts the citation
    records read from the source files before deduplication, when known.
    """

    name: str
    features: np.ndarray
    adjacency: sp.csr_matrix
    labels: np.ndarray
    n_classes: int
    node_ids: list = None
    n_raw_edges: int = None

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.adjacency = as_csr(self.adjacency)
        self.n_classes = int(self.n_classes)
        if self.node_ids is None:
            self.node_ids = [str(i) for i in range(self.n_nodes)]
        self.validate()

    @property
    def n_nodes(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_edges(self):
        """Number of undirected edges."""
        return int(sp.triu(self.adjacency, k=1).nnz)

    def validate(self):
        n = self.n_nodes
        if self.features.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain non-finite values")
        if self.n_classes < 1:
            raise ValidationError("n_classes must be at least 1")
        if self.labels.shape != (n,):
            raise ValidationError(f"expected {n} labels, got {self.labels.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValidationError("labels outside [0, n_classes)")
        if np.any(np.bincount(self.labels, minlength=self.n_classes) == 0):
            raise ValidationError("every class needs at least one node")
        if self.adjacency.shape != (n, n):
            raise ValidationError(f"adjacency shape {self.adjacency.shape} != ({n}, {n})")
        if self.adjacency.diagonal().any():
            raise ValidationError("adjacency must have a zero diagonal")
        diff = self.adjacency - self.adjacency.T
        diff.eliminate_zeros()
        if diff.nnz:
            raise ValidationError("adjacency must be symmetric")
        if len(self.node_ids) != n:
            raise ValidationError("node_ids length does not match the node count")

    def __eq__(self, other):
        if not isinstance(other, CitationDataset):
            return NotImplemented
        return (
            self.n_classes == other.n_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.adjacency.shape == other.adjacency.shape
            and (self.adjacency != other.adjacency).nnz == 0
        )


@dataclass(frozen=True, eq=False)
class SplitState:
    """Labeled/unlabeled partition at a given self-training stage.

    ``assigned_labels`` has one entry per node: the class used for training
    (ground truth for the initial labeled set, virtual labels for nodes added
    later) and -1 for unlabeled nodes.
    """

    assigned_labels: np.ndarray
    stage: int = 0
    labeled: np.ndarray = field(init=False, repr=False)
    unlabeled: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        assigned = np.asarray(self.assigned_labels, dtype=np.int64).copy()
        assigned.setflags(write=False)
        labeled = np.flatnonzero(assigned >= 0)
        unlabeled = np.flatnonzero(assigned < 0)
        labeled.setflags(write=False)
        unlabeled.setflags(write=False)
        object.__setattr__(self, "assigned_labels", assigned)
        object.__setattr__(self, "labeled", labeled)
        object.__setattr__(self, "unlabeled", unlabeled)

    @property
    def n_nodes(self):
        return self.assigned_labels.shape[0]

    def labels_map(self):
        return {int(i): int(self.assigned_labels[i]) for i in self.labeled}

    def with_added(self, nodes, classes):
        """Move ``nodes`` into the labeled set with the given virtual labels."""
        nodes = np.asarray(nodes, dtype=np.int64)
        classes = np.asarray(classes, dtype=np.int64)
        if nodes.shape != classes.shape:
            raise ValidationError("nodes and classes must have the same length")
        if np.any(self.assigned_labels[nodes] >= 0):
            raise ValidationError("cannot relabel a node that is already labeled")
        if np.any(classes < 0):
            raise ValidationError("virtual labels must be non-negative")
        if len(np.unique(nodes)) != len(nodes):
            raise ValidationError("duplicate nodes in addition")
        assigned = self.assigned_labels.copy()
        assigned[nodes] = classes
        return SplitState(assigned, stage=self.stage + 1)

    def __eq__(self, other):
        if not isinstance(other, SplitState):
            return NotImplemented
        return self.stage == other.stage and np.array_equal(
            self.assigned_labels, other.assigned_labels
        )


def split_from_labels(y):
    """Build a stage-0 split from a label vector using -1 for unlabeled nodes."""
    return SplitState(np.asarray(y, dtype=np.int64), stage=0)


def _read_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [line for line in fh.read().splitlines() if line.strip()]


def _build_adjacency(n, pairs):
    """Undirected 0/1 adjacency from (i, j) pairs; drops self-pairs and duplicates."""
    if len(pairs) == 0:
        return sp.csr_matrix((n, n), dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    und = np.unique(np.stack([lo, hi], axis=1), axis=0)
    rows = np.concatenate([und[:, 0], und[:, 1]])
    cols = np.concatenate([und[:, 1], und[:, 0]])
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    return as_csr(A)


def load_linqs(content_path, cites_path, name=None):
    """Load a LINQS ``.content`` / ``.cites`` pair (Cora, CiteSeer).

    Node order follows the content file, class names are indexed by first
    appearance, and citations touching unknown ids are dropped with a warning.
    """
    content = _read_lines(content_path)
    ids, rows, raw_labels = [], [], []
    width = None
    for lineno, line in enumerate(content, 1):
        tok = line.split()
        if len(tok) < 3:
            raise FormatError(f"{content_path}:{lineno}: expected '<id> <features...> <label>'")
        if width is None:
            width = len(tok) - 2
        elif len(tok) - 2 != width:
            raise FormatError(
                f"{content_path}:{lineno}: {len(tok) - 2} features, expected {width}"
            )
        ids.append(tok[0])
        rows.append(tok[1:-1])
        raw_labels.append(tok[-1])
    if len(set(ids)) != len(ids):
        raise FormatError(f"{content_path}: duplicate node ids")
    try:
        features = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{content_path}: non-numeric feature value") from exc
    classes = {}
    for lab in raw_labels:
        classes.setdefault(lab, len(classes))
    labels = np.array([classes[lab] for lab in raw_labels], dtype=np.int64)

    index = {node: i for i, node in enumerate(ids)}
    pairs, dropped, n_raw = [], 0, 0
    for lineno, line in enumerate(_read_lines(cites_path), 1):
        tok = line.split()
        if len(tok) != 2:
            raise FormatError(f"{cites_path}:{lineno}: expected '<id> <id>'")
        n_raw += 1
        a, b = index.get(tok[0]), index.get(tok[1])
        if a is None or b is None:
            dropped += 1
            continue
        pairs.append((a, b))
    if dropped:
        logger.warning("%s: dropped %d citations referencing unknown ids", cites_path, dropped)

    return CitationDataset(
        name=name or Path(content_path).stem,
        features=features,
        adjacency=_build_adjacency(len(ids), pairs),
        labels=labels,
        n_classes=len(classes),
        node_ids=ids,
        n_raw_edges=n_raw,
    )


def load_pubmed_tab(node_path, cites_path, name="pubmed"):
    """Load the tab-separated Pubmed-Diabetes release.

    Features are the TF-IDF columns in declaration order; ``label=k`` values
    are mapped to classes in ascending numeric order.
    """
    lines = _read_lines(node_path)
    if len(lines) < 2:
        raise FormatError(f"{node_path}: missing header lines")
    columns = []
    for decl in lines[1].split("\t"):
        parts = decl.split(":")
        if len(parts) >= 3 and parts[0] == "numeric":
            columns.append(parts[1])
    col_index = {c: j for j, c in enumerate(columns)}
    ids, raw_labels = [], []
    features = np.zeros((len(lines) - 2, len(columns)))
    for r, line in enumerate(lines[2:]):
        tok = line.split("\t")
        ids.append(tok[0])
        label = None
        for item in tok[1:]:
            key, _, value = item.partition("=")
            if key == "label":
                label = value
            elif key in col_index:
                features[r, col_index[key]] = float(value)
        if label is None:
            raise FormatError(f"{node_path}: node {tok[0]} has no label")
        raw_labels.append(label)
    classes = {lab: i for i, lab in enumerate(sorted(set(raw_labels), key=float))}
    labels = np.array([classes[lab] for lab in raw_labels], dtype=np.int64)

    index = {node: i for i, node in enumerate(ids)}
    pairs, dropped, n_raw = [], 0, 0
    for line in _read_lines(cites_path)[2:]:
        tok = line.split("\t")
        if len(tok) != 4:
            raise FormatError(f"{cites_path}: malformed citation line {line!r}")
        n_raw += 1
        a = index.get(tok[1].split(":", 1)[-1])
        b = index.get(tok[3].split(":", 1)[-1])
        if a is None or b is None:
            dropped += 1
            continue
        pairs.append((a, b))
    if dropped:
        logger.warning("%s: dropped %d citations referencing unknown ids", cites_path, dropped)
    return CitationDataset(
        name=name,
        features=features,
        adjacency=_build_adjacency(len(ids), pairs),
        labels=labels,
        n_classes=len(classes),
        node_ids=ids,
        n_raw_edges=n_raw,
    )


def _fmt_row(row):
    # repr() is the shortest string that round-trips a float64 exactly
    return " ".join("0" if v == 0.0 and not math.copysign(1.0, v) < 0 else repr(float(v)) for v in row)


def save_canonical(dataset, path):
    """Write ``dataset`` in the single-file canonical text format."""
    n, f = dataset.features.shape
    upper = sp.triu(dataset.adjacency, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"nodes {n} features {f} classes {dataset.n_classes}\n")
        for row in dataset.features:
            fh.write(_fmt_row(row.tolist()) + "\n")
        fh.write(" ".join(str(int(v)) for v in dataset.labels) + "\n")
        fh.write(f"{len(order)}\n")
        for k in order:
            fh.write(f"{upper.row[k]} {upper.col[k]}\n")


def load_canonical(path, name=None):
    """Read a dataset written by :func:`save_canonical`."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    try:
        head = lines[0].split()
        if len(head) != 6 or head[0::2] != ["nodes", "features", "classes"]:
            raise FormatError(f"{path}: bad header {lines[0]!r}")
        n, f, c = (int(v) for v in head[1::2])
        if n < 1 or f < 1 or c < 1:
            raise FormatError(f"{path}: header counts must be positive, got {lines[0]!r}")
        features = np.array([ln.split() for ln in lines[1 : n + 1]], dtype=np.float64)
        if features.shape != (n, f):
            raise FormatError(f"{path}: feature block has shape {features.shape}, expected ({n}, {f})")
        labels = np.array(lines[n + 1].split(), dtype=np.int64)
        m = int(lines[n + 2])
        edge_lines = lines[n + 3 :]
        if len(edge_lines) != m:
            raise FormatError(f"{path}: expected {m} edge lines, found {len(edge_lines)}")
        edges = np.array([ln.split() for ln in edge_lines], dtype=np.int64).reshape(-1, 2)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: malformed canonical file ({exc})") from exc
    if m and (np.any(edges[:, 0] >= edges[:, 1]) or edges.min() < 0 or edges.max() >= n):
        raise FormatError(f"{path}: edges must satisfy 0 <= i < j < {n}")
    if len(np.unique(edges, axis=0)) != m:
        raise FormatError(f"{path}: duplicate edges")
    try:
        return CitationDataset(
            name=name or Path(path).stem,
            features=features,
            adjacency=_build_adjacency(n, edges),
            labels=labels,
            n_classes=c,
        )
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def make_citation_graph(
    n_nodes=1000,
    n_classes=5,
    n_features=300,
    avg_degree=4.0,
    homophily=0.8,
    words_per_node=15,
    topic_strength=0.3,
    seed=0,
    name="synthetic",
):
    """Random citation-like graph for smoke tests and demos.

    Nodes get binary bag-of-words features drawn from a mix of a class topic
    and a shared background vocabulary; edges join same-class pairs with
    probability ``homophily`` and degrees are heavy-tailed (log-normal).
    """
    rng = np.random.default_rng(seed)
    labels = np.sort(rng.integers(n_classes, size=n_nodes))
    labels[:n_classes] = np.arange(n_classes)
    labels = rng.permutation(labels)

    topics = rng.dirichlet(np.full(n_features, 0.05), size=n_classes)
    background = rng.dirichlet(np.full(n_features, 1.0))
    features = np.zeros((n_nodes, n_features))
    for i in range(n_nodes):
        mix = topic_strength * topics[labels[i]] + (1 - topic_strength) * background
        words = rng.choice(n_features, size=words_per_node, p=mix)
        features[i, words] = 1.0

    members = [np.flatnonzero(labels == k) for k in range(n_classes)]
    stubs = rng.lognormal(mean=0.0, sigma=0.8, size=n_nodes)
    stubs = np.maximum(1, np.round(stubs * avg_degree / 2 / stubs.mean())).astype(int)
    pairs = []
    for i in range(n_nodes):
        for _ in range(stubs[i]):
            if rng.random() < homophily:
                j = rng.choice(members[labels[i]])
            else:
                j = int(rng.integers(n_nodes))
            pairs.append((i, int(j)))
    return CitationDataset(
        name=name,
        features=features,
        adjacency=_build_adjacency(n_nodes, pairs),
        labels=labels,
        n_classes=n_classes,
        n_raw_edges=len(pairs),
    )


def data_dir():
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def load_dataset(name_or_path, root=None):
    """Resolve a dataset by file path or by name under the data directory.

    Lookup order for a name ``x``: ``x.txt`` (canonical), then the LINQS pair
    ``x/x.content`` + ``x/x.cites``, then for PubMed the tab-separated release.
    """
    p = Path(name_or_path)
    if p.is_file():
        return load_canonical(p)
    root = Path(root) if root is not None else data_dir()
    key = str(name_or_path).lower()
    canonical = root / f"{key}.txt"
    if canonical.is_file():
        return load_canonical(canonical, name=key)
    content, cites = root / key / f"{key}.content", root / key / f"{key}.cites"
    if content.is_file() and cites.is_file():
        return load_linqs(content, cites, name=key)
    if key == "pubmed":
        base = root / "Pubmed-Diabetes" / "data"
        node, cit = base / "Pubmed-Diabetes.NODE.paper.tab", base / "Pubmed-Diabetes.DIRECTED.cites.tab"
        if node.is_file() and cit.is_file():
            return load_pubmed_tab(node, cit, name=key)
    raise FileNotFoundError(f"dataset {name_or_path!r} not found (searched {root})")


def label_count(n_nodes, rate):
    """Labeled-set size for a label rate, rounding half up."""
    return int(math.floor(rate * n_nodes + 0.5))


def sample_split(dataset, rate=None, per_class=None, seed=0, balanced=True):
    """Draw the initial labeled set L_0; every other node is unlabeled.

    Exactly one of ``rate`` (fraction of nodes) or ``per_class`` is given.
    Balanced mode draws ``size // n_classes`` nodes per class and spreads the
    remainder over randomly chosen classes; unbalanced mode draws uniformly
    and redraws until every class is represented.
    """
    if (rate is None) == (per_class is None):
        raise SamplingError("give exactly one of rate or per_class")
    n, c = dataset.n_nodes, dataset.n_classes
    rng = np.random.default_rng(seed)
    y = dataset.labels
    if per_class is not None:
        size = int(per_class) * c
    else:
        if not 0 < rate <= 1:
            raise SamplingError(f"label rate must be in (0, 1], got {rate}")
        size = label_count(n, rate)
    if size < c:
        raise SamplingError(f"labeled-set size {size} is smaller than the class count {c}")
    if size > n:
        raise SamplingError(f"labeled-set size {size} exceeds the node count {n}")

    members = [np.flatnonzero(y == k) for k in range(c)]
    if balanced or per_class is not None:
        quota = np.full(c, size // c)
        extra = size - quota.sum()
        if extra:
            quota[rng.choice(c, size=extra, replace=False)] += 1
        chosen = []
        for k in range(c):
            if quota[k] > len(members[k]):
                raise SamplingError(
                    f"class {k} has {len(members[k])} nodes, cannot draw {quota[k]}"
                )
            chosen.append(rng.choice(members[k], size=quota[k], replace=False))
        labeled = np.concatenate(chosen)
    else:
        for _ in range(100):
            labeled = rng.choice(n, size=size, replace=False)
            if len(np.unique(y[labeled])) == c:
                break
        else:
            raise SamplingError("could not draw a split covering every class in 100 attempts")
    assigned = np.full(n, -1, dtype=np.int64)
    assigned[labeled] = y[labeled]
    return SplitState(assigned, stage=0)
