"""Multi-layer graph convolutional network trained full-batch with Adam.

Layer ``l`` computes ``A_hat @ dropout(H_l) @ W_l``; hidden layers apply ReLU
and the output layer a row-wise softmax. Gradients are derived by hand.
"""
import copy
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, DimensionError, FormatError, NumericError, ValidationError
from .graph import as_csr, normalized_adjacency, row_normalize

__all__ = [
    "GcnModel",
    "ForwardTrace",
    "layer_dims_for",
    "prepare_features",
    "init_model",
    "forward",
    "loss",
    "backward",
    "adam_step",
    "train_epochs",
    "predict",
    "accuracy",
    "save_checkpoint",
    "load_checkpoint",
    "GCNClassifier",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class GcnModel:
    layer_dims: list
    weights: list
    adam_m: list
    adam_v: list
    adam_t: int = 0
    dropout_rate: float = 0.5
    l2_weight: float = 5e-4
    l2_all_layers: bool = False

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self):
        return copy.deepcopy(self)


@dataclass
class ForwardTrace:
    inputs: list  # dropped-out input to each layer (sparse for the feature layer)
    masks: list  # dropout keep-masks scaled by 1/(1-p), None when inactive
    pre_activations: list
    post_activations: list
    log_probs: np.ndarray
    probs: np.ndarray = field(init=False)
    training: bool = False

    def __post_init__(self):
        self.probs = np.exp(self.log_probs)


def layer_dims_for(n_features, n_classes, n_layers, hidden=16):
    if n_layers < 1:
        raise ConfigurationError("a GCN needs at least one layer")
    return [n_features] + [hidden] * (n_layers - 1) + [n_classes]


def prepare_features(X, normalize=True):
    """Sparse CSR copy of ``X``, L1 row-normalized unless disabled."""
    X = sp.csr_matrix(X, dtype=np.float64)
    return row_normalize(X) if normalize else X


def init_model(layer_dims, dropout_rate=0.5, l2_weight=5e-4, seed=0, l2_all_layers=False):
    """Glorot-uniform weights, zeroed Adam moments."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigurationError(f"invalid layer dims {layer_dims!r}")
    if not 0 <= dropout_rate < 1:
        raise ConfigurationError("dropout_rate must lie in [0, 1)")
    if l2_weight < 0:
        raise ConfigurationError("l2_weight must be non-negative")
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-r, r, size=(fan_in, fan_out)))
    return GcnModel(
        layer_dims=dims,
        weights=weights,
        adam_m=[np.zeros_like(w) for w in weights],
        adam_v=[np.zeros_like(w) for w in weights],
        adam_t=0,
        dropout_rate=float(dropout_rate),
        l2_weight=float(l2_weight),
        l2_all_layers=bool(l2_all_layers),
    )


def _dropout(H, p, rng):
    keep = 1.0 - p
    if sp.issparse(H):
        # zeros stay zero under dropout, so only stored entries need a mask
        mask = (rng.random(H.nnz) < keep) / keep
        out = H.copy()
        out.data = out.data * mask
        return out, mask
    mask = (rng.random(H.shape) < keep) / keep
    return H * mask, mask


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(model, X, A_hat, training=False, seed=None, rng=None):
    """Run the network; dropout is active only when ``training`` is set.

    Dropout masks come from ``rng`` if given, else from a fresh generator
    seeded with ``seed``.
    """
    n = A_hat.shape[0]
    if A_hat.shape != (n, n):
        raise DimensionError(f"propagation operator must be square, got {A_hat.shape}")
    if X.shape != (n, model.layer_dims[0]):
        raise DimensionError(f"features have shape {X.shape}, expected ({n}, {model.layer_dims[0]})")
    active = training and model.dropout_rate > 0
    if active and rng is None:
        rng = np.random.default_rng(seed)
    inputs, masks, pre, post = [], [], [], []
    H = X
    for l, W in enumerate(model.weights):
        if active:
            H, mask = _dropout(H, model.dropout_rate, rng)
        else:
            mask = None
        inputs.append(H)
        masks.append(mask)
        Z = A_hat @ np.asarray(H @ W)
        pre.append(Z)
        if l < model.n_layers - 1:
            H = np.maximum(Z, 0.0)
            post.append(H)
    if not np.all(np.isfinite(pre[-1])):
        raise NumericError("non-finite logits in forward pass")
    return ForwardTrace(inputs, masks, pre, post, _log_softmax(pre[-1]), training=training)


def _labeled(split):
    idx = split.labeled
    if len(idx) == 0:
        raise ConfigurationError("the labeled set is empty")
    return idx, split.assigned_labels[idx]


def _l2_layers(model):
    return range(model.n_layers) if model.l2_all_layers else range(1)


def loss(trace, split, model):
    """Mean cross-entropy over labeled nodes plus ``l2 * ||W||^2 / 2``."""
    idx, y = _labeled(split)
    ce = -trace.log_probs[idx, y].mean()
    reg = sum(0.5 * np.sum(model.weights[l] ** 2) for l in _l2_layers(model))
    return float(ce + model.l2_weight * reg)


def backward(trace, split, model, A_hat):
    """Exact gradients of :func:`loss` with respect to every weight matrix.

    ``A_hat`` is symmetric, so it doubles as its own transpose.
    """
    if len(trace.pre_activations) != model.n_layers:
        raise ValidationError("trace was produced by a model with a different depth")
    idx, y = _labeled(split)
    G = np.zeros_like(trace.probs)
    G[idx] = trace.probs[idx]
    G[idx, y] -= 1.0
    G /= len(idx)
    grads = [None] * model.n_layers
    for l in range(model.n_layers - 1, -1, -1):
        AG = A_hat @ G
        grads[l] = np.asarray(trace.inputs[l].T @ AG)
        if l == 0:
            break
        dH = AG @ model.weights[l].T
        if trace.masks[l] is not None:
            dH = dH * trace.masks[l]
        G = dH * (trace.pre_activations[l - 1] > 0)
    for l in _l2_layers(model):
        grads[l] = grads[l] + model.l2_weight * model.weights[l]
    return grads


def adam_step(model, grads, learning_rate=0.01):
    """One bias-corrected Adam update, applied in place; returns ``model``."""
    if len(grads) != model.n_layers or any(g.shape != w.shape for g, w in zip(grads, model.weights)):
        raise ValidationError("gradient shapes do not match the weights")
    model.adam_t += 1
    t = model.adam_t
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for l, g in enumerate(grads):
        m = model.adam_m[l] = ADAM_BETA1 * model.adam_m[l] + (1.0 - ADAM_BETA1) * g
        v = model.adam_v[l] = ADAM_BETA2 * model.adam_v[l] + (1.0 - ADAM_BETA2) * g * g
        model.weights[l] = model.weights[l] - learning_rate * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        if not np.all(np.isfinite(model.weights[l])):
            raise NumericError(f"non-finite weights in layer {l} after Adam step {t}")
    return model


def train_epochs(model, X, A_hat, split, n_epochs, learning_rate=0.01, seed=0, return_losses=False):
    """Full-batch training for ``n_epochs`` epochs (model updated in place).

    All dropout masks of the call come from one generator seeded by ``seed``.
    """
    if n_epochs < 0:
        raise ConfigurationError("n_epochs must be non-negative")
    rng = np.random.default_rng(seed)
    losses = np.empty(n_epochs)
    for epoch in range(n_epochs):
        trace = forward(model, X, A_hat, training=True, rng=rng)
        losses[epoch] = loss(trace, split, model)
        adam_step(model, backward(trace, split, model, A_hat), learning_rate)
    if return_losses:
        return model, losses
    return model


def predict(model, X, A_hat):
    """Class probabilities and argmax labels (lowest index wins ties)."""
    probs = forward(model, X, A_hat, training=False).probs
    return probs, np.argmax(probs, axis=1)


def accuracy(predicted, truth, eval_set):
    eval_set = np.asarray(eval_set, dtype=np.int64)
    if eval_set.size == 0:
        raise ConfigurationError("evaluation set is empty")
    return float(np.mean(np.asarray(predicted)[eval_set] == np.asarray(truth)[eval_set]))


# Checkpoint layout, all little-endian:
#   magic b"M3SG", uint32 version (=1), uint32 L (number of weight matrices),
#   uint32 dims[L + 1], float64 dropout_rate, float64 l2_weight,
#   uint8 l2_all_layers, uint64 adam_t,
#   then float64 row-major blocks: W_0..W_{L-1}, m_0..m_{L-1}, v_0..v_{L-1}.
_MAGIC = b"M3SG"
_VERSION = 1


def save_checkpoint(model, path):
    L = model.n_layers
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, L))
        fh.write(struct.pack(f"<{L + 1}I", *model.layer_dims))
        fh.write(struct.pack("<ddBQ", model.dropout_rate, model.l2_weight, model.l2_all_layers, model.adam_t))
        for block in (model.weights, model.adam_m, model.adam_v):
            for a in block:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _MAGIC:
        raise FormatError(f"{path}: not a GCN checkpoint")
    try:
        version, L = struct.unpack_from("<II", buf, 4)
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        dims = list(struct.unpack_from(f"<{L + 1}I", buf, off))
        off += 4 * (L + 1)
        dropout, l2, l2_all, t = struct.unpack_from("<ddBQ", buf, off)
        off += struct.calcsize("<ddBQ")
        blocks = []
        for _ in range(3):
            mats = []
            for fi, fo in zip(dims[:-1], dims[1:]):
                a = np.frombuffer(buf, dtype="<f8", count=fi * fo, offset=off)
                mats.append(a.reshape(fi, fo).astype(np.float64))
                off += 8 * fi * fo
            blocks.append(mats)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: truncated checkpoint ({exc})") from exc
    if off != len(buf):
        raise FormatError(f"{path}: trailing bytes in checkpoint")
    return GcnModel(dims, blocks[0], blocks[1], blocks[2], int(t), dropout, l2, bool(l2_all))


class GCNClassifier(ClassifierMixin, BaseEstimator):
    """Transductive GCN node classifier with a scikit-learn interface.

    ``fit(X, y, adjacency)`` takes the node feature matrix, a label vector in
    which unlabeled nodes are marked ``-1``, and the graph's adjacency matrix.
    After fitting, ``transduction_`` holds a label for every node.
    """

    def __init__(
        self,
        n_layers=2,
        hidden_units=16,
        dropout=0.5,
        l2_weight=5e-4,
        learning_rate=0.01,
        epochs=200,
        normalize_features=True,
        random_state=0,
    ):
        self.n_layers = n_layers
        self.hidden_units = hidden_units
        self.dropout = dropout
        self.l2_weight = l2_weight
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.normalize_features = normalize_features
        self.random_state = random_state

    def _setup(self, X, y, adjacency):
        from .datasets import split_from_labels

        y = np.asarray(y)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DimensionError("y must be a vector with one entry per node")
        labeled = y != -1
        if not labeled.any():
            raise ConfigurationError("at least one node must be labeled")
        self.classes_ = np.unique(y[labeled])
        encoded = np.full(y.shape[0], -1, dtype=np.int64)
        encoded[labeled] = np.searchsorted(self.classes_, y[labeled])
        self.X_ = prepare_features(X, self.normalize_features)
        self.A_hat_ = normalized_adjacency(as_csr(adjacency))
        if self.A_hat_.shape[0] != X.shape[0]:
            raise DimensionError("adjacency size does not match the number of nodes")
        self.n_features_in_ = X.shape[1]
        return split_from_labels(encoded)

    def _finish(self):
        probs, labels = predict(self.model_, self.X_, self.A_hat_)
        self.label_distributions_ = probs
        self.transduction_ = self.classes_[labels]

    def fit(self, X, y, adjacency):
        split = self._setup(X, y, adjacency)
        seq = np.random.SeedSequence(self.random_state)
        init_seed, train_seed = seq.spawn(2)
        dims = layer_dims_for(self.n_features_in_, len(self.classes_), self.n_layers, self.hidden_units)
        self.model_ = init_model(dims, self.dropout, self.l2_weight, seed=init_seed)
        train_epochs(self.model_, self.X_, self.A_hat_, split, self.epochs, self.learning_rate, seed=train_seed)
        self._finish()
        return self

    def _operands(self, X, adjacency):
        check_is_fitted(self, "model_")
        Xp = self.X_ if X is None else prepare_features(X, self.normalize_features)
        A_hat = self.A_hat_ if adjacency is None else normalized_adjacency(as_csr(adjacency))
        return Xp, A_hat

    def predict_proba(self, X=None, adjacency=None):
        """Class probabilities; defaults to the graph seen during ``fit``."""
        return predict(self.model_, *self._operands(X, adjacency))[0]

    def predict(self, X=None, adjacency=None):
        return self.classes_[np.argmax(self.predict_proba(X, adjacency), axis=1)]

    def score(self, X, y, adjacency=None, eval_set=None):
        """Accuracy against ``y``, optionally restricted to ``eval_set`` nodes."""
        pred = self.predict(X, adjacency)
        idx = np.arange(len(pred)) if eval_set is None else eval_set
        return accuracy(pred, y, idx)
