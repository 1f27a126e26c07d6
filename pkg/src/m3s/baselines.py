"""Label propagation over the normalized adjacency."""
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, DimensionError
from .graph import as_csr, normalized_adjacency, spmm

logger = logging.getLogger(__name__)

__all__ = ["PropagationConfig", "PropagationResult", "label_propagation", "propagate", "LabelPropagationClassifier"]


@dataclass
class PropagationConfig:
    alpha: float = 0.99
    max_iter: int = 5000
    tolerance: float = 1e-9

    def validate(self):
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie strictly inside (0, 1)")
        if self.max_iter < 1 or self.tolerance < 0:
            raise ConfigurationError("max_iter must be positive and tolerance non-negative")
        return self


@dataclass
class PropagationResult:
    predictions: np.ndarray
    scores: np.ndarray
    n_iter: int
    converged: bool


def propagate(A_hat, Y, labeled, config):
    """Iterate ``F <- alpha A_hat F + (1 - alpha) Y`` with labeled rows clamped to Y."""
    config.validate()
    Y = np.asarray(Y, dtype=np.float64)
    labeled = np.asarray(labeled, dtype=np.int64)
    F = Y.copy()
    converged = False
    n_iter = 0
    for n_iter in range(1, config.max_iter + 1):
        new = config.alpha * spmm(A_hat, F) + (1.0 - config.alpha) * Y
        new[labeled] = Y[labeled]
        change = np.max(np.abs(new - F)) if F.size else 0.0
        F = new
        if change < config.tolerance:
            converged = True
            break
    if not converged:
        logger.warning("label propagation did not converge in %d iterations", config.max_iter)
    return PropagationResult(np.argmax(F, axis=1), F, n_iter, converged)


def label_propagation(dataset, split, config=None):
    """Predict every node's class by diffusing the labeled indicators."""
    config = config or PropagationConfig()
    A_hat = normalized_adjacency(dataset.adjacency)
    Y = np.zeros((dataset.n_nodes, dataset.n_classes))
    idx = split.labeled
    Y[idx, split.assigned_labels[idx]] = 1.0
    return propagate(A_hat, Y, idx, config)


class LabelPropagationClassifier(ClassifierMixin, BaseEstimator):
    """Transductive label propagation; ``fit(X, y, adjacency)`` with ``-1`` for unlabeled.

    ``X`` is accepted for interface compatibility and only used for its row count.
    """

    def __init__(self, alpha=0.99, max_iter=5000, tol=1e-9):
        self.alpha = alpha
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y, adjacency):
        y = np.asarray(y)
        n = y.shape[0]
        if X is not None and X.shape[0] != n:
            raise DimensionError("X and y disagree on the number of nodes")
        labeled = np.flatnonzero(y != -1)
        if labeled.size == 0:
            raise ConfigurationError("at least one node must be labeled")
        self.classes_ = np.unique(y[labeled])
        Y = np.zeros((n, len(self.classes_)))
        Y[labeled, np.searchsorted(self.classes_, y[labeled])] = 1.0
        A_hat = normalized_adjacency(as_csr(adjacency))
        res = propagate(A_hat, Y, labeled, PropagationConfig(self.alpha, self.max_iter, self.tol))
        self.label_distributions_ = res.scores
        self.transduction_ = self.classes_[res.predictions]
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        return self

    def predict(self, X=None):
        check_is_fitted(self, "transduction_")
        return self.transduction_
