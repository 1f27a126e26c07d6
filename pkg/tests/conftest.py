import numpy as np
import pytest
import scipy.sparse as sp

from m3s.datasets import CitationDataset, make_citation_graph


def random_graph(n, p=0.3, seed=0, connected=True):
    """Symmetric 0/1 adjacency without self-loops; a path is added if ``connected``."""
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    if connected:
        idx = np.arange(n - 1)
        upper[idx, idx + 1] = True
    A = (upper | upper.T).astype(float)
    return sp.csr_matrix(A)


def random_dataset(n=12, f=6, c=3, seed=0, p=0.3):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(c), rng.integers(c, size=n - c)])
    return CitationDataset(
        name="rand",
        features=rng.random((n, f)),
        adjacency=random_graph(n, p, seed),
        labels=labels,
        n_classes=c,
    )


@pytest.fixture
def small_graph():
    return make_citation_graph(n_nodes=150, n_classes=3, n_features=40, avg_degree=4, seed=3, name="small")
