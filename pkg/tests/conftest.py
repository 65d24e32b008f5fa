import numpy as np
import pytest
import scipy.sparse as sp

from vgcl import ndiff
from vgcl.graphio import SparseGraph, save_dataset, symmetrize_edges


@pytest.fixture(autouse=True)
def finite_checks():
    """Debug-mode finiteness assertions after every op, for the whole suite."""
    ndiff.DEBUG_CHECK_FINITE = True
    yield
    ndiff.DEBUG_CHECK_FINITE = False


def random_graph(rng: np.random.Generator, n: int, f: int, num_classes: int = 3,
                 edge_prob: float = 0.3, density: float = 0.4) -> SparseGraph:
    """Random symmetric graph with sparse nonnegative features."""
    upper = np.triu(rng.random((n, n)) < edge_prob, k=1)
    src, dst = np.nonzero(upper)
    adj = symmetrize_edges(n, src.astype(np.int64), dst.astype(np.int64))
    feats = rng.random((n, f)) * (rng.random((n, f)) < density)
    return SparseGraph(n=n, f=f, adjacency=adj,
                       features=sp.csr_matrix(feats),
                       labels=rng.integers(0, num_classes, size=n),
                       num_classes=num_classes, name="random").validate()


def two_cluster_graph(n_per: int = 4, f: int = 6,
                      seed: int = 7) -> SparseGraph:
    """Two dense clusters joined by one edge; features indicate the cluster."""
    rng = np.random.default_rng(seed)
    n = 2 * n_per
    edges = []
    for c in range(2):
        nodes = range(c * n_per, (c + 1) * n_per)
        edges.extend((u, v) for u in nodes for v in nodes if u < v)
    edges.append((0, n_per))
    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    feats = np.zeros((n, f))
    half = f // 2
    feats[:n_per, :half] = 0.5 + rng.random((n_per, half))
    feats[n_per:, half:] = 0.5 + rng.random((n_per, f - half))
    labels = np.repeat([0, 1], n_per)
    return SparseGraph(n=n, f=f, adjacency=symmetrize_edges(n, src, dst),
                       features=sp.csr_matrix(feats), labels=labels,
                       num_classes=2, name="two-cluster").validate()


@pytest.fixture
def toy_graph() -> SparseGraph:
    return two_cluster_graph()


@pytest.fixture
def toy_dataset_dir(tmp_path):
    d = tmp_path / "toyset"
    save_dataset(two_cluster_graph(n_per=10, f=8, seed=3), d)
    return d
