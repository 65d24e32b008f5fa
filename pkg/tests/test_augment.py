import numpy as np
import pytest

from conftest import random_graph
from vgcl.augment import AugmentConfig, drop_edges, make_views, mask_features
from vgcl.graphio import normalize_adjacency


@pytest.fixture
def graph():
    return random_graph(np.random.default_rng(2), n=40, f=25, edge_prob=0.25)


def test_config_rejects_bad_probability():
    with pytest.raises(ValueError):
        AugmentConfig(p_f1=1.5)


def test_drop_edges_p0_identity(graph):
    out = drop_edges(graph, 0.0, np.random.default_rng(0))
    assert (out != graph.adjacency).nnz == 0


def test_drop_edges_p1_empty_and_identity_normalization(graph):
    out = drop_edges(graph, 1.0, np.random.default_rng(0))
    assert out.nnz == 0
    norm = normalize_adjacency(out)
    np.testing.assert_allclose(norm.toarray(), np.eye(graph.n), atol=1e-15)


def test_drop_edges_keeps_symmetry(graph):
    out = drop_edges(graph, 0.5, np.random.default_rng(3))
    assert (out != out.T).nnz == 0
    assert out.diagonal().sum() == 0


def test_drop_rate_matches_binomial_oracle(graph):
    # survivor fraction ~ Binomial(E, 1-p)/E; check the Monte Carlo mean
    # against 1-p within 3 sigma of the averaged estimator
    p = 0.4
    n_edges = graph.adjacency.nnz // 2
    reps = 100
    rng = np.random.default_rng(77)
    fractions = [drop_edges(graph, p, rng).nnz / graph.adjacency.nnz
                 for _ in range(reps)]
    sigma = np.sqrt(p * (1 - p) / n_edges / reps)
    assert abs(np.mean(fractions) - (1 - p)) < max(3 * sigma, 0.02)


def test_mask_features_p0_p1(graph):
    out0 = mask_features(graph.features, 0.0, np.random.default_rng(1))
    assert (out0 != graph.features).nnz == 0
    out1 = mask_features(graph.features, 1.0, np.random.default_rng(1))
    assert out1.nnz == 0


def test_mask_features_zeroes_whole_columns(graph):
    rng = np.random.default_rng(5)
    out = mask_features(graph.features, 0.5, rng)
    orig = graph.features.toarray()
    masked = out.toarray()
    for j in range(graph.f):
        col_same = np.array_equal(masked[:, j], orig[:, j])
        col_zero = not masked[:, j].any()
        assert col_same or col_zero


def test_mask_rate_matches_binomial_oracle(graph):
    p = 0.3
    reps = 100
    rng = np.random.default_rng(8)
    zeroed = []
    for _ in range(reps):
        out = mask_features(graph.features, p, rng)
        dense = out.toarray()
        zeroed.append(np.mean([not dense[:, j].any() for j in range(graph.f)]))
    # some columns may be empty to begin with; this graph has none
    assert graph.features.toarray().any(axis=0).all()
    sigma = np.sqrt(p * (1 - p) / graph.f / reps)
    assert abs(np.mean(zeroed) - p) < max(3 * sigma, 0.03)


def test_mask_per_entry_mode(graph):
    rng = np.random.default_rng(9)
    out = mask_features(graph.features, 0.5, rng, per_entry=True)
    dense = out.toarray()
    orig = graph.features.toarray()
    assert out.nnz < graph.features.nnz
    # surviving entries are untouched
    mask = dense != 0
    np.testing.assert_array_equal(dense[mask], orig[mask])


def test_make_views_all_zero_probs_equals_original(graph):
    cfg = AugmentConfig()
    pair = make_views(graph, cfg, np.random.default_rng(0))
    expected = normalize_adjacency(graph.adjacency).toarray()
    for view in (pair.view1, pair.view2):
        np.testing.assert_allclose(view.adj_norm.toarray(), expected, atol=1e-15)
        assert (view.features != graph.features).nnz == 0


def test_make_views_deterministic_under_seed(graph):
    cfg = AugmentConfig(p_f1=0.3, p_f2=0.3, p_e1=0.4, p_e2=0.4)
    a = make_views(graph, cfg, np.random.default_rng(123))
    b = make_views(graph, cfg, np.random.default_rng(123))
    assert (a.view1.adj_norm != b.view1.adj_norm).nnz == 0
    assert (a.view2.features != b.view2.features).nnz == 0


def test_make_views_uses_per_view_probabilities(graph):
    cfg = AugmentConfig(p_f1=0.0, p_f2=1.0, p_e1=0.0, p_e2=1.0)
    pair = make_views(graph, cfg, np.random.default_rng(0))
    assert (pair.view1.features != graph.features).nnz == 0
    assert pair.view2.features.nnz == 0
    np.testing.assert_allclose(pair.view2.adj_norm.toarray(), np.eye(graph.n),
                               atol=1e-15)


def test_views_are_sparser_with_vgcl_cora_probs(graph):
    cfg = AugmentConfig(p_f1=0.3, p_f2=0.3, p_e1=0.4, p_e2=0.4)
    rng = np.random.default_rng(31)
    pair = make_views(graph, cfg, rng)
    assert pair.view1.features.nnz < graph.features.nnz
    assert pair.view2.features.nnz < graph.features.nnz
    # adj_norm includes self-loops, so compare off-diagonal mass
    assert (pair.view1.adj_norm.nnz - graph.n) < graph.adjacency.nnz
    assert (pair.view2.adj_norm.nnz - graph.n) < graph.adjacency.nnz


def test_augmentation_never_touches_node_set(graph):
    cfg = AugmentConfig(p_f1=0.5, p_f2=0.5, p_e1=0.5, p_e2=0.5)
    pair = make_views(graph, cfg, np.random.default_rng(10))
    assert pair.view1.adj_norm.shape == (graph.n, graph.n)
    assert pair.view1.features.shape == graph.features.shape
    assert pair.view2.adj_norm.shape == (graph.n, graph.n)
