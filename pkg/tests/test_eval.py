import numpy as np
import pytest

from conftest import random_graph, two_cluster_graph
from vgcl import rng as rngmod
from vgcl.augment import AugmentConfig
from vgcl.evaluate import (EmbeddingSet, PROBE_LAMBDAS, _fit_multinomial,
                           evaluate, extract_embeddings, fit_probe,
                           train_loglik, write_embeddings_tsv)
from vgcl.graphio import SplitSpec, make_split
from vgcl.model import (EncoderConfig, TENSOR_ORDER, init_params,
                        load_checkpoint)
from vgcl.objective import PriorConfig
from vgcl.train import TrainConfig, train


def _split_from(train_idx, val_idx, test_idx):
    return SplitSpec(seed=0, train_idx=np.asarray(train_idx),
                     val_idx=np.asarray(val_idx),
                     test_idx=np.asarray(test_idx))


def _blob_embeddings(rng, n_per=30, d=8, sep=4.0):
    centers = np.stack([np.zeros(d), np.full(d, sep)])
    X = np.concatenate([centers[c] + rng.standard_normal((n_per, d))
                        for c in (0, 1)])
    y = np.repeat([0, 1], n_per)
    perm = rng.permutation(2 * n_per)
    return EmbeddingSet(matrix=X[perm], samples=1), y[perm]


def test_probe_separable_toy_reaches_perfect_accuracy():
    rng = np.random.default_rng(0)
    E, y = _blob_embeddings(rng, sep=8.0)
    n = y.size
    idx = np.arange(n)
    split = _split_from(idx[:10], idx[10:20], idx[20:])
    res = fit_probe(E, y, split, num_classes=2)
    assert res.accuracy == 1.0
    assert res.correct.all()


def test_probe_chance_level_on_shuffled_labels():
    rng = np.random.default_rng(1)
    n, d, classes = 350, 6, 7
    E = EmbeddingSet(matrix=rng.standard_normal((n, d)), samples=1)
    accs = []
    for rep in range(50):
        y = rng.integers(0, classes, size=n)
        split = make_split(n, seed=rep)
        accs.append(fit_probe(E, y, split, num_classes=classes).accuracy)
    assert abs(np.mean(accs) - 1.0 / classes) < 0.05


def test_probe_conflicting_duplicates_bounded_by_class_prior():
    # identical embeddings with 70/30 labels: best possible is majority vote
    n = 100
    E = EmbeddingSet(matrix=np.ones((n, 4)), samples=1)
    y = np.array([0] * 70 + [1] * 30)
    split = _split_from(np.arange(0, 50), np.arange(50, 70),
                        np.arange(70, 100))
    with pytest.warns(UserWarning):  # class 1 never reaches the train split
        res = fit_probe(E, y, split, num_classes=2)
    prior = max(np.mean(y[split.test_idx] == 0), np.mean(y[split.test_idx] == 1))
    assert res.accuracy <= prior + 1e-12


def test_probe_deterministic():
    rng = np.random.default_rng(2)
    E, y = _blob_embeddings(rng, sep=1.0)
    split = make_split(y.size, seed=3)
    a = fit_probe(E, y, split, num_classes=2)
    b = fit_probe(E, y, split, num_classes=2)
    assert a.accuracy == b.accuracy and a.lam == b.lam
    np.testing.assert_array_equal(a.correct, b.correct)


def test_probe_warns_on_missing_class():
    E = EmbeddingSet(matrix=np.random.default_rng(4).standard_normal((30, 3)),
                     samples=1)
    y = np.array([0] * 29 + [2])  # class 1 never appears; class 2 not in train
    split = _split_from(np.arange(0, 10), np.arange(10, 20), np.arange(20, 30))
    with pytest.warns(UserWarning, match="absent"):
        fit_probe(E, y, split, num_classes=3)


def test_regularization_monotonicity_on_train_loglik():
    rng = np.random.default_rng(5)
    E, y = _blob_embeddings(rng, n_per=25, sep=1.5)
    idx = np.arange(y.size)
    X_tr, y_tr = E.matrix[idx[:30]], y[idx[:30]]
    logliks = []
    for lam in PROBE_LAMBDAS:
        W, b = _fit_multinomial(X_tr, y_tr, 2, lam / 30)
        logliks.append(train_loglik(X_tr, y_tr, 2, W, b))
    for a, b_ in zip(logliks, logliks[1:]):
        assert b_ <= a + 1e-8  # larger penalty never raises train likelihood


# ------------------------------------------------------- embeddings

def _trained_checkpoint(tmp_path, graph, mode="vi_infonce", S=2, epochs=4):
    cfg = TrainConfig(mode=mode, epochs=epochs, lr=0.01, S=S,
                      augment=AugmentConfig(), hidden=8, out=8, proj_hidden=8,
                      prior=PriorConfig(sigma2=0.0025, tau=0.5), strict=True)
    train(graph, cfg, tmp_path / f"ckpt-{mode}", config_hash="h")
    return load_checkpoint(tmp_path / f"ckpt-{mode}")


def test_deterministic_checkpoint_forces_single_sample(tmp_path):
    g = two_cluster_graph(n_per=4, f=6)
    ckpt = _trained_checkpoint(tmp_path, g, mode="infonce", S=1)
    E = extract_embeddings(ckpt, g, samples=100,
                           rng=np.random.default_rng(0))
    assert E.samples == 1
    E2 = extract_embeddings(ckpt, g, samples=1, rng=None)
    np.testing.assert_array_equal(E.matrix, E2.matrix)


def test_tiny_sigma_embeddings_match_mean_network(tmp_path):
    g = two_cluster_graph(n_per=4, f=6)
    ckpt = _trained_checkpoint(tmp_path, g, mode="vi_infonce")
    for name in TENSOR_ORDER:
        ckpt.tensors[f"{name}.p"][...] = -40.0
    E = extract_embeddings(ckpt, g, samples=100, rng=np.random.default_rng(1))
    from vgcl.graphio import normalize_adjacency
    from vgcl.model import encode, weights_at_mean
    vp = ckpt.build_weights()
    z_mu = encode(normalize_adjacency(g.adjacency), g.features,
                  weights_at_mean(vp)).value
    np.testing.assert_allclose(E.matrix, z_mu, atol=1e-10)


def test_embedding_average_variance_shrinks_as_one_over_k(tmp_path):
    g = two_cluster_graph(n_per=4, f=6)
    ckpt = _trained_checkpoint(tmp_path, g, mode="vi_infonce")
    for name in TENSOR_ORDER:
        ckpt.tensors[f"{name}.p"][...] = 0.0  # sigma_v = log 2, sizeable noise
    rng = np.random.default_rng(7)

    def var_of_mean(K, reps=40):
        vals = [extract_embeddings(ckpt, g, samples=K, rng=rng).matrix[0, 0]
                for _ in range(reps)]
        return np.var(vals)

    v1 = var_of_mean(1)
    v16 = var_of_mean(16)
    ratio = v1 / v16
    assert 4.0 < ratio  # ~16 in expectation; loose bound for 40 reps


def test_evaluate_mean_stderr_and_reproducibility(tmp_path):
    g = random_graph(np.random.default_rng(8), n=60, f=10, num_classes=3)
    ckpt = _trained_checkpoint(tmp_path, g, mode="infonce", S=1)
    a = evaluate(ckpt, g, runs=5, samples=1)
    b = evaluate(ckpt, g, runs=5, samples=1)
    assert a.mean == b.mean and a.stderr == b.stderr
    np.testing.assert_array_equal(a.accuracies, b.accuracies)
    expected_stderr = a.accuracies.std(ddof=1) / np.sqrt(5)
    assert a.stderr == pytest.approx(expected_stderr)


def test_evaluate_single_run_stderr_zero_with_warning(tmp_path):
    g = random_graph(np.random.default_rng(9), n=40, f=8)
    ckpt = _trained_checkpoint(tmp_path, g, mode="infonce", S=1)
    with pytest.warns(UserWarning, match="single run"):
        res = evaluate(ckpt, g, runs=1, samples=1)
    assert res.stderr == 0.0


def test_write_embeddings_tsv_roundtrip(tmp_path):
    E = EmbeddingSet(matrix=np.random.default_rng(10).standard_normal((5, 4)),
                     samples=1)
    path = tmp_path / "embeddings.tsv"
    write_embeddings_tsv(path, E)
    back = np.array([[float(v) for v in line.split("\t")]
                     for line in path.read_text().splitlines()])
    np.testing.assert_array_equal(back, E.matrix)
