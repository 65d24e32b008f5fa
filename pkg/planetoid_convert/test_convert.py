"""Converter tests on synthesized raw files; the real-dataset checks live in
the acceptance suite and run when $VGCL_DATA_DIR provides the raw downloads."""

import pickle
import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, str(Path(__file__).parent))
from convert import ConvertError, convert, main  # noqa: E402


def make_raw(tmp_path, name="toyset", n_all=6, n_test=4, f=5, c=3,
             drop_from_test_range=(), seed=0):
    """Synthesize an upstream-style raw set with a shuffled test block.

    Returns (dir, expected_features, expected_labels, graph) in graph order.
    """
    rng = np.random.default_rng(seed)
    n = n_all + n_test + len(drop_from_test_range)
    feats = (rng.random((n, f)) * (rng.random((n, f)) < 0.6)).round(3)
    labels = rng.integers(0, c, size=n)
    for i in drop_from_test_range:
        feats[i] = 0.0
        labels[i] = 0  # isolated nodes end up with a zero one-hot row

    one_hot = np.zeros((n, c), dtype=np.int32)
    one_hot[np.arange(n), labels] = 1
    for i in drop_from_test_range:
        one_hot[i] = 0

    graph = {i: [] for i in range(n)}
    for u in range(n - 1):
        graph[u].append(u + 1)
        graph[u + 1].append(u)
    graph[0].append(0)  # a self-loop the converter must drop

    # test block occupies graph positions n_all..n-1, minus dropped indices
    test_positions = [i for i in range(n_all, n)
                      if i not in drop_from_test_range]
    shuffled = list(test_positions)
    rng.shuffle(shuffled)
    # raw row order: allx rows are graph rows 0..n_all-1; tx row k holds the
    # features of graph node shuffled^{-1}... build directly: upstream defines
    # features[test_idx] = features[sorted_range], so tx row j corresponds to
    # the node at sorted position j AFTER unshuffling. Construct tx so that
    # unshuffling with `shuffled` reproduces feats/labels.
    allx = sp.csr_matrix(feats[:n_all])
    ally = one_hot[:n_all]

    sorted_positions = sorted(test_positions)
    # converter sets out[shuffled] = stacked[sorted_positions]; invert that
    tx_rows = np.empty((len(test_positions), f))
    ty_rows = np.empty((len(test_positions), c), dtype=np.int32)
    pos_of = {p: k for k, p in enumerate(sorted_positions)}
    for k, node in enumerate(shuffled):
        tx_rows[pos_of[sorted_positions[k]]] = 0  # placeholder, filled below
    # stacked[sorted_positions][k] lands at shuffled[k]; so row k of the
    # sorted test block must hold the data of node shuffled[k]
    for k, node in enumerate(shuffled):
        tx_rows[k] = feats[node]
        ty_rows[k] = one_hot[node]

    d = tmp_path / "raw"
    d.mkdir(exist_ok=True)
    payload = {
        "x": sp.csr_matrix(feats[:2]), "y": one_hot[:2],
        "allx": allx, "ally": ally,
        "tx": sp.csr_matrix(tx_rows), "ty": ty_rows,
        "graph": graph,
    }
    for suffix, obj in payload.items():
        with open(d / f"ind.{name}.{suffix}", "wb") as fh:
            pickle.dump(obj, fh, protocol=2)
    (d / f"ind.{name}.test.index").write_text(
        "\n".join(str(s) for s in shuffled) + "\n")
    return d, feats, labels, graph


def test_convert_reorders_test_block(tmp_path):
    raw_dir, feats, labels, _ = make_raw(tmp_path, seed=3)
    out = tmp_path / "out"
    convert("toyset", raw_dir, out)

    from vgcl.graphio import load_dataset
    g = load_dataset(out)
    np.testing.assert_allclose(g.features.toarray(), feats, atol=0)
    np.testing.assert_array_equal(g.labels, labels)


def test_output_passes_graphio_validation_and_chain_edges(tmp_path):
    raw_dir, _, _, graph = make_raw(tmp_path)
    out = tmp_path / "out"
    convert("toyset", raw_dir, out)

    from vgcl.graphio import load_dataset
    g = load_dataset(out)
    n = g.n
    # chain adjacency, symmetrized, self-loop dropped
    assert g.adjacency.nnz == 2 * (n - 1)
    assert g.adjacency.diagonal().sum() == 0
    assert (g.adjacency != g.adjacency.T).nnz == 0


def test_rerun_is_byte_identical(tmp_path):
    raw_dir, _, _, _ = make_raw(tmp_path, seed=9)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    convert("toyset", raw_dir, out1)
    convert("toyset", raw_dir, out2)
    for name in ("meta.json", "edges.tsv", "features.csr", "labels.txt"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_citeseer_style_gap_patching(tmp_path, capsys):
    raw_dir, feats, labels, _ = make_raw(tmp_path, n_all=5, n_test=4,
                                         drop_from_test_range=(6,), seed=4)
    out = tmp_path / "out"
    convert("toyset", raw_dir, out)
    logged = capsys.readouterr().out
    assert "patching 1 isolated test nodes" in logged

    from vgcl.graphio import load_dataset
    g = load_dataset(out)
    np.testing.assert_allclose(g.features.toarray(), feats, atol=0)
    assert g.features[6].nnz == 0  # the patched isolate has zero features
    np.testing.assert_array_equal(g.labels, labels)


def test_count_mismatch_fatal_with_both_values(tmp_path):
    raw_dir, _, _, _ = make_raw(tmp_path, name="cora")
    with pytest.raises(ConvertError) as err:
        convert("cora", raw_dir, tmp_path / "out")
    assert "2708" in str(err.value) and "n=10" in str(err.value)


def test_missing_file_fatal(tmp_path):
    raw_dir, _, _, _ = make_raw(tmp_path)
    (raw_dir / "ind.toyset.graph").unlink()
    assert main(["toyset", str(raw_dir), str(tmp_path / "out")]) == 1


def test_main_exit_codes(tmp_path):
    raw_dir, _, _, _ = make_raw(tmp_path, seed=5)
    assert main(["toyset", str(raw_dir), str(tmp_path / "out")]) == 0
    assert main(["too", "few"]) == 1
