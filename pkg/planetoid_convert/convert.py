#!/usr/bin/env python3
"""Convert a raw Planetoid distribution to the neutral text dataset format.

Usage: convert.py <name> <in_dir> <out_dir>

Reads the eight upstream files ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}
and writes meta.json, edges.tsv, features.csr, labels.txt. Test rows are put
back into graph order via the test-index file (the upstream distribution
stores them shuffled); gaps in the citeseer test range become zero-feature,
zero-one-hot rows (the standard community fix); the adjacency is symmetrized
with self-loops dropped; one-hot label rows collapse to integers.

Exit codes: 0 success, 1 user/input error, 2 numerical/consistency failure.
"""

from __future__ import annotations

import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

# name -> (nodes, feature dim, classes); converted output must match exactly
EXPECTED = {
    "cora": (2708, 1433, 7),
    "citeseer": (3327, 3703, 6),
    "pubmed": (19717, 500, 3),
}

SUFFIXES = ("x", "tx", "allx", "y", "ty", "ally", "graph", "test.index")


class ConvertError(ValueError):
    pass


def _log(msg: str) -> None:
    print(f"[convert] {msg}")


def _load_pickle(path: Path):
    if not path.is_file():
        raise ConvertError(f"missing raw file: {path}")
    with open(path, "rb") as fh:
        # upstream files are python2 pickles
        return pickle.load(fh, encoding="latin1")


def _read_test_index(path: Path) -> np.ndarray:
    if not path.is_file():
        raise ConvertError(f"missing raw file: {path}")
    try:
        values = [int(line) for line in path.read_text().split()]
    except ValueError:
        raise ConvertError(f"{path}: non-integer test index") from None
    return np.array(values, dtype=np.int64)


def load_raw(name: str, in_dir: Path) -> dict:
    objects = {}
    for suffix in SUFFIXES:
        path = in_dir / f"ind.{name}.{suffix}"
        if suffix == "test.index":
            objects[suffix] = _read_test_index(path)
        else:
            objects[suffix] = _load_pickle(path)
    return objects


def assemble(name: str, raw: dict) -> tuple[sp.csr_matrix, np.ndarray, dict]:
    """Rebuild (features, one-hot labels, graph dict) in graph node order."""
    allx = sp.csr_matrix(raw["allx"], dtype=np.float64)
    tx = sp.csr_matrix(raw["tx"], dtype=np.float64)
    ally = np.asarray(raw["ally"])
    ty = np.asarray(raw["ty"])
    test_idx = raw["test.index"]
    test_sorted = np.sort(test_idx)

    span = np.arange(test_sorted.min(), test_sorted.max() + 1)
    if span.size != test_sorted.size:
        # citeseer: isolated test nodes are missing from the index; give them
        # zero features and a zero one-hot row
        missing = sorted(set(span.tolist()) - set(test_sorted.tolist()))
        _log(f"{name}: patching {len(missing)} isolated test nodes with "
             f"zero rows: {missing[:8]}{'...' if len(missing) > 8 else ''}")
        tx_full = sp.lil_matrix((span.size, tx.shape[1]))
        tx_full[test_sorted - test_sorted.min()] = tx
        tx = sp.csr_matrix(tx_full)
        ty_full = np.zeros((span.size, ty.shape[1]), dtype=ty.dtype)
        ty_full[test_sorted - test_sorted.min()] = ty
        ty = ty_full

    features = sp.vstack([allx, tx]).tolil()
    labels = np.vstack([ally, ty])
    # undo the upstream shuffle of the test block: row at sorted position j
    # holds the data of the node named test_idx[j]
    features[test_idx] = features[test_sorted]
    labels[test_idx] = labels[test_sorted]
    return sp.csr_matrix(features), labels, raw["graph"]


def one_hot_to_int(labels: np.ndarray) -> np.ndarray:
    out = labels.argmax(axis=1).astype(np.int64)
    empty = np.flatnonzero(labels.sum(axis=1) == 0)
    if empty.size:
        _log(f"{empty.size} nodes have an all-zero label row (patched "
             f"isolates); assigning class 0: {empty[:8].tolist()}")
    return out


def graph_to_edges(graph: dict, n: int) -> list[tuple[int, int]]:
    """Symmetric, deduplicated, self-loop-free edge list (each pair once)."""
    pairs = set()
    loops = 0
    for u, neighbors in graph.items():
        for v in neighbors:
            if not (0 <= u < n and 0 <= v < n):
                raise ConvertError(f"edge ({u}, {v}) out of range for n={n}")
            if u == v:
                loops += 1
                continue
            pairs.add((min(u, v), max(u, v)))
    if loops:
        _log(f"dropped {loops} self-loop entries")
    return sorted(pairs)


def write_neutral(out_dir: Path, name: str, features: sp.csr_matrix,
                  labels: np.ndarray, edges: list[tuple[int, int]],
                  num_classes: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    n, f = features.shape
    (out_dir / "meta.json").write_text(
        json.dumps({"n": n, "f": f, "num_classes": num_classes, "name": name})
        + "\n", encoding="utf-8")
    (out_dir / "edges.tsv").write_text(
        "".join(f"{u}\t{v}\n" for u, v in edges), encoding="utf-8")
    csr = features.tocsr()
    csr.sum_duplicates()
    csr.sort_indices()
    (out_dir / "features.csr").write_text(
        f"{n} {f} {csr.nnz}\n"
        + " ".join(str(int(p)) for p in csr.indptr) + "\n"
        + " ".join(str(int(i)) for i in csr.indices) + "\n"
        + " ".join(repr(float(v)) for v in csr.data) + "\n",
        encoding="utf-8")
    (out_dir / "labels.txt").write_text(
        "".join(f"{int(y)}\n" for y in labels), encoding="utf-8")


def convert(name: str, in_dir, out_dir) -> None:
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    raw = load_raw(name, in_dir)
    features, one_hot, graph = assemble(name, raw)
    labels = one_hot_to_int(one_hot)
    n, f = features.shape
    c = int(one_hot.shape[1])

    if name in EXPECTED:
        expected = EXPECTED[name]
        if (n, f, c) != expected:
            raise ConvertError(
                f"{name}: converted (n={n}, f={f}, classes={c}) does not match "
                f"expected (n={expected[0]}, f={expected[1]}, "
                f"classes={expected[2]})")
    else:
        _log(f"{name}: no expected counts on record; skipping validation")

    if features.nnz and features.data.min() < 0:
        raise ConvertError(f"{name}: negative feature values after conversion")
    edges = graph_to_edges(graph, n)
    write_neutral(out_dir, name, features, labels, edges, c)
    _log(f"{name}: wrote n={n} f={f} classes={c} edges={len(edges)} "
         f"-> {out_dir}")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 3:
        print(__doc__.strip(), file=sys.stderr)
        return 1
    name, in_dir, out_dir = argv
    try:
        convert(name, in_dir, out_dir)
    except ConvertError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ArithmeticError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
