"""Neutral on-disk graph format, symmetric normalization, and eval splits.

A dataset directory holds four plain-text files (UTF-8, LF):

* ``meta.json``     -- {"n": int, "f": int, "num_classes": int, "name": str}
* ``edges.tsv``     -- one edge per line, ``src<TAB>dst``, 0-indexed
* ``features.csr``  -- line 1 ``n f nnz``; line 2 row pointers; line 3 column
  indices; line 4 values (space separated)
* ``labels.txt``    -- one integer label per line, n lines

Edges may be listed once or twice per undirected pair; the loader always
symmetrizes and deduplicates, and stored self-loops are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    """Malformed or missing dataset file."""


@dataclass
class SparseGraph:
    """One transductive graph: features, symmetric adjacency, labels."""

    n: int
    f: int
    adjacency: sp.csr_matrix  # n x n, symmetric, no self-loops, 0/1 values
    features: sp.csr_matrix   # n x f, nonnegative
    labels: np.ndarray        # n ints in [0, num_classes)
    num_classes: int
    name: str = ""

    def validate(self) -> "SparseGraph":
        a = self.adjacency
        if a.shape != (self.n, self.n):
            raise DatasetError(f"adjacency shape {a.shape} != ({self.n}, {self.n})")
        if self.features.shape != (self.n, self.f):
            raise DatasetError(
                f"features shape {self.features.shape} != ({self.n}, {self.f})")
        if a.diagonal().any():
            raise DatasetError("stored self-loops are not allowed")
        if (a != a.T).nnz != 0:
            raise DatasetError("adjacency is not symmetric")
        if self.labels.shape != (self.n,):
            raise DatasetError("labels must have one entry per node")
        if self.n > 0 and (
                self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError("label out of [0, num_classes)")
        if self.features.nnz and self.features.data.min() < 0:
            raise DatasetError("features must be nonnegative")
        return self


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint 10/10/80 node index sets drawn under one seed."""

    seed: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    return path.read_text(encoding="utf-8").splitlines()


def symmetrize_edges(n: int, src: np.ndarray, dst: np.ndarray) -> sp.csr_matrix:
    """Build the deduplicated symmetric 0/1 adjacency from directed pairs."""
    keep = src != dst
    src, dst = src[keep], dst[keep]
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    adj = sp.csr_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(n, n), dtype=np.float64)
    adj.data[:] = 1.0  # duplicates were summed during conversion; clamp to 0/1
    return adj


def load_dataset(directory) -> SparseGraph:
    """Load and validate one dataset directory in the neutral format."""
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.is_file():
        raise DatasetError(f"missing file: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    for key in ("n", "f", "num_classes"):
        if key not in meta:
            raise DatasetError(f"meta.json: missing key '{key}'")
    n, f, c = int(meta["n"]), int(meta["f"]), int(meta["num_classes"])

    src, dst = [], []
    for lineno, line in enumerate(_read_lines(d / "edges.tsv"), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetError(f"edges.tsv:{lineno}: expected 'src<TAB>dst'")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetError(f"edges.tsv:{lineno}: non-integer endpoint") from None
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetError(f"edges.tsv:{lineno}: node index out of range")
        src.append(u)
        dst.append(v)
    adj = symmetrize_edges(n, np.asarray(src, dtype=np.int64),
                           np.asarray(dst, dtype=np.int64))

    lines = _read_lines(d / "features.csr")
    if len(lines) < 4:
        raise DatasetError("features.csr: expected 4 lines")
    try:
        fn, ff, nnz = (int(x) for x in lines[0].split())
        indptr = np.array(lines[1].split(), dtype=np.int64)
        indices = np.array(lines[2].split(), dtype=np.int64) if nnz else np.empty(0, np.int64)
        values = np.array(lines[3].split(), dtype=np.float64) if nnz else np.empty(0)
    except ValueError:
        raise DatasetError("features.csr: malformed numeric field") from None
    if (fn, ff) != (n, f):
        raise DatasetError(f"features.csr: header ({fn}, {ff}) != meta ({n}, {f})")
    if indptr.size != n + 1 or indices.size != nnz or values.size != nnz:
        raise DatasetError("features.csr: length mismatch")
    if nnz and (indices.min() < 0 or indices.max() >= f):
        raise DatasetError("features.csr: column index out of range")
    features = sp.csr_matrix((values, indices, indptr), shape=(n, f))

    label_lines = [ln for ln in _read_lines(d / "labels.txt") if ln]
    if len(label_lines) != n:
        raise DatasetError(f"labels.txt: expected {n} lines, got {len(label_lines)}")
    try:
        labels = np.array([int(ln) for ln in label_lines], dtype=np.int64)
    except ValueError:
        raise DatasetError("labels.txt: non-integer label") from None
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        raise DatasetError(f"labels.txt:{bad[0] + 1}: label out of [0, {c})")

    return SparseGraph(n=n, f=f, adjacency=adj, features=features, labels=labels,
                       num_classes=c, name=str(meta.get("name", ""))).validate()


def save_dataset(g: SparseGraph, directory) -> None:
    """Write a graph back out in the neutral format (round-trips bit-exactly)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"n": g.n, "f": g.f, "num_classes": g.num_classes, "name": g.name}
    (d / "meta.json").write_text(json.dumps(meta) + "\n", encoding="utf-8")

    coo = sp.triu(g.adjacency, k=1).tocoo()
    edge_lines = [f"{u}\t{v}" for u, v in zip(coo.row, coo.col)]
    (d / "edges.tsv").write_text("\n".join(edge_lines) + ("\n" if edge_lines else ""),
                                 encoding="utf-8")

    feats = g.features.tocsr()
    feats.sum_duplicates()
    lines = [
        f"{g.n} {g.f} {feats.nnz}",
        " ".join(str(int(x)) for x in feats.indptr),
        " ".join(str(int(x)) for x in feats.indices),
        " ".join(repr(float(x)) for x in feats.data),
    ]
    (d / "features.csr").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (d / "labels.txt").write_text(
        "\n".join(str(int(y)) for y in g.labels) + "\n", encoding="utf-8")


def normalize_adjacency(adjacency: sp.spmatrix) -> sp.csr_matrix:
    """Symmetric normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}."""
    n = adjacency.shape[0]
    a_hat = (adjacency + sp.identity(n, format="csr", dtype=np.float64)).tocsr()
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    out = a_hat.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :])
    return out.tocsr()


def make_split(n: int, seed: int) -> SplitSpec:
    """10/10/80 split: round-half-up 10% train, 10% val, remainder test."""
    if n < 10:
        raise ValueError(f"need at least 10 nodes to split, got {n}")
    k = (2 * n + 10) // 20  # round-half-up of n/10, in exact integer arithmetic
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    return SplitSpec(seed=seed,
                     train_idx=perm[:k],
                     val_idx=perm[k:2 * k],
                     test_idx=perm[2 * k:])
