"""Stochastic graph views: Bernoulli edge dropping + feature masking.

Two independently-parameterized views of the same graph act as positives;
node identity and ordering never change, so node i in view 1 is the positive
of node i in view 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graphio import SparseGraph, normalize_adjacency


@dataclass
class AugmentConfig:
    p_f1: float = 0.0
    p_f2: float = 0.0
    p_e1: float = 0.0
    p_e2: float = 0.0
    per_entry_mask: bool = False  # ablation: mask individual entries, not columns

    def __post_init__(self):
        for name in ("p_f1", "p_f2", "p_e1", "p_e2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass
class GraphView:
    """One augmented view: renormalized adjacency plus masked features."""

    adj_norm: sp.csr_matrix
    features: sp.csr_matrix


@dataclass
class ViewPair:
    view1: GraphView
    view2: GraphView
    draw_id: str = ""


def drop_edges(g: SparseGraph, p_e: float, rng: np.random.Generator) -> sp.csr_matrix:
    """Remove each undirected edge independently with probability p_e.

    The decision is made once per undirected pair so the survivor set stays
    symmetric. Returns the surviving adjacency (not normalized).
    """
    if not 0.0 <= p_e <= 1.0:
        raise ValueError(f"p_e={p_e} outside [0, 1]")
    upper = sp.triu(g.adjacency, k=1).tocoo()
    if p_e == 0.0 or upper.nnz == 0:
        return g.adjacency.copy()
    keep = rng.random(upper.nnz) >= p_e
    rows = np.concatenate([upper.row[keep], upper.col[keep]])
    cols = np.concatenate([upper.col[keep], upper.row[keep]])
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)),
                         shape=g.adjacency.shape, dtype=np.float64)


def mask_features(x: sp.csr_matrix, p_f: float, rng: np.random.Generator,
                  per_entry: bool = False) -> sp.csr_matrix:
    """Zero feature columns (default) or stored entries (ablation) with
    probability p_f. Column masks are shared by all nodes."""
    if not 0.0 <= p_f <= 1.0:
        raise ValueError(f"p_f={p_f} outside [0, 1]")
    if p_f == 0.0:
        return x.copy()
    x = x.tocsr()
    if per_entry:
        out = x.copy()
        out.data = out.data * (rng.random(out.nnz) >= p_f)
        out.eliminate_zeros()
        return out
    keep = (rng.random(x.shape[1]) >= p_f).astype(np.float64)
    out = x.multiply(keep[None, :]).tocsr()
    out.eliminate_zeros()
    return out


def make_views(g: SparseGraph, cfg: AugmentConfig, rng: np.random.Generator,
               draw_id: str = "") -> ViewPair:
    """Draw a fresh pair of views; view 1 uses (p_f1, p_e1), view 2 (p_f2, p_e2)."""
    views = []
    for p_f, p_e in ((cfg.p_f1, cfg.p_e1), (cfg.p_f2, cfg.p_e2)):
        adj = drop_edges(g, p_e, rng)
        feats = mask_features(g.features, p_f, rng, per_entry=cfg.per_entry_mask)
        views.append(GraphView(adj_norm=normalize_adjacency(adj), features=feats))
    return ViewPair(view1=views[0], view2=views[1], draw_id=draw_id)
