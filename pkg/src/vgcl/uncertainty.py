"""Uncertainty measures over M stochastic draws and retention curves.

A draw j couples one augmented view pair with one weight sample; the per-node
likelihood proxy is exp(-per_node_contrastive_loss) under that draw. The
contrastive model disagreement score (CMDS) normalizes each node's M
likelihoods to l_j and returns 1 / (M * sum_j l_j^2), which lies in [1/M, 1]:
1 when the normalized likelihoods are uniform, 1/M when one draw takes all
the mass. The normalization cancels any factor common to a node's draws, so
the absolute likelihood scale is irrelevant.

Embedding-space baselines: ASTD averages the across-draw standard deviation
of the features (weight uncertainty only; undefined for deterministic
encoders), its min-max normalized variant rescales each feature per draw
first, and PSFV averages the across-draw variance where the draws differ by
augmentation. Expected likelihood and WAIC (mean minus variance of the log)
read the likelihood matrix directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, drop_edges, make_views, mask_features
from .graphio import SparseGraph, normalize_adjacency
from .model import Checkpoint, encode, project, sample_weights, weights_at_mean
from .objective import PriorConfig, nt_xent


@dataclass
class LikelihoodMatrix:
    L: np.ndarray        # M x n, strictly positive
    draw_ids: list[str]


@dataclass
class EmbeddingSamples:
    stack: np.ndarray    # M x n x d
    source: str          # "weights" | "augmentations" | "both" | "fixed"


@dataclass
class ScoreVector:
    values: np.ndarray
    higher_is_certain: bool
    name: str


@dataclass
class RetentionCurve:
    fractions: np.ndarray
    accuracies: np.ndarray


def collect_draws(ckpt: Checkpoint, g: SparseGraph, aug: AugmentConfig,
                  prior: PriorConfig, M: int, rng: np.random.Generator,
                  include_intra: bool = True,
                  block_rows: int | None = None
                  ) -> tuple[LikelihoodMatrix, EmbeddingSamples]:
    """M joint (augmentation, weight) draws: per-node likelihood proxies from
    the full loss pipeline plus the clean-graph embedding under each draw's
    weights. Deterministic checkpoints reuse their fixed weights."""
    if M < 2:
        raise ValueError("need M >= 2 draws (variance undefined otherwise)")
    weights = ckpt.build_weights()
    adj_clean = normalize_adjacency(g.adjacency)
    L = np.empty((M, g.n))
    stack = np.empty((M, g.n, ckpt.cfg.out))
    ids = []
    for j in range(M):
        draw_id = f"draw{j}"
        views = make_views(g, aug, rng, draw_id=draw_id)
        if ckpt.variational:
            w = sample_weights(weights, rng, draw_id=draw_id).as_nodes()
        else:
            w = weights.as_nodes()
        h1 = project(encode(views.view1.adj_norm, views.view1.features, w), w)
        h2 = project(encode(views.view2.adj_norm, views.view2.features, w), w)
        _, per_node = nt_xent(h1, h2, prior.tau, include_intra, block_rows)
        L[j] = np.exp(-per_node.value)
        stack[j] = encode(adj_clean, g.features, w).value
        ids.append(draw_id)
    source = "weights" if ckpt.variational else "fixed"
    return (LikelihoodMatrix(L=L, draw_ids=ids),
            EmbeddingSamples(stack=stack, source=source))


def collect_augmentation_embeddings(ckpt: Checkpoint, g: SparseGraph,
                                    aug: AugmentConfig, M: int,
                                    rng: np.random.Generator) -> EmbeddingSamples:
    """M encoder outputs under fresh view-1 augmentations with the weights
    held fixed (posterior mean for variational checkpoints); feeds PSFV."""
    if M < 2:
        raise ValueError("need M >= 2 draws (variance undefined otherwise)")
    weights = ckpt.build_weights()
    w = (weights_at_mean(weights) if ckpt.variational else weights.as_nodes())
    stack = np.empty((M, g.n, ckpt.cfg.out))
    for j in range(M):
        adj = drop_edges(g, aug.p_e1, rng)
        feats = mask_features(g.features, aug.p_f1, rng,
                              per_entry=aug.per_entry_mask)
        stack[j] = encode(normalize_adjacency(adj), feats, w).value
    return EmbeddingSamples(stack=stack, source="augmentations")


def cmds(lm: LikelihoodMatrix) -> ScoreVector:
    """1 / (M * sum_j l_j^2) with l the per-node normalized likelihoods."""
    L = lm.L
    M = L.shape[0]
    colsum = L.sum(axis=0)
    if np.any(colsum <= 0.0):
        bad = int(np.argmin(colsum))
        raise ArithmeticError(
            f"cannot normalize likelihoods: node {bad} has zero column sum "
            "(all draws underflowed)")
    l = L / colsum
    score = 1.0 / (M * np.sum(l * l, axis=0))
    return ScoreVector(values=score, higher_is_certain=True, name="cmds")


def _require_source(E: EmbeddingSamples, needed: str, measure: str) -> None:
    ok = {"weights": ("weights", "both"),
          "augmentations": ("augmentations", "both")}[needed]
    if E.source not in ok:
        if needed == "weights":
            raise ValueError(
                f"{measure} is not applicable to a deterministic encoder: the "
                "embedding draws carry no weight uncertainty "
                f"(source={E.source!r})")
        raise ValueError(
            f"{measure} needs augmentation-varied embedding draws "
            f"(source={E.source!r})")


def _across_draw_std(stack: np.ndarray) -> np.ndarray:
    # center on the first draw so identical draws give exactly zero
    # (std is translation invariant per node/feature)
    return (stack - stack[0:1]).std(axis=0, ddof=0)


def astd(E: EmbeddingSamples) -> ScoreVector:
    """Across-draw standard deviation of each feature, averaged over features."""
    _require_source(E, "weights", "ASTD")
    score = _across_draw_std(E.stack).mean(axis=1)
    return ScoreVector(values=score, higher_is_certain=False, name="astd")


def astd_norm(E: EmbeddingSamples) -> ScoreVector:
    """ASTD after min-max normalizing every feature across nodes, per draw;
    constant features map to 0."""
    _require_source(E, "weights", "ASTD_norm")
    lo = E.stack.min(axis=1, keepdims=True)
    hi = E.stack.max(axis=1, keepdims=True)
    span = hi - lo
    normed = np.where(span > 0, (E.stack - lo) / np.where(span > 0, span, 1.0), 0.0)
    score = _across_draw_std(normed).mean(axis=1)
    return ScoreVector(values=score, higher_is_certain=False, name="astd_norm")


def psfv(E: EmbeddingSamples) -> ScoreVector:
    """Across-draw variance of each feature, averaged over features; the
    draws vary by augmentation, so this applies to deterministic encoders."""
    _require_source(E, "augmentations", "PSFV")
    score = (_across_draw_std(E.stack) ** 2).mean(axis=1)
    return ScoreVector(values=score, higher_is_certain=False, name="psfv")


def expected_likelihood(lm: LikelihoodMatrix) -> ScoreVector:
    return ScoreVector(values=lm.L.mean(axis=0), higher_is_certain=True,
                       name="likelihood")


def waic(lm: LikelihoodMatrix) -> ScoreVector:
    """Mean likelihood minus the (population) variance of the log likelihood."""
    values = lm.L.mean(axis=0) - np.log(lm.L).var(axis=0, ddof=0)
    return ScoreVector(values=values, higher_is_certain=True, name="waic")


def retention_curve(score: ScoreVector, correct: np.ndarray,
                    test_idx: np.ndarray) -> RetentionCurve:
    """Cumulative accuracy as test nodes are admitted most-certain-first.

    Ties in the score break by node index ascending. The k-th point is
    (k/T, mean correctness of the first k nodes); the last equals overall
    test accuracy.
    """
    test_idx = np.asarray(test_idx)
    correct = np.asarray(correct, dtype=np.float64)
    if test_idx.size == 0:
        raise ValueError("empty test set")
    if correct.shape != test_idx.shape:
        raise ValueError("correctness flags must align with test_idx")
    key = score.values[test_idx]
    if score.higher_is_certain:
        key = -key
    order = np.lexsort((test_idx, key))
    cum = np.cumsum(correct[order])
    ks = np.arange(1, test_idx.size + 1)
    return RetentionCurve(fractions=ks / test_idx.size, accuracies=cum / ks)


def curve_area(curve: RetentionCurve) -> float:
    """Mean cumulative accuracy across retention levels (discrete AUC)."""
    return float(curve.accuracies.mean())


def write_retention_csv(path, curve: RetentionCurve) -> None:
    lines = ["fraction,accuracy"]
    for f, a in zip(curve.fractions, curve.accuracies):
        lines.append(f"{f:.6f},{a:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_scores_tsv(path, scores: list[ScoreVector]) -> None:
    orient = ", ".join(
        f"{s.name}=higher is {'more certain' if s.higher_is_certain else 'more uncertain'}"
        for s in scores)
    lines = [f"# orientation: {orient}",
             "node\t" + "\t".join(s.name for s in scores)]
    n = scores[0].values.size
    for i in range(n):
        lines.append(str(i) + "\t" +
                     "\t".join(repr(float(s.values[i])) for s in scores))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_scores_tsv(path) -> list[ScoreVector]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing orientation comment header")
    orientation: dict[str, bool] = {}
    for part in lines[0].lstrip("# ").removeprefix("orientation:").split(","):
        name, _, rest = part.strip().partition("=")
        orientation[name] = "more certain" in rest
    names = lines[1].split("\t")[1:]
    rows = [ln.split("\t") for ln in lines[2:] if ln]
    cols = np.array([[float(v) for v in row[1:]] for row in rows])
    return [ScoreVector(values=cols[:, k], higher_is_certain=orientation[name],
                        name=name)
            for k, name in enumerate(names)]
