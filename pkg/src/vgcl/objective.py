"""Contrastive and variational objectives.

The per-node temperature-scaled InfoNCE treats node i's two views as the
positive pair and, by default, every other node in both views as negatives.
The n x n similarity work runs over row blocks so memory stays O(block * n);
blocking never changes the arithmetic because each row's reduction happens
within a single pass over its full row.

The temperature default of 0.5 is a project choice (see README); override it
per run via the config.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndiff
from .model import (DeterministicWeights, VariationalParams, encode, project,
                    sample_weights, TENSOR_ORDER)
from .ndiff import Node

# Softmax matrices are cached between forward and backward when the graph is
# small enough; above this node count they are recomputed blockwise instead.
CACHE_SOFTMAX_MAX_N = 4096


@dataclass
class PriorConfig:
    sigma2: float = 0.0025      # prior weight variance
    tau: float = 0.5            # InfoNCE temperature (unstated upstream; see README)
    sigma0: float | None = None   # hyperprior std for mu; None disables the term
    mu_p: float | None = None     # hyperprior mean for p (0 when only sigma_p2 given)
    sigma_p2: float | None = None  # hyperprior variance for p; None disables
    kl_scale: float | None = None  # None -> 1/n at loss time
    hp_scale: float | None = None  # None -> same as kl_scale

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.sigma0 is not None and self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive when present")
        if self.sigma_p2 is not None and self.sigma_p2 <= 0:
            raise ValueError("sigma_p2 must be positive when present")
        if self.sigma_p2 is not None and self.mu_p is None:
            self.mu_p = 0.0


@dataclass
class LossBreakdown:
    infonce: float
    per_node: np.ndarray
    kl: float
    hyperprior: float
    total: float


def _direction_losses(anchor: np.ndarray, other: np.ndarray, tau: float,
                      include_intra: bool, block_rows: int,
                      cache: list | None) -> np.ndarray:
    """Per-node loss with `anchor` rows as queries: -log softmax mass of the
    positive among cross-view (and optionally intra-view) similarities."""
    n = anchor.shape[0]
    losses = np.empty(n)
    for i0 in range(0, n, block_rows):
        i1 = min(i0 + block_rows, n)
        idx = np.arange(i0, i1)
        cross = (anchor[i0:i1] @ other.T) / tau
        pos = cross[np.arange(i1 - i0), idx]
        if include_intra:
            intra = (anchor[i0:i1] @ anchor.T) / tau
            intra[np.arange(i1 - i0), idx] = -np.inf
            m = np.maximum(cross.max(axis=1), intra.max(axis=1))
            ex_c = np.exp(cross - m[:, None])
            ex_i = np.exp(intra - m[:, None])
            lse = m + np.log(ex_c.sum(axis=1) + ex_i.sum(axis=1))
            if cache is not None:
                denom = np.exp(lse - m)[:, None]
                cache.append((ex_c / denom, ex_i / denom))
        else:
            m = cross.max(axis=1)
            ex_c = np.exp(cross - m[:, None])
            lse = m + np.log(ex_c.sum(axis=1))
            if cache is not None:
                cache.append((ex_c / np.exp(lse - m)[:, None], None))
        losses[i0:i1] = lse - pos
    return losses


def _direction_backward(g_half: np.ndarray, anchor: np.ndarray, other: np.ndarray,
                        tau: float, include_intra: bool, block_rows: int,
                        cache: list | None, d_anchor: np.ndarray,
                        d_other: np.ndarray) -> None:
    """Accumulate gradients of sum(g_half * direction_losses) into the
    normalized embeddings. Softmax blocks come from `cache` or are recomputed."""
    n = anchor.shape[0]
    for bi, i0 in enumerate(range(0, n, block_rows)):
        i1 = min(i0 + block_rows, n)
        idx = np.arange(i0, i1)
        rows = np.arange(i1 - i0)
        if cache is not None:
            soft_c, soft_i = cache[bi]
        else:
            cross = (anchor[i0:i1] @ other.T) / tau
            if include_intra:
                intra = (anchor[i0:i1] @ anchor.T) / tau
                intra[rows, idx] = -np.inf
                m = np.maximum(cross.max(axis=1), intra.max(axis=1))
                ex_c = np.exp(cross - m[:, None])
                ex_i = np.exp(intra - m[:, None])
                denom = (ex_c.sum(axis=1) + ex_i.sum(axis=1))[:, None]
                soft_c, soft_i = ex_c / denom, ex_i / denom
            else:
                m = cross.max(axis=1)
                ex_c = np.exp(cross - m[:, None])
                soft_c, soft_i = ex_c / ex_c.sum(axis=1)[:, None], None

        gb = g_half[i0:i1][:, None]
        d_cross = gb * soft_c
        d_cross[rows, idx] -= g_half[i0:i1]
        d_anchor[i0:i1] += (d_cross @ other) / tau
        d_other += (d_cross.T @ anchor[i0:i1]) / tau
        if include_intra:
            d_intra = gb * soft_i
            d_anchor[i0:i1] += (d_intra @ anchor) / tau
            d_anchor += (d_intra.T @ anchor[i0:i1]) / tau


def contrastive_per_node(hn1: Node, hn2: Node, tau: float,
                         include_intra: bool = True,
                         block_rows: int | None = None) -> Node:
    """Symmetrized per-node NT-Xent losses for row-normalized embeddings.

    Returns an n-vector node; its mean is the InfoNCE estimate.
    """
    n = hn1.value.shape[0]
    if n < 2:
        raise ValueError("contrastive loss needs at least 2 nodes (no negatives)")
    if hn1.value.shape != hn2.value.shape:
        raise ValueError("view embeddings must have identical shapes")
    block = n if block_rows is None else max(1, int(block_rows))
    tau = float(tau)

    use_cache = n <= CACHE_SOFTMAX_MAX_N
    cache1: list | None = [] if use_cache else None
    cache2: list | None = [] if use_cache else None
    a1, a2 = hn1.value, hn2.value
    l1 = _direction_losses(a1, a2, tau, include_intra, block, cache1)
    l2 = _direction_losses(a2, a1, tau, include_intra, block, cache2)
    per_node = 0.5 * (l1 + l2)

    def vjp(g):
        d1 = np.zeros_like(a1)
        d2 = np.zeros_like(a2)
        gh = 0.5 * g
        _direction_backward(gh, a1, a2, tau, include_intra, block, cache1, d1, d2)
        _direction_backward(gh, a2, a1, tau, include_intra, block, cache2, d2, d1)
        return (d1, d2)

    return Node(per_node, (hn1, hn2), vjp)


def nt_xent(h1: Node, h2: Node, tau: float, include_intra: bool = True,
            block_rows: int | None = None) -> tuple[Node, Node]:
    """Temperature-scaled InfoNCE over cosine similarities.

    Returns (mean loss node, per-node loss node). Cosine similarity is
    normalize-then-dot, so the loss is invariant to positive rescaling of
    the embeddings.
    """
    hn1 = ndiff.row_l2_normalize(h1)
    hn2 = ndiff.row_l2_normalize(h2)
    per_node = contrastive_per_node(hn1, hn2, tau, include_intra, block_rows)
    return ndiff.nmean(per_node), per_node


def kl_gaussian(vp: VariationalParams, sigma2: float) -> Node:
    """Closed-form KL( q(w|mu, softplus(p)) || N(0, sigma2) ), summed over
    every weight of every tensor."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    total: Node | None = None
    count = 0
    for name in TENSOR_ORDER:
        mu, p = vp.mu[name], vp.p[name]
        count += mu.value.size
        sv = ndiff.softplus(p)
        term = ndiff.add(
            ndiff.scale(ndiff.add(ndiff.nsum(ndiff.mul(sv, sv)),
                                  ndiff.nsum(ndiff.mul(mu, mu))),
                        1.0 / (2.0 * sigma2)),
            ndiff.scale(ndiff.nsum(ndiff.log(sv)), -1.0),
        )
        total = term if total is None else ndiff.add(total, term)
    const = count * (0.5 * np.log(sigma2) - 0.5)
    return ndiff.add_scalar(total, const)


def hyperprior_penalty(vp: VariationalParams, cfg: PriorConfig) -> Node:
    """Negative log hyperprior density (constants dropped). Terms whose
    hyperparameter is absent contribute nothing."""
    total: Node | None = None
    if cfg.sigma0 is not None:
        coeff = 1.0 / (2.0 * cfg.sigma0 ** 2)
        for name in TENSOR_ORDER:
            mu = vp.mu[name]
            term = ndiff.scale(ndiff.nsum(ndiff.mul(mu, mu)), coeff)
            total = term if total is None else ndiff.add(total, term)
    if cfg.sigma_p2 is not None:
        coeff = 1.0 / (2.0 * cfg.sigma_p2)
        for name in TENSOR_ORDER:
            centered = ndiff.add_scalar(vp.p[name], -float(cfg.mu_p))
            term = ndiff.scale(ndiff.nsum(ndiff.mul(centered, centered)), coeff)
            total = term if total is None else ndiff.add(total, term)
    return total if total is not None else ndiff.constant(0.0)


def total_loss(views, weights, prior: PriorConfig, S: int,
               rng: np.random.Generator | None, *,
               include_intra: bool = True, block_rows: int | None = None,
               accumulate_grads: bool = False) -> LossBreakdown:
    """Training objective for one view pair.

    Deterministic weights: S must be 1 and the KL/hyperprior terms are zero.
    Variational weights: the InfoNCE part is averaged over S reparameterized
    weight draws, then kl_scale*KL + hp_scale*hyperprior is added (scales
    default to 1/n). With accumulate_grads=True, gradients of the total are
    accumulated into the parameters' .grad as the samples are processed, so
    only one sample's graph is alive at a time.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    variational = isinstance(weights, VariationalParams)
    if not variational and S != 1:
        raise ValueError("deterministic mode requires S == 1")

    n = views.view1.adj_norm.shape[0]
    per_node_acc = np.zeros(n)
    for s in range(S):
        if variational:
            w = sample_weights(weights, rng, draw_id=f"s{s}").as_nodes()
        else:
            w = weights.as_nodes()
        h1 = project(encode(views.view1.adj_norm, views.view1.features, w), w)
        h2 = project(encode(views.view2.adj_norm, views.view2.features, w), w)
        mean_node, per_node = nt_xent(h1, h2, prior.tau, include_intra, block_rows)
        per_node_acc += per_node.value
        if accumulate_grads:
            ndiff.backward(ndiff.scale(mean_node, 1.0 / S))
    per_node_acc /= S
    infonce = float(per_node_acc.mean())

    kl_val = 0.0
    hp_val = 0.0
    kl_scale = prior.kl_scale if prior.kl_scale is not None else 1.0 / n
    hp_scale = prior.hp_scale if prior.hp_scale is not None else kl_scale
    if variational:
        kl_node = kl_gaussian(weights, prior.sigma2)
        hp_node = hyperprior_penalty(weights, prior)
        kl_val = float(kl_node.value)
        hp_val = float(hp_node.value)
        if accumulate_grads:
            penalty = ndiff.add(ndiff.scale(kl_node, kl_scale),
                                ndiff.scale(hp_node, hp_scale))
            ndiff.backward(penalty)

    total = infonce + kl_scale * kl_val + hp_scale * hp_val
    return LossBreakdown(infonce=infonce, per_node=per_node_acc, kl=kl_val,
                         hyperprior=hp_val, total=total)
