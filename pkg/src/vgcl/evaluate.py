"""Embedding extraction and the L2-regularized logistic-regression probe.

The probe consumes the encoder output on the unaugmented graph (never the
projection head's output). For variational checkpoints the embedding of each
node is the average over K weight samples. One trained encoder is reused
across all evaluation splits; only the splits vary.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphio import SparseGraph, SplitSpec, make_split, normalize_adjacency
from .model import Checkpoint, encode, sample_weights

PROBE_LAMBDAS = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
PROBE_MAX_ITERS = 5000
PROBE_GRAD_TOL = 1e-5


@dataclass
class EmbeddingSet:
    matrix: np.ndarray   # n x out, mean over weight samples
    samples: int
    provenance: str = ""


@dataclass
class ProbeResult:
    accuracy: float
    lam: float
    correct: np.ndarray      # bool flags aligned with test_idx
    test_idx: np.ndarray
    val_accuracy: float = 0.0


@dataclass
class EvalResult:
    accuracies: np.ndarray
    mean: float
    stderr: float
    probes: list[ProbeResult] = field(default_factory=list)


def extract_embeddings(ckpt: Checkpoint, g: SparseGraph, samples: int,
                       rng: np.random.Generator | None = None) -> EmbeddingSet:
    """Mean encoder output over `samples` weight draws on the clean graph.
    Deterministic checkpoints force samples=1."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    adj_norm = normalize_adjacency(g.adjacency)
    weights = ckpt.build_weights()
    if not ckpt.variational:
        samples = 1
    acc = None
    for k in range(samples):
        if ckpt.variational:
            w = sample_weights(weights, rng, draw_id=f"k{k}").as_nodes()
        else:
            w = weights.as_nodes()
        z = encode(adj_norm, g.features, w).value
        acc = z if acc is None else acc + z
    return EmbeddingSet(matrix=acc / samples, samples=samples,
                        provenance=ckpt.meta.get("config_hash", ""))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))


def _objective(X, Y, W, b, lam_eff):
    logp = _log_softmax(X @ W + b)
    nll = -np.sum(logp * Y) / X.shape[0]
    return nll + 0.5 * lam_eff * np.sum(W * W)


def _fit_multinomial(X: np.ndarray, y: np.ndarray, num_classes: int,
                     lam_eff: float) -> tuple[np.ndarray, np.ndarray]:
    """Full-batch gradient descent with Armijo backtracking from zero init,
    run to gradient norm <= 1e-5 or 5000 iterations. The trial step starts
    from the Barzilai-Borwein estimate of the local curvature (safeguarded by
    the backtracking), which keeps the iteration count practical."""
    n, d = X.shape
    Y = np.zeros((n, num_classes))
    Y[np.arange(n), y] = 1.0
    W = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    f = _objective(X, Y, W, b, lam_eff)
    prev_g = None
    prev_step = None
    t0 = 1.0
    for _ in range(PROBE_MAX_ITERS):
        P = np.exp(_log_softmax(X @ W + b))
        diff = (P - Y) / n
        g_w = X.T @ diff + lam_eff * W
        g_b = diff.sum(axis=0)
        gnorm2 = float(np.sum(g_w * g_w) + np.sum(g_b * g_b))
        if np.sqrt(gnorm2) <= PROBE_GRAD_TOL:
            break
        if prev_g is not None:
            y_w = g_w - prev_g[0]
            y_b = g_b - prev_g[1]
            sy = float(np.sum(prev_step[0] * y_w) + np.sum(prev_step[1] * y_b))
            ss = float(np.sum(prev_step[0] ** 2) + np.sum(prev_step[1] ** 2))
            if sy > 0:
                t0 = min(max(ss / sy, 1e-10), 1e10)
        t = t0
        while True:
            W2, b2 = W - t * g_w, b - t * g_b
            f2 = _objective(X, Y, W2, b2, lam_eff)
            if f2 <= f - 1e-4 * t * gnorm2 or t < 1e-14:
                break
            t *= 0.5
        prev_g = (g_w, g_b)
        prev_step = (W2 - W, b2 - b)
        W, b, f = W2, b2, f2
    return W, b


def train_loglik(X, y, num_classes, W, b, lam_eff=0.0) -> float:
    """Unpenalized mean train log-likelihood under (W, b)."""
    Y = np.zeros((X.shape[0], num_classes))
    Y[np.arange(X.shape[0]), y] = 1.0
    return float(np.sum(_log_softmax(X @ W + b) * Y) / X.shape[0])


def fit_probe(E: EmbeddingSet, labels: np.ndarray, split: SplitSpec,
              num_classes: int, standardize: bool = False) -> ProbeResult:
    """Sweep the regularization grid (scaled by 1/|train|), select by
    validation accuracy with ties going to the larger penalty, and report
    test accuracy plus per-node correctness."""
    X = E.matrix
    if standardize:
        mu = X[split.train_idx].mean(axis=0)
        sd = X[split.train_idx].std(axis=0)
        X = (X - mu) / np.where(sd < 1e-12, 1.0, sd)

    y_tr = labels[split.train_idx]
    present = np.unique(y_tr)
    if present.size < num_classes:
        missing = sorted(set(range(num_classes)) - set(present.tolist()))
        warnings.warn(f"classes {missing} absent from the train split; "
                      "they cannot be learned")

    X_tr = X[split.train_idx]
    best = None
    for lam in PROBE_LAMBDAS:
        lam_eff = lam / split.train_idx.size
        W, b = _fit_multinomial(X_tr, y_tr, num_classes, lam_eff)
        val_pred = np.argmax(X[split.val_idx] @ W + b, axis=1)
        val_acc = float(np.mean(val_pred == labels[split.val_idx]))
        if best is None or val_acc >= best[0]:
            best = (val_acc, lam, W, b)

    val_acc, lam, W, b = best
    test_pred = np.argmax(X[split.test_idx] @ W + b, axis=1)
    correct = test_pred == labels[split.test_idx]
    return ProbeResult(accuracy=float(correct.mean()), lam=lam,
                       correct=correct, test_idx=split.test_idx,
                       val_accuracy=val_acc)


def evaluate(ckpt: Checkpoint, g: SparseGraph, runs: int = 20,
             samples: int = 100, rng: np.random.Generator | None = None,
             standardize: bool = False) -> EvalResult:
    """Probe one set of embeddings over `runs` splits (seeds 0..runs-1) and
    report mean test accuracy with its standard error."""
    E = extract_embeddings(ckpt, g, samples, rng)
    probes = []
    for seed in range(runs):
        split = make_split(g.n, seed)
        probes.append(fit_probe(E, g.labels, split, g.num_classes, standardize))
    accs = np.array([p.accuracy for p in probes])
    if runs == 1:
        warnings.warn("stderr is reported as 0 for a single run")
        stderr = 0.0
    else:
        stderr = float(accs.std(ddof=1) / np.sqrt(runs))
    return EvalResult(accuracies=accs, mean=float(accs.mean()), stderr=stderr,
                      probes=probes)


def write_embeddings_tsv(path: Path, E: EmbeddingSet) -> None:
    lines = ["\t".join(repr(float(v)) for v in row) for row in E.matrix]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_probe_results(path: Path, result: EvalResult) -> None:
    payload = {
        "mean": result.mean,
        "stderr": result.stderr,
        "per_split": [
            {
                "seed": i,
                "accuracy": p.accuracy,
                "lambda": p.lam,
                "val_accuracy": p.val_accuracy,
                "test_idx": p.test_idx.tolist(),
                "correct": [int(c) for c in p.correct],
            }
            for i, p in enumerate(result.probes)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_probe_results(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
