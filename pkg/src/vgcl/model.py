"""Two-layer GCN encoder, MLP projection head, and their weight containers.

Both graph views are encoded by the same network. GCN layers carry no bias;
the projection head has biased layers with an ELU in between. In variational
mode every tensor (biases included) gets a Gaussian with mean ``mu`` and
standard deviation ``softplus(p)``, sampled via the reparameterization trick.

Checkpoint format (``weights.bin``): ascii header ``VGCL0001``, then per
tensor: uint32 name length, utf-8 name, uint32 rank, uint64 dims, raw
little-endian float64 values (C order). Variational tensors are written as
``<name>.mu`` then ``<name>.p``. Metadata lives in ``checkpoint.json``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import ndiff
from .ndiff import Node, Param

TENSOR_ORDER = ("W1", "W2", "P1", "b1", "P2", "b2")

# softplus(SIGMA_INIT_P) ~= 0.01; keeps the initial KL small.
SIGMA_INIT_P = float(np.log(np.expm1(0.01)))

MAGIC = b"VGCL0001"


@dataclass
class EncoderConfig:
    in_dim: int
    hidden: int = 128
    out: int = 128
    proj_hidden: int = 128

    def __post_init__(self):
        if min(self.in_dim, self.hidden, self.out, self.proj_hidden) < 1:
            raise ValueError("all dimensions must be >= 1")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "W1": (self.in_dim, self.hidden),
            "W2": (self.hidden, self.out),
            "P1": (self.out, self.proj_hidden),
            "b1": (self.proj_hidden,),
            "P2": (self.proj_hidden, self.out),
            "b2": (self.out,),
        }


@dataclass
class DeterministicWeights:
    tensors: dict[str, Param]

    def params(self) -> list[Param]:
        return [self.tensors[k] for k in TENSOR_ORDER]

    def as_nodes(self) -> dict[str, Node]:
        return dict(self.tensors)


@dataclass
class VariationalParams:
    mu: dict[str, Param]
    p: dict[str, Param]

    def params(self) -> list[Param]:
        return [self.mu[k] for k in TENSOR_ORDER] + [self.p[k] for k in TENSOR_ORDER]

    def sigma_v(self, name: str) -> np.ndarray:
        pv = self.p[name].value
        return np.maximum(pv, 0.0) + np.log1p(np.exp(-np.abs(pv)))


@dataclass
class WeightSample:
    """One concrete draw w = mu + softplus(p) * eps, kept as graph nodes so
    gradients reach (mu, p)."""

    tensors: dict[str, Node]
    draw_id: str = ""

    def as_nodes(self) -> dict[str, Node]:
        return dict(self.tensors)


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    if len(shape) == 1:
        return np.zeros(shape)
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: EncoderConfig, rng: np.random.Generator, mode: str):
    """Glorot-uniform matrices (means in variational mode), zero biases, and
    p chosen so the initial sigma_v is ~0.01."""
    shapes = cfg.shapes()
    if mode == "deterministic":
        tensors = {k: Param(_glorot(rng, s), name=k) for k, s in shapes.items()}
        return DeterministicWeights(tensors=tensors)
    if mode == "variational":
        mu = {k: Param(_glorot(rng, s), name=f"{k}.mu") for k, s in shapes.items()}
        p = {k: Param(np.full(s, SIGMA_INIT_P), name=f"{k}.p")
             for k, s in shapes.items()}
        return VariationalParams(mu=mu, p=p)
    raise ValueError(f"unknown init mode: {mode}")


def sample_weights(vp: VariationalParams, rng: np.random.Generator,
                   draw_id: str = "") -> WeightSample:
    """Reparameterized draw from the weight posterior; differentiable in
    mu and p."""
    tensors: dict[str, Node] = {}
    for name in TENSOR_ORDER:
        eps = rng.standard_normal(vp.mu[name].value.shape)
        sigma = ndiff.softplus(vp.p[name])
        tensors[name] = ndiff.add(vp.mu[name], ndiff.mul(sigma, ndiff.constant(eps)))
    return WeightSample(tensors=tensors, draw_id=draw_id)


def weights_at_mean(vp: VariationalParams) -> dict[str, Node]:
    """The posterior-mean network (used for deterministic-style passes)."""
    return {name: vp.mu[name] for name in TENSOR_ORDER}


def encode(adj_norm: sp.spmatrix, features: sp.spmatrix, w: dict[str, Node]) -> Node:
    """Z = A_hat . relu(A_hat . X . W1) . W2 with no biases in the GCN layers."""
    h = ndiff.spmm(features.tocsr(), w["W1"])
    h = ndiff.relu(ndiff.spmm(adj_norm, h))
    return ndiff.spmm(adj_norm, ndiff.matmul(h, w["W2"]))


def project(z: Node, w: dict[str, Node]) -> Node:
    """H = elu(Z P1 + b1) P2 + b2; used only inside the contrastive loss."""
    h = ndiff.elu(ndiff.add_rowvec(ndiff.matmul(z, w["P1"]), w["b1"]))
    return ndiff.add_rowvec(ndiff.matmul(h, w["P2"]), w["b2"])


# ---------------------------------------------------------------------------
# checkpoint io


def _write_tensor(fh, name: str, value: np.ndarray) -> None:
    data = name.encode("utf-8")
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)
    fh.write(struct.pack("<I", value.ndim))
    for d in value.shape:
        fh.write(struct.pack("<Q", d))
    fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def write_tensors(path: Path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, value in tensors.items():
            _write_tensor(fh, name, np.asarray(value, dtype=np.float64))


def read_tensors(path: Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:8]!r}")
    out: dict[str, np.ndarray] = {}
    off = 8
    while off < len(raw):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", raw, off)
        off += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=off).copy()
        off += 8 * count
        out[name] = values.reshape(dims)
    return out


def model_tensor_dict(weights) -> dict[str, np.ndarray]:
    """Flatten a weight container to named arrays in checkpoint order."""
    if isinstance(weights, VariationalParams):
        out: dict[str, np.ndarray] = {}
        for name in TENSOR_ORDER:
            out[f"{name}.mu"] = weights.mu[name].value
            out[f"{name}.p"] = weights.p[name].value
        return out
    return {name: weights.tensors[name].value for name in TENSOR_ORDER}


@dataclass
class Checkpoint:
    mode: str  # infonce | vi_infonce | vgcl
    cfg: EncoderConfig
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def variational(self) -> bool:
        return self.mode in ("vi_infonce", "vgcl")

    def build_weights(self):
        """Reconstruct Param containers (fresh leaves) from stored arrays."""
        if self.variational:
            mu = {k: Param(self.tensors[f"{k}.mu"].copy(), name=f"{k}.mu")
                  for k in TENSOR_ORDER}
            p = {k: Param(self.tensors[f"{k}.p"].copy(), name=f"{k}.p")
                 for k in TENSOR_ORDER}
            return VariationalParams(mu=mu, p=p)
        tensors = {k: Param(self.tensors[k].copy(), name=k) for k in TENSOR_ORDER}
        return DeterministicWeights(tensors=tensors)


def save_checkpoint(out_dir, weights, mode: str, cfg: EncoderConfig,
                    epoch: int, loss: float, config_hash: str,
                    extra: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensors(out / "weights.bin", model_tensor_dict(weights))
    meta = {
        "epoch": epoch,
        "loss": loss,
        "mode": mode,
        "config_hash": config_hash,
        "encoder": {"in_dim": cfg.in_dim, "hidden": cfg.hidden,
                    "out": cfg.out, "proj_hidden": cfg.proj_hidden},
    }
    if extra:
        meta.update(extra)
    (out / "checkpoint.json").write_text(
        json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(ckpt_dir) -> Checkpoint:
    d = Path(ckpt_dir)
    meta = json.loads((d / "checkpoint.json").read_text(encoding="utf-8"))
    enc = meta["encoder"]
    cfg = EncoderConfig(in_dim=enc["in_dim"], hidden=enc["hidden"],
                        out=enc["out"], proj_hidden=enc["proj_hidden"])
    tensors = read_tensors(d / "weights.bin")
    return Checkpoint(mode=meta["mode"], cfg=cfg, tensors=tensors, meta=meta)
