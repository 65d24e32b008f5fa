"""Full-batch transductive training with model selection by minimum
contrastive loss.

Each epoch draws a fresh view pair, averages the InfoNCE over S weight
samples (variational modes), applies one Adam step over all parameters, and
snapshots the parameters whenever the epoch's InfoNCE component sets a new
minimum. The final checkpoint is that minimum's parameters; the loss used
for selection is the training loss of the epoch's own stochastic views.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .augment import AugmentConfig, make_views
from .graphio import SparseGraph
from .model import (Checkpoint, EncoderConfig, init_params, model_tensor_dict,
                    read_tensors, save_checkpoint, write_tensors, TENSOR_ORDER)
from .ndiff import AdamState, adam_step, zero_grad
from .objective import LossBreakdown, PriorConfig, total_loss

MODES = ("infonce", "vi_infonce", "vgcl")


class NonFiniteLossError(ArithmeticError):
    def __init__(self, epoch: int, component: str, value: float):
        super().__init__(
            f"non-finite loss at epoch {epoch}: {component}={value!r}")
        self.epoch = epoch
        self.component = component


@dataclass
class TrainConfig:
    mode: str
    epochs: int
    lr: float
    S: int
    augment: AugmentConfig
    prior: PriorConfig
    seed: int = 0
    hidden: int = 128
    out: int = 128
    proj_hidden: int = 128
    include_intra: bool = True
    block_rows: int | None = None
    strict: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.S < 1:
            raise ValueError("S must be >= 1")
        if self.mode == "infonce" and self.S != 1:
            raise ValueError("infonce mode requires S == 1")

    @property
    def variational(self) -> bool:
        return self.mode in ("vi_infonce", "vgcl")

    def effective_prior(self) -> PriorConfig:
        """vi_infonce ignores hyperpriors even if configured."""
        p = self.prior
        if self.mode == "vgcl":
            return p
        return PriorConfig(sigma2=p.sigma2, tau=p.tau, sigma0=None, mu_p=None,
                           sigma_p2=None, kl_scale=p.kl_scale, hp_scale=p.hp_scale)


@dataclass
class EpochRecord:
    epoch: int
    breakdown: LossBreakdown
    is_best: bool
    seconds: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_infonce: float = np.inf


def _check_finite(bd: LossBreakdown, epoch: int) -> None:
    for component in ("infonce", "kl", "hyperprior", "total"):
        value = getattr(bd, component)
        if not np.isfinite(value):
            raise NonFiniteLossError(epoch, component, value)


def write_trainlog(path: Path, log: TrainLog, strict: bool) -> None:
    lines = ["epoch,infonce,kl,hyperprior,total,is_best,seconds"]
    for r in log.records:
        secs = 0.0 if strict else r.seconds
        lines.append(
            f"{r.epoch},{r.breakdown.infonce!r},{r.breakdown.kl!r},"
            f"{r.breakdown.hyperprior!r},{r.breakdown.total!r},"
            f"{int(r.is_best)},{secs:.6f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _resume_tensors(weights, adam: AdamState, best_tensors) -> dict:
    out = {}
    for name, value in model_tensor_dict(weights).items():
        out[f"cur.{name}"] = value
    for name, value in best_tensors.items():
        out[f"best.{name}"] = value
    for name, value in adam.m.items():
        out[f"adam.m.{name}"] = value
    for name, value in adam.v.items():
        out[f"adam.v.{name}"] = value
    return out


def _run_epochs(g: SparseGraph, cfg: TrainConfig, weights, adam, rng_aug, rng_w,
                log: TrainLog, best_tensors, out_dir, config_hash,
                start_epoch: int) -> dict:
    enc_cfg = EncoderConfig(in_dim=g.f, hidden=cfg.hidden, out=cfg.out,
                            proj_hidden=cfg.proj_hidden)
    params = weights.params()
    prior = cfg.effective_prior()
    for epoch in range(start_epoch, cfg.epochs + 1):
        t0 = time.perf_counter()
        views = make_views(g, cfg.augment, rng_aug, draw_id=f"epoch{epoch}")
        zero_grad(params)
        bd = total_loss(views, weights, prior, cfg.S,
                        rng_w if cfg.variational else None,
                        include_intra=cfg.include_intra,
                        block_rows=cfg.block_rows, accumulate_grads=True)
        _check_finite(bd, epoch)
        is_best = bd.infonce < log.best_infonce
        if is_best:
            log.best_infonce = bd.infonce
            log.best_epoch = epoch
            best_tensors.clear()
            best_tensors.update({k: v.copy() for k, v in
                                 model_tensor_dict(weights).items()})
            save_checkpoint(out_dir, weights, cfg.mode, enc_cfg, epoch,
                            bd.infonce, config_hash)
        adam_step(adam, params)
        log.records.append(EpochRecord(epoch=epoch, breakdown=bd,
                                       is_best=is_best,
                                       seconds=time.perf_counter() - t0))
    return {
        "epoch": cfg.epochs,
        "loss": log.best_infonce,
        "mode": cfg.mode,
        "config_hash": config_hash,
        "encoder": {"in_dim": enc_cfg.in_dim, "hidden": enc_cfg.hidden,
                    "out": enc_cfg.out, "proj_hidden": enc_cfg.proj_hidden},
        "best_epoch": log.best_epoch,
        "best_infonce": log.best_infonce,
        "adam_t": adam.t,
        "rng_aug": rngmod.generator_state(rng_aug),
        "rng_weights": rngmod.generator_state(rng_w),
    }


def _finalize(out_dir: Path, cfg: TrainConfig, weights, adam, log, best_tensors,
              meta: dict) -> None:
    # Best weights for consumers, full state for resume.
    write_tensors(out_dir / "weights.bin", dict(best_tensors))
    write_tensors(out_dir / "resume.bin", _resume_tensors(weights, adam,
                                                          best_tensors))
    meta["epoch"] = log.best_epoch
    meta["loss"] = log.best_infonce
    (out_dir / "checkpoint.json").write_text(
        json.dumps(meta, indent=1, sort_keys=True, default=str) + "\n",
        encoding="utf-8")
    write_trainlog(out_dir / "trainlog.csv", log, cfg.strict)


def train(g: SparseGraph, cfg: TrainConfig, out_dir, config_hash: str = "") -> TrainLog:
    """Train from scratch; writes weights.bin/checkpoint.json/resume.bin and
    trainlog.csv under out_dir, returns the per-epoch log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng_init = rngmod.substream(cfg.seed, "init")
    rng_aug = rngmod.substream(cfg.seed, "augment")
    rng_w = rngmod.substream(cfg.seed, "weights")
    enc_cfg = EncoderConfig(in_dim=g.f, hidden=cfg.hidden, out=cfg.out,
                            proj_hidden=cfg.proj_hidden)
    weights = init_params(enc_cfg, rng_init,
                          "variational" if cfg.variational else "deterministic")
    adam = AdamState(lr=cfg.lr)
    log = TrainLog()
    best_tensors: dict[str, np.ndarray] = {}
    meta = _run_epochs(g, cfg, weights, adam, rng_aug, rng_w, log, best_tensors,
                       out, config_hash, start_epoch=1)
    _finalize(out, cfg, weights, adam, log, best_tensors, meta)
    return log


def _parse_trainlog(path: Path) -> TrainLog:
    log = TrainLog()
    lines = path.read_text(encoding="utf-8").splitlines()
    for line in lines[1:]:
        ep, infonce, kl, hp, tot, is_best, secs = line.split(",")
        bd = LossBreakdown(infonce=float(infonce), per_node=np.empty(0),
                           kl=float(kl), hyperprior=float(hp), total=float(tot))
        rec = EpochRecord(epoch=int(ep), breakdown=bd, is_best=bool(int(is_best)),
                          seconds=float(secs))
        log.records.append(rec)
        if rec.is_best:
            log.best_epoch = rec.epoch
            log.best_infonce = bd.infonce
    return log


def resume(g: SparseGraph, cfg: TrainConfig, ckpt_dir, config_hash: str = "") -> TrainLog:
    """Continue a stored run up to cfg.epochs total epochs, bit-identically
    to an uninterrupted run in strict mode. The stored config hash must match."""
    d = Path(ckpt_dir)
    meta = json.loads((d / "checkpoint.json").read_text(encoding="utf-8"))
    if meta["config_hash"] != config_hash:
        raise ValueError(
            f"checkpoint config hash {meta['config_hash']} does not match "
            f"requested config {config_hash}; refusing to resume")
    done = int(meta["adam_t"])
    if cfg.epochs <= done:
        warnings.warn(f"checkpoint already has {done} epochs; nothing to do")
        return _parse_trainlog(d / "trainlog.csv")

    stored = read_tensors(d / "resume.bin")
    enc_cfg = EncoderConfig(in_dim=g.f, hidden=cfg.hidden, out=cfg.out,
                            proj_hidden=cfg.proj_hidden)
    weights = init_params(enc_cfg, rngmod.substream(cfg.seed, "init"),
                          "variational" if cfg.variational else "deterministic")
    for p in weights.params():
        p.value[...] = stored[f"cur.{p.name}"]
    adam = AdamState(lr=cfg.lr)
    adam.t = done
    for p in weights.params():
        adam.m[p.name] = stored[f"adam.m.{p.name}"].copy()
        adam.v[p.name] = stored[f"adam.v.{p.name}"].copy()
    best_tensors = {k[len("best."):]: v.copy() for k, v in stored.items()
                    if k.startswith("best.")}

    rng_aug = rngmod.restore_generator(meta["rng_aug"])
    rng_w = rngmod.restore_generator(meta["rng_weights"])
    log = _parse_trainlog(d / "trainlog.csv")
    meta2 = _run_epochs(g, cfg, weights, adam, rng_aug, rng_w, log, best_tensors,
                        d, config_hash, start_epoch=done + 1)
    _finalize(d, cfg, weights, adam, log, best_tensors, meta2)
    return log
