"""One JSON config per run: the union of training, prior, augmentation, eval
and uncertainty settings, with CLI overrides. Unknown keys are fatal so typos
cannot silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .augment import AugmentConfig
from .objective import PriorConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "infonce"
    dataset: str = ""
    epochs: int = 150
    lr: float = 5e-3
    mc_samples: int = 1
    tau: float = 0.5
    p_f1: float = 0.0
    p_f2: float = 0.0
    p_e1: float = 0.0
    p_e2: float = 0.0
    per_entry_mask: bool = False
    sigma2: float = 0.0025
    sigma0: float | None = None
    mu_p2: float | None = None
    mu_p_raw: bool = False   # interpret mu_p2 literally as mu_p, not its square
    sigma_p2: float | None = None
    kl_scale: float | None = None   # None -> 1/n
    hp_scale: float | None = None   # None -> kl_scale
    seed: int = 0
    hidden: int = 128
    out_dim: int = 128
    proj_hidden: int = 128
    include_intra: bool = True
    block_rows: int | None = None
    strict: bool = False
    eval_runs: int = 20
    eval_samples: int = 100
    draws: int = 50
    standardize: bool = False

    def __post_init__(self):
        if self.mode not in ("infonce", "vi_infonce", "vgcl"):
            raise ConfigError(f"mode {self.mode!r} not one of "
                              "infonce|vi_infonce|vgcl")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")
        if self.mode == "infonce" and self.mc_samples != 1:
            raise ConfigError("infonce mode requires mc_samples == 1")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be positive")
        if self.mu_p2 is not None and not self.mu_p_raw and self.mu_p2 < 0:
            raise ConfigError("mu_p2 must be nonnegative (it is a square); "
                              "set mu_p_raw=true to pass a raw mean")
        if self.eval_runs < 1 or self.eval_samples < 1:
            raise ConfigError("eval_runs and eval_samples must be >= 1")
        if self.draws < 2:
            raise ConfigError("draws must be >= 2")

    def resolved_mu_p(self) -> float | None:
        if self.sigma_p2 is None:
            return None
        value = 0.0 if self.mu_p2 is None else float(self.mu_p2)
        return value if self.mu_p_raw else math.sqrt(value)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(p_f1=self.p_f1, p_f2=self.p_f2, p_e1=self.p_e1,
                             p_e2=self.p_e2, per_entry_mask=self.per_entry_mask)

    def prior_config(self) -> PriorConfig:
        return PriorConfig(sigma2=self.sigma2, tau=self.tau, sigma0=self.sigma0,
                           mu_p=self.resolved_mu_p(), sigma_p2=self.sigma_p2,
                           kl_scale=self.kl_scale, hp_scale=self.hp_scale)

    def train_config(self) -> TrainConfig:
        return TrainConfig(mode=self.mode, epochs=self.epochs, lr=self.lr,
                           S=self.mc_samples, augment=self.augment_config(),
                           prior=self.prior_config(), seed=self.seed,
                           hidden=self.hidden, out=self.out_dim,
                           proj_hidden=self.proj_hidden,
                           include_intra=self.include_intra,
                           block_rows=self.block_rows, strict=self.strict)

    # Fields that define the optimization trajectory; epochs is excluded so a
    # run can be resumed to a larger epoch count, and the eval/uncertainty
    # settings are excluded because they do not touch training.
    _HASH_FIELDS = ("mode", "lr", "mc_samples", "tau", "p_f1", "p_f2", "p_e1",
                    "p_e2", "per_entry_mask", "sigma2", "sigma0", "mu_p2",
                    "mu_p_raw", "sigma_p2", "kl_scale", "hp_scale", "seed",
                    "hidden", "out_dim", "proj_hidden", "include_intra")

    def config_hash(self) -> str:
        payload = {k: getattr(self, k) for k in self._HASH_FIELDS}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> dict:
        return asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    """Parse a string override into the field's declared type."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key: {key!r}")
    if not isinstance(value, str):
        return value
    t = _FIELD_TYPES[key]
    if value.lower() in ("null", "none"):
        return None
    if t == "bool" or t.startswith("bool"):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if t == "int" or t.startswith("int"):
        return int(value)
    if t == "float" or t.startswith("float"):
        return float(value)
    return value


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read one JSON config file and apply overrides; unknown keys fail."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return make_config(raw, overrides)


def make_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    data = dict(raw)
    for key in data:
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key: {key!r}")
    if overrides:
        for key, value in overrides.items():
            data[key] = _coerce(key, value)
    try:
        return RunConfig(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from None
