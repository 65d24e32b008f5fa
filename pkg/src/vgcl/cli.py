"""Command-line surface: train, embed, probe, score, retention, reproduce.

Exit codes: 0 success, 1 user/config error, 2 numerical failure. The default
data directory comes from $VGCL_DATA_DIR; every output lands under --out with
fixed filenames (weights.bin, checkpoint.json, trainlog.csv, embeddings.tsv,
probe_results.json, scores.tsv, retention.csv).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import rng as rngmod
from . import train as trainmod
from . import uncertainty as unc
from .config import ConfigError, RunConfig, load_config, make_config
from .evaluate import (evaluate, extract_embeddings, load_probe_results,
                       write_embeddings_tsv, write_probe_results)
from .graphio import DatasetError, load_dataset
from .model import load_checkpoint

MEASURES = ("cmds", "astd", "astd_norm", "psfv", "likelihood", "waic")
MODEL_ALIASES = {"infonce": "infonce", "vi": "vi_infonce",
                 "vi_infonce": "vi_infonce", "vgcl": "vgcl"}


class CliError(ValueError):
    pass


def _data_dir(arg: str | None) -> Path:
    path = arg or os.environ.get("VGCL_DATA_DIR")
    if not path:
        raise CliError("no data directory: pass --data or set VGCL_DATA_DIR")
    return Path(path)


def _parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {pair!r}")
        out[key] = value
    return out


def _presets_dir(arg: str | None) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get("VGCL_PRESETS_DIR")
    if env:
        return Path(env)
    local = Path("presets")
    if local.is_dir():
        return local
    return Path(__file__).resolve().parents[2] / "presets"


def _config_from_checkpoint(ckpt_dir: Path, overrides: dict) -> RunConfig:
    meta = json.loads((Path(ckpt_dir) / "checkpoint.json").read_text())
    raw = meta.get("run_config")
    if raw is None:
        raise CliError(f"{ckpt_dir}/checkpoint.json has no run_config; "
                       "pass --config explicitly")
    return make_config(raw, overrides)


def cmd_train(args) -> int:
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = load_config(args.config, overrides)
    g = load_dataset(_data_dir(args.data))
    out = Path(args.out)
    tc = cfg.train_config()
    if args.resume:
        log = trainmod.resume(g, tc, out, config_hash=cfg.config_hash())
    else:
        log = trainmod.train(g, tc, out, config_hash=cfg.config_hash())
    # keep the full run config with the checkpoint so later stages can reuse it
    meta_path = out / "checkpoint.json"
    meta = json.loads(meta_path.read_text())
    meta["run_config"] = cfg.to_dict()
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    print(f"trained {cfg.mode}: best epoch {log.best_epoch} "
          f"infonce {log.best_infonce:.6f} -> {out}")
    return 0


def cmd_embed(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(args.checkpoint, _parse_overrides(args.set))
    g = load_dataset(_data_dir(args.data))
    samples = args.samples if args.samples is not None else cfg.eval_samples
    rng = rngmod.substream(args.seed if args.seed is not None else cfg.seed,
                           "eval-embed")
    E = extract_embeddings(ckpt, g, samples, rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_embeddings_tsv(out / "embeddings.tsv", E)
    print(f"wrote {out / 'embeddings.tsv'} ({E.matrix.shape[0]} x "
          f"{E.matrix.shape[1]}, {E.samples} samples)")
    return 0


def cmd_probe(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(args.checkpoint, _parse_overrides(args.set))
    g = load_dataset(_data_dir(args.data))
    runs = args.runs if args.runs is not None else cfg.eval_runs
    samples = args.samples if args.samples is not None else cfg.eval_samples
    rng = rngmod.substream(args.seed if args.seed is not None else cfg.seed,
                           "eval-embed")
    result = evaluate(ckpt, g, runs=runs, samples=samples, rng=rng,
                      standardize=args.standardize or cfg.standardize)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_probe_results(out / "probe_results.json", result)
    print(f"probe: {100 * result.mean:.2f} +/- {100 * result.stderr:.2f} "
          f"over {runs} splits -> {out / 'probe_results.json'}")
    return 0


def cmd_score(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _config_from_checkpoint(args.checkpoint, _parse_overrides(args.set))
    g = load_dataset(_data_dir(args.data))
    draws = args.draws if args.draws is not None else cfg.draws
    seed = args.seed if args.seed is not None else cfg.seed
    wanted = MEASURES if args.measure == "all" else (args.measure,)

    # 'all' on a deterministic checkpoint silently drops the weight-only
    # measures; asking for them explicitly is an error.
    if not ckpt.variational and args.measure in ("astd", "astd_norm"):
        raise CliError(f"{args.measure} is not applicable to a deterministic "
                       "encoder (no weight uncertainty)")
    if args.measure == "all" and not ckpt.variational:
        wanted = tuple(m for m in wanted if m not in ("astd", "astd_norm"))

    scores: list[unc.ScoreVector] = []
    lm = emb = None
    if any(m in ("cmds", "likelihood", "waic", "astd", "astd_norm")
           for m in wanted):
        rng = rngmod.substream(seed, "uncertainty")
        lm, emb = unc.collect_draws(ckpt, g, cfg.augment_config(),
                                    cfg.prior_config(), draws, rng,
                                    include_intra=cfg.include_intra,
                                    block_rows=cfg.block_rows)
    aug_emb = None
    if "psfv" in wanted:
        aug_emb = unc.collect_augmentation_embeddings(
            ckpt, g, cfg.augment_config(), draws,
            rngmod.substream(seed, "uncertainty-aug"))

    for m in wanted:
        if m == "cmds":
            scores.append(unc.cmds(lm))
        elif m == "likelihood":
            scores.append(unc.expected_likelihood(lm))
        elif m == "waic":
            scores.append(unc.waic(lm))
        elif m == "astd":
            scores.append(unc.astd(emb))
        elif m == "astd_norm":
            scores.append(unc.astd_norm(emb))
        elif m == "psfv":
            scores.append(unc.psfv(aug_emb))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    unc.write_scores_tsv(out / "scores.tsv", scores)
    print(f"wrote {out / 'scores.tsv'} with {', '.join(s.name for s in scores)} "
          f"({draws} draws)")
    return 0


def cmd_retention(args) -> int:
    scores = unc.read_scores_tsv(args.scores)
    by_name = {s.name: s for s in scores}
    if args.measure not in by_name:
        raise CliError(f"measure {args.measure!r} not present in {args.scores} "
                       f"(has: {', '.join(by_name)})")
    score = by_name[args.measure]
    if args.expect_orientation:
        expected = args.expect_orientation == "certain"
        if score.higher_is_certain != expected:
            raise CliError(
                f"orientation mismatch: {score.name} has higher=more "
                f"{'certain' if score.higher_is_certain else 'uncertain'} but "
                f"--expect-orientation {args.expect_orientation} was given")
    probe = load_probe_results(args.probe_result)
    split = probe["per_split"][args.split]
    curve = unc.retention_curve(score,
                                np.array(split["correct"], dtype=bool),
                                np.array(split["test_idx"], dtype=np.int64))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    unc.write_retention_csv(out / "retention.csv", curve)
    print(f"wrote {out / 'retention.csv'} ({args.measure}, split {args.split}, "
          f"final accuracy {curve.accuracies[-1]:.4f})")
    return 0


def cmd_reproduce(args) -> int:
    model = MODEL_ALIASES[args.model]
    preset = _presets_dir(args.presets) / f"{args.dataset}_{model}.json"
    if not preset.is_file():
        raise CliError(f"preset not found: {preset}")
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = load_config(preset, overrides)
    data_root = _data_dir(args.data)
    data = data_root / args.dataset if (data_root / args.dataset).is_dir() \
        else data_root
    g = load_dataset(data)
    out = Path(args.out)

    log = trainmod.train(g, cfg.train_config(), out,
                         config_hash=cfg.config_hash())
    meta_path = out / "checkpoint.json"
    meta = json.loads(meta_path.read_text())
    meta["run_config"] = cfg.to_dict()
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    ckpt = load_checkpoint(out)
    rng = rngmod.substream(cfg.seed, "eval-embed")
    result = evaluate(ckpt, g, runs=cfg.eval_runs, samples=cfg.eval_samples,
                      rng=rng, standardize=cfg.standardize)
    write_probe_results(out / "probe_results.json", result)
    E = extract_embeddings(ckpt, g, cfg.eval_samples,
                           rngmod.substream(cfg.seed, "eval-embed"))
    write_embeddings_tsv(out / "embeddings.tsv", E)

    lm, emb = unc.collect_draws(ckpt, g, cfg.augment_config(),
                                cfg.prior_config(), cfg.draws,
                                rngmod.substream(cfg.seed, "uncertainty"),
                                include_intra=cfg.include_intra,
                                block_rows=cfg.block_rows)
    scores = [unc.cmds(lm), unc.expected_likelihood(lm), unc.waic(lm)]
    if ckpt.variational:
        scores += [unc.astd(emb), unc.astd_norm(emb)]
    scores.append(unc.psfv(unc.collect_augmentation_embeddings(
        ckpt, g, cfg.augment_config(), cfg.draws,
        rngmod.substream(cfg.seed, "uncertainty-aug"))))
    unc.write_scores_tsv(out / "scores.tsv", scores)

    split0 = result.probes[0]
    curve = unc.retention_curve(scores[0], split0.correct, split0.test_idx)
    unc.write_retention_csv(out / "retention.csv", curve)

    print(f"{args.dataset} {model}: {100 * result.mean:.1f} +/- "
          f"{100 * result.stderr:.1f} (mean test accuracy, {cfg.eval_runs} "
          f"splits) | best epoch {log.best_epoch} | "
          f"cmds retention auc {unc.curve_area(curve):.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vgcl", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", action="store_true",
                   help="continue a stored run up to the configured epochs")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="write mean embeddings as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("probe", help="linear-probe accuracy over splits")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("score", help="uncertainty scores per node")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--measure", default="all", choices=("all",) + MEASURES)
    p.add_argument("--draws", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("retention", help="retention curve for one measure")
    p.add_argument("--scores", required=True)
    p.add_argument("--probe-result", required=True, dest="probe_result")
    p.add_argument("--out", required=True)
    p.add_argument("--measure", default="cmds")
    p.add_argument("--split", type=int, default=0)
    p.add_argument("--expect-orientation", choices=("certain", "uncertain"),
                   default=None)
    p.set_defaults(func=cmd_retention)

    p = sub.add_parser("reproduce",
                       help="train + probe + score + retention from a preset")
    p.add_argument("--dataset", required=True,
                   choices=("cora", "citeseer", "pubmed"))
    p.add_argument("--model", required=True, choices=tuple(MODEL_ALIASES))
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--presets", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_reproduce)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, DatasetError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (trainmod.NonFiniteLossError, ArithmeticError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
