"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 data or file-format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .accounting import measure_size
from .checkpoint import checkpoint_meta, load_checkpoint, save_frozen
from .config import RunConfig, config_from_dict, load_config
from .embedding import Vocabulary
from .errors import ConfigError, DataError, FormatError
from .evaluation import NO_EE
from .harness import (ABLATIONS, DEFAULT_SWEEP, ablate_run, eval_run, load_datasets, load_model_and_vocab,
                      sweep_run, train_run)
from .model import BEExformer

SEED_ENV = "BEEX_SEED"
EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

log = logging.getLogger("beexformer")


def _deltas(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty threshold list")
    return values


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run config")
    common.add_argument("--seed", type=int, help=f"overrides ${SEED_ENV} and the config seed")
    common.add_argument("--delta", type=float, help="early-exit threshold on fractional entropy reduction")
    common.add_argument("--binarizer", choices=("b2", "clip"))
    common.add_argument("--slfn-rule", choices=("literal", "corrected"))
    common.add_argument("--no-ee", action="store_true", help="train or evaluate without early exits")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="beexformer", description="Binarized early-exit transformer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", parents=[common], help="build a vocabulary from the training split")
    p.add_argument("--out", required=True, help="output vocab.tsv")

    p = sub.add_parser("train", parents=[common], help="train and write latent + frozen checkpoints")
    p.add_argument("--out", default="runs/train", help="output directory")

    for name, text in (("eval", "evaluate a checkpoint with early exit"),
                       ("sweep", "evaluate a checkpoint across exit thresholds")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--vocab", help="vocab.tsv (default: the vocabulary stored in the checkpoint)")
        p.add_argument("--packed", action="store_true", help="frozen checkpoints only: XNOR-popcount path")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
    p.add_argument("--deltas", type=_deltas, default=list(DEFAULT_SWEEP), help="comma-separated thresholds")

    p = sub.add_parser("ablate", parents=[common], help="train and compare model variants")
    p.add_argument("--variants", nargs="+", choices=sorted(ABLATIONS),
                   help="default: all, or proposed + the --binarizer variant")
    p.add_argument("--out", default="runs/ablate", help="output directory")

    p = sub.add_parser("freeze", parents=[common], help="convert a latent checkpoint to a packed one")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--activations", choices=("b2", "sign"), default="b2")
    p.add_argument("--out", required=True, help="output checkpoint path")

    p = sub.add_parser("inspect", parents=[common], help="print a checkpoint's size ledger")
    p.add_argument("--checkpoint", required=True)
    return parser


def resolve_seed(flag: int | None, configured: int) -> int:
    """Flag beats the environment, which beats the config file."""
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return configured
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"${SEED_ENV} must be an integer, got {env!r}") from None


def resolve_config(args, base: RunConfig | None = None) -> RunConfig:
    cfg = load_config(args.config) if args.config or base is None else base
    model_changes = {}
    if args.binarizer:
        model_changes["binarizer"] = args.binarizer
    if args.slfn_rule:
        model_changes["slfn_rule"] = args.slfn_rule
    if args.no_ee and args.command in ("train", "ablate"):
        model_changes["early_exit"] = False
    train_changes = {"seed": resolve_seed(args.seed, cfg.train.seed)}
    if args.delta is not None:
        train_changes["delta"] = args.delta
    try:
        return dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, **model_changes),
                                   train=dataclasses.replace(cfg.train, **train_changes))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _stored_config(checkpoint) -> RunConfig | None:
    raw = checkpoint_meta(checkpoint).get("run_config")
    return config_from_dict(raw) if raw else None


def _print(payload) -> None:
    print(json.dumps(payload, indent=2))


def cmd_build_vocab(args) -> None:
    cfg = resolve_config(args)
    train_set, _ = load_datasets(cfg.data)
    vocab = Vocabulary.build(train_set.texts(), include_sep=train_set.is_pair)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    vocab.save(args.out)
    _print({"vocab": str(args.out), "size": vocab.size, "table_rows": vocab.table_rows})


def cmd_train(args) -> None:
    cfg = resolve_config(args)
    result, prep = train_run(cfg, args.out)
    _print({"out": str(args.out), "dataset": prep.dataset, "best_epoch": result.best_epoch,
            cfg.train.metric: result.best_metric, "epochs_run": len(result.reports)})


def _evaluation_setup(args):
    model, vocab = load_model_and_vocab(args.checkpoint, args.vocab)
    cfg = resolve_config(args, _stored_config(args.checkpoint))
    if args.packed and isinstance(model, BEExformer):
        raise ConfigError("--packed needs a frozen checkpoint")
    return model, vocab, cfg


def cmd_eval(args) -> None:
    model, vocab, cfg = _evaluation_setup(args)
    delta = NO_EE if args.no_ee else cfg.train.delta
    report, _ = eval_run(model, vocab, cfg, delta, args.out, packed=args.packed)
    summary = report.to_json()
    summary.pop("flops_convention")
    summary.pop("wee_flops")
    summary.pop("ee_flops")
    _print({"out": str(args.out), **summary})


def cmd_sweep(args) -> None:
    model, vocab, cfg = _evaluation_setup(args)
    reports = sweep_run(model, vocab, cfg, args.deltas, args.out, packed=args.packed)
    _print([{"delta": r.delta, "metric": r.metric, "mean_exit": r.mean_exit, "reduction": r.reduction}
            for r in reports])


def cmd_ablate(args) -> None:
    cfg = resolve_config(args)
    if args.variants:
        variants = args.variants
    elif args.binarizer == "clip":
        # --binarizer names the contender; the baseline stays b(r)
        cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, binarizer="b2"))
        variants = ["proposed", "clip"]
    else:
        variants = list(ABLATIONS)
    rows = ablate_run(cfg, variants, args.out)
    _print(rows)


def cmd_freeze(args) -> None:
    model = load_checkpoint(args.checkpoint)
    if not isinstance(model, BEExformer):
        raise ConfigError(f"{args.checkpoint} is already frozen")
    meta = checkpoint_meta(args.checkpoint)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_frozen(model.freeze(args.activations), args.out, meta)
    _print({"out": str(args.out), **measure_size(args.out).to_json()})


def cmd_inspect(args) -> None:
    ledger = measure_size(args.checkpoint)
    meta = checkpoint_meta(args.checkpoint)
    _print({"checkpoint": str(args.checkpoint), **ledger.to_json(),
            "meta": {k: v for k, v in meta.items() if k not in ("vocab", "run_config")}})


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "freeze": cmd_freeze,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
