"""Command-line entry point wiring the pipeline stages into subcommands."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, default_config, load_config
from .pipeline import (
    MissingArtifactError,
    run_augment,
    run_decode,
    run_eval,
    run_gen_corpus,
    run_reproduce,
    run_train,
)


class UsageError(ValueError):
    """Bad command-line input; exits with status 2."""


def _parse_far_range(text: str) -> tuple[float, float]:
    try:
        lo_text, hi_text = text.split(",")
        lo, hi = float(lo_text), float(hi_text)
    except ValueError as exc:
        raise UsageError(f"--far-range expects 'low,high', got {text!r}") from exc
    if not (lo < hi):
        raise UsageError(f"--far-range must satisfy low < high, got [{lo}, {hi}]")
    return lo, hi


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment TOML (defaults apply if omitted)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, default=Path("runs/default"), help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers where supported")

    parser = argparse.ArgumentParser(
        prog="kwskit",
        description="Keyword-spotting robustness experiments: corpus synthesis, "
        "SIR-controlled corruption, DNN-HMM training/decoding, DET/AUC evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-corpus", parents=[common], help="render the clean corpus and interference audio")
    p_aug = sub.add_parser("augment", parents=[common], help="corrupt one split under a named spec")
    p_aug.add_argument("--spec", required=True, help="augmentation spec name from the config")
    p_train = sub.add_parser("train", parents=[common], help="train an acoustic model on a corpus")
    p_train.add_argument("--corpus", required=True, help="'clean' or an augmentation spec name")
    p_train.add_argument(
        "--realign",
        action="store_true",
        help="retrain on forced-alignment targets from a bootstrap model",
    )
    p_dec = sub.add_parser("decode", parents=[common], help="decode a test condition with a model")
    p_dec.add_argument("--model", required=True, help="model name (training corpus name)")
    p_dec.add_argument("--condition", required=True, help="'clean' or the test condition name")
    p_eval = sub.add_parser("eval", parents=[common], help="DET curves, AUC table, plots")
    p_eval.add_argument("--far-range", help="AUC FAR window as 'low,high'")
    sub.add_parser("reproduce", parents=[common], help="run the whole experiment end to end")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        config.seed = args.seed
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load(args)
        out = args.out
        if args.command == "gen-corpus":
            run_gen_corpus(config, out)
        elif args.command == "augment":
            run_augment(config, out, args.spec, jobs=args.jobs)
        elif args.command == "train":
            run_train(config, out, args.corpus, realign=args.realign)
        elif args.command == "decode":
            run_decode(config, out, args.model, args.condition)
        elif args.command == "eval":
            far_range = _parse_far_range(args.far_range) if args.far_range else None
            result = run_eval(config, out, far_range)
            sys.stdout.write(result["summary_text"])
        elif args.command == "reproduce":
            result = run_reproduce(config, out, jobs=args.jobs)
            sys.stdout.write(result["summary_text"])
    except UsageError as exc:
        _emit_error(args.command, exc)
        return 2
    except (MissingArtifactError, KeyError, ValueError, OSError, RuntimeError) as exc:
        _emit_error(args.command, exc)
        return 1
    return 0


def _emit_error(command: str, exc: Exception) -> None:
    payload = {"command": command, "error": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(payload) + "\n")


if __name__ == "__main__":
    sys.exit(main())
