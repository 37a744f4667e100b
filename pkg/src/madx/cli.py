"""Command-line entry point: ``madx <command> [--config PATH] [--seed N] [--registry DIR] [--out DIR]``."""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace

from .adapters import ConfigError
from .experiment import (BASELINES, VARIANT_LABELS, VARIANTS, ExperimentConfig, MissingArtifact, cmd_baseline,
                         cmd_count_params, cmd_gen_corpus, cmd_matrix, cmd_pretrain_base, cmd_train_lang,
                         cmd_train_task, cmd_transfer_eval, format_grid)
from .registry import ArtifactFormatError, IncompatibleArtifact
from .transformer import VocabularyError


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {k: getattr(args, k) for k in ("seed", "registry", "out") if getattr(args, k) is not None}
    return replace(cfg, **overrides) if overrides else cfg


def _scores(scores: dict[str, dict[str, float]]) -> str:
    return "\n".join(f"{t:8s} accuracy {100 * s['accuracy']:6.2f}"
                     + (f"  f1 {100 * s['f1']:6.2f}" if "f1" in s else "") for t, s in scores.items())


VARIANT_NAMES = {label: v for v, label in VARIANT_LABELS.items()}


def _variant(value: str) -> str:
    if value in VARIANT_NAMES:
        return VARIANT_NAMES[value]
    if value in VARIANTS:
        return value
    raise argparse.ArgumentTypeError(f"unknown variant {value!r}; choose from {sorted(VARIANT_NAMES)}")


def _list(value: str | None):
    return [v for v in value.split(",") if v] if value else None


def run(args) -> int:
    if args.command == "init-config":
        text = ExperimentConfig().to_json() + "\n"
        if args.path:
            with open(args.path, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return 0
    if args.command == "count-params":
        cfg = _config(args) if args.config else None
        if args.base_size:
            cfg, h, layers, base = None, 768, 12, 270_000_000
        else:
            h, layers, base = args.h, args.layers, args.base_params
        for line in cmd_count_params(cfg, h, layers, base, include_biases=not args.no_bias):
            print(line)
        return 0

    cfg = _config(args)
    t0 = time.perf_counter()
    if args.command == "gen-corpus":
        for p in cmd_gen_corpus(cfg):
            print(p)
    elif args.command == "pretrain-base":
        print(cmd_pretrain_base(cfg))
    elif args.command == "train-lang":
        for lid in _list(args.language) or cfg.language_ids:
            for p in cmd_train_lang(cfg, lid, invertible=not args.no_invertible):
                print(p)
    elif args.command == "train-task":
        for src in _list(args.source) or [cfg.source_language]:
            print(cmd_train_task(cfg, src, args.variant))
    elif args.command == "transfer-eval":
        print(_scores(cmd_transfer_eval(cfg, args.source, _list(args.targets), args.variant)))
    elif args.command == "baseline":
        print(_scores(cmd_baseline(cfg, args.mode, args.source, args.target, _list(args.targets))))
    elif args.command == "matrix":
        targets = _list(args.targets) or cfg.language_ids
        grid = cmd_matrix(cfg, _list(args.sources), targets, args.variant, args.metric)
        sys.stdout.write(format_grid(grid, targets))
    print(f"[{args.command}] done in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON (unknown keys are rejected)")
    common.add_argument("--seed", type=int, help="training seed (overrides the config)")
    common.add_argument("--registry", help="artifact directory (overrides the config)")
    common.add_argument("--out", help="output directory for corpora, metrics, and scores")

    parser = argparse.ArgumentParser(prog="madx", description="Modular adapter transfer at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-config", parents=[common], help="print or write the default config")
    p.add_argument("path", nargs="?")
    sub.add_parser("gen-corpus", parents=[common], help="generate synthetic corpora and task data")
    sub.add_parser("pretrain-base", parents=[common], help="MLM-pretrain the base on seen languages")

    p = sub.add_parser("train-lang", parents=[common], help="train language (+invertible) adapters")
    p.add_argument("--language", help="comma-separated ids (default: all languages)")
    p.add_argument("--no-invertible", action="store_true", help="train the -inv ablation")

    p = sub.add_parser("train-task", parents=[common], help="train a task adapter on a source language")
    p.add_argument("--source", help="comma-separated source ids (default: config source)")
    p.add_argument("--variant", type=_variant, default="full", help="full | no-inv | task-only")

    p = sub.add_parser("transfer-eval", parents=[common], help="zero-shot evaluation with swapped adapters")
    p.add_argument("--source")
    p.add_argument("--targets", help="comma-separated target ids (default: all)")
    p.add_argument("--variant", type=_variant, default="full", help="full | no-inv | task-only")

    p = sub.add_parser("baseline", parents=[common], help="full-model transfer baselines")
    p.add_argument("--mode", choices=BASELINES, required=True)
    p.add_argument("--source")
    p.add_argument("--target", help="target language (required for mlm_trg_finetune)")
    p.add_argument("--targets", help="comma-separated evaluation languages")

    p = sub.add_parser("count-params", parents=[common], help="adapter parameter budget")
    p.add_argument("--base-size", action="store_true", help="h=768, L=12, base 270M (the default)")
    p.add_argument("--h", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--base-params", type=int)
    p.add_argument("--no-bias", action="store_true", help="count weight matrices only")

    p = sub.add_parser("matrix", parents=[common], help="score every (source, target) pair")
    p.add_argument("--sources")
    p.add_argument("--targets")
    p.add_argument("--variant", type=_variant, default="full", help="full | no-inv | task-only")
    p.add_argument("--metric", choices=("accuracy", "f1"), default="accuracy")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (MissingArtifact, IncompatibleArtifact, ArtifactFormatError, ConfigError, VocabularyError) as exc:
        print(f"madx {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except AssertionError as exc:
        print(f"madx {args.command}: assertion failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
