"""Command line entry point.

Subcommands:
  run     track a corpus end to end and write a report directory
  score   re-score an existing predictions file against gold
  stats   print corpus statistics
  budget  closed-form request budgets for a corpus
  refine  run the seed-prompt refinement loop against a backend

Configuration comes from an INI file (--config) with flags layered on
top; flags win. API credentials are never written to config files: set
the environment variable named by --api-key-env (default OPENDST_API_KEY).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .budget import comparison_rows, render_budget_text, write_budget_csv
from .datasets import corpus_stats
from .gateway import RequestLedger, default_sampling
from .pipeline import RunConfig, load_config, load_run_corpus, make_backend, run_pipeline, score_predictions
from .prompts import PromptStage, load_assets
from .refinery import refine_prompt

log = logging.getLogger(__name__)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI file with a [run] section")
    parser.add_argument("--dataset", choices=("multiwoz-2.1", "multiwoz-2.4", "sgd", "dump"))
    parser.add_argument("--data", help="dataset file or directory")
    parser.add_argument("--method", choices=("qa", "srp"))
    parser.add_argument("--domains", choices=("gold", "predicted"), help="domain label source")
    parser.add_argument("--backend", help="model name, mock:gold, or mock:empty")
    parser.add_argument("--model-key", help="prompt template key when it differs from the backend name")
    parser.add_argument("--endpoint", help="chat completions base URL")
    parser.add_argument("--api-key-env", help="environment variable holding the API key")
    parser.add_argument("--rpm", type=float, help="request rate limit per minute")
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--top-p", type=float, dest="top_p")
    parser.add_argument("--max-tokens", type=int, dest="max_tokens")
    parser.add_argument("--with-ontology", action="store_true", default=None)
    parser.add_argument("--no-extended-extraction", action="store_false", dest="extended_extraction", default=None)
    parser.add_argument("--no-dontcare-scan", action="store_false", dest="dontcare_scan", default=None)
    parser.add_argument("--limit", type=int, dest="dialogue_limit", help="track at most N dialogues")
    parser.add_argument("--seed", type=int, help="seed for dialogue subsampling")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--output", help="output directory")
    parser.add_argument("--force", action="store_true", default=None, help="overwrite a finished run")
    parser.add_argument("--no-figures", action="store_false", dest="figures", default=None)
    parser.add_argument("--audit", action="store_true", default=None, help="write raw prompt/response audit log")
    parser.add_argument("--max-history-chars", type=int, dest="max_history_chars")
    parser.add_argument("--fuzzy-threshold", type=float, dest="fuzzy_threshold")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    # Only names that are RunConfig fields (or their aliases) are config;
    # everything else on the namespace is command plumbing.
    allowed = {f.name for f in dataclasses.fields(RunConfig)} | {"data", "domains", "output"}
    overrides = {
        key: value for key, value in vars(args).items() if key in allowed and value is not None
    }
    return load_config(args.config, overrides)


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    report = run_pipeline(config)
    print(report.render_text())
    print(f"outputs in {config.output_dir}")
    return 0


def _cmd_score(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    corpus = load_run_corpus(config)
    report = score_predictions(args.predictions, corpus, threshold=config.fuzzy_threshold)
    print(report.render_text())
    if args.json:
        Path(args.json).write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    corpus = load_run_corpus(config)
    stats = corpus_stats(corpus)
    print(json.dumps(stats.to_dict(), sort_keys=True, indent=2))
    return 0


def _cmd_budget(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    corpus = load_run_corpus(config)
    stats = corpus_stats(corpus)
    rows = comparison_rows(stats, None, weighted=args.weighted)
    print(render_budget_text(rows))
    if args.csv:
        write_budget_csv(rows, args.csv)
        print(f"wrote {args.csv}")
    return 0


def _cmd_refine(args: argparse.Namespace) -> int:
    if getattr(args, "data", None) is None and args.config is None:
        args.data = "-"  # refinement runs on a fixture dialogue, no corpus needed
    config = _config_from_args(args)
    library = load_assets()
    stage = PromptStage(args.stage)
    seed = library.seed(stage).template
    corpus = load_run_corpus(config) if config.data_path not in ("", "-") else None
    backend = make_backend(config, corpus)
    ledger = RequestLedger()
    params = config.sampling() or default_sampling(config.effective_model_key, "dst")
    final, trace = refine_prompt(seed, backend, max_iters=args.max_iters, ledger=ledger, params=params)
    print(final)
    print(f"\n[{len(trace.iterations)} iterations, stop: {trace.stop_reason.value}, "
          f"{ledger.requests()} requests]", file=sys.stderr)
    if args.trace:
        Path(args.trace).write_text(
            json.dumps(trace.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opendst", description="Zero-shot dialogue state tracking toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="track a corpus end to end")
    _add_run_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_score = sub.add_parser("score", help="re-score a predictions file")
    _add_run_flags(p_score)
    p_score.add_argument("predictions", help="predictions.jsonl from a run")
    p_score.add_argument("--json", help="also write the report as JSON here")
    p_score.set_defaults(func=_cmd_score)

    p_stats = sub.add_parser("stats", help="print corpus statistics")
    _add_run_flags(p_stats)
    p_stats.set_defaults(func=_cmd_stats)

    p_budget = sub.add_parser("budget", help="closed-form request budgets")
    _add_run_flags(p_budget)
    p_budget.add_argument("--weighted", action="store_true", help="weight per-turn counts by each domain's slot count")
    p_budget.add_argument("--csv", help="write the comparison table here")
    p_budget.set_defaults(func=_cmd_budget)

    p_refine = sub.add_parser("refine", help="refine a seed prompt against a backend")
    _add_run_flags(p_refine)
    p_refine.add_argument("--stage", choices=[s.value for s in PromptStage], default="srp-tracking")
    p_refine.add_argument("--max-iters", type=int, default=5)
    p_refine.add_argument("--trace", help="write the refinement trace as JSON here")
    p_refine.set_defaults(func=_cmd_refine)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (FileExistsError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted; checkpoint retained", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
