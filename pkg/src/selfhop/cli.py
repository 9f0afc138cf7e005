"""Command-line entry points for running rounds and inspecting results.

Exit codes: 0 success, 2 usage, 3 configuration, 4 bad input data,
5 backend failure, 6 trainer failure, 7 run directory locked.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .backend import BackendError
from .controller import (
    ConfigError,
    LockError,
    TrainerError,
    check_manifest,
    eval_round,
    expand_stage,
    explore_stage,
    export_stage,
    init_seed,
    load_config,
    round_dir,
    run_round,
    tokens_round,
    train_stage,
)
from .datasets import DatasetError
from .protocol import ProtocolError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_BACKEND = 5
EXIT_TRAINER = 6
EXIT_LOCK = 7


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfhop",
        description="Iterative self-exploration for multi-hop question answering.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    seed = sub.add_parser("init-seed", help="sample a seed question set from source files")
    seed.add_argument("--source", action="append", required=True, dest="sources",
                      help="question JSONL file; repeat per source")
    seed.add_argument("--per-source", type=int, required=True,
                      help="questions sampled from each source")
    seed.add_argument("--seed", type=int, default=0, help="sampling seed")
    seed.add_argument("--out", required=True, help="output question JSONL")

    for name, help_text in (
        ("explore", "run the exploration stage of a round"),
        ("export-train", "emit training records from a round's traces"),
        ("train", "invoke the external trainer on a round's records"),
        ("expand", "generate next-round questions from this round's seeds"),
        ("run-round", "run explore, export, train, and expand in sequence"),
        ("report-tokens", "aggregate per-question token usage for a round"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="YAML run configuration")
        cmd.add_argument("--round", type=int, required=True, help="round index")

    ev = sub.add_parser("eval", help="score a round's final answers against golds")
    ev.add_argument("--config", required=True, help="YAML run configuration")
    ev.add_argument("--round", type=int, required=True, help="round index")
    ev.add_argument("--golds", default=None,
                    help="question JSONL carrying gold answers; defaults to the round's questions")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except TrainerError as exc:
        print(f"trainer error: {exc}", file=sys.stderr)
        return EXIT_TRAINER
    except LockError as exc:
        print(f"lock error: {exc}", file=sys.stderr)
        return EXIT_LOCK
    except (DatasetError, ProtocolError, FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def _dispatch(args) -> int:
    if args.command == "init-seed":
        questions = init_seed(args.sources, args.per_source, args.seed, args.out)
        print(f"wrote {len(questions)} questions to {args.out}")
        return EXIT_OK

    config = load_config(args.config)

    if args.command == "explore":
        state = explore_stage(config, args.round)
        print(f"round {args.round}: {state.status.value} ({state.traces_path})")
    elif args.command == "export-train":
        state = export_stage(config, args.round)
        print(f"round {args.round}: {state.status.value} "
              f"({state.dd_path}, {state.dr_path}, {state.dc_path})")
    elif args.command == "train":
        state = train_stage(config, args.round)
        print(f"round {args.round}: {state.status.value} (model {state.model_id})")
    elif args.command == "expand":
        state = expand_stage(config, args.round)
        suffix = state.next_questions_path or "expansion disabled"
        print(f"round {args.round}: {state.status.value} ({suffix})")
    elif args.command == "run-round":
        state = run_round(config, args.round)
        missing = check_manifest(round_dir(config.run_dir, args.round))
        if missing:
            print(f"round {args.round} incomplete, missing: {', '.join(missing)}",
                  file=sys.stderr)
            return EXIT_INPUT
        print(f"round {args.round}: {state.status.value}")
    elif args.command == "eval":
        report = eval_round(config, args.round, golds_path=args.golds)
        print(f"questions: {report.n}")
        print(f"accuracy:  {report.accuracy:.4f}")
        print(f"f1:        {report.f1:.4f}")
        print(f"em:        {report.em:.4f}")
        print(f"mean reasoning length: {report.mean_reasoning_length:.4f}")
    elif args.command == "report-tokens":
        report = tokens_round(config, args.round)
        print(f"questions: {report.n}")
        print(f"mean input tokens:  {report.mean_input_tokens:.2f}")
        print(f"mean output tokens: {report.mean_output_tokens:.2f}")
        print(f"mean model calls:   {report.mean_calls:.2f}")
    else:  # unreachable with required=True
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
