"""Command-line entry point.

Exit codes: 0 on success, 1 when a stage fails (the message names the stage
and cause), 2 when the config is invalid (the message lists every violation).
"""

from __future__ import annotations

import argparse
import logging
import sys

from adens import __version__
from adens.config import build_run_config, load_config
from adens.errors import AdensError, ConfigInvalid, MissingFile, StageFailed
from adens.pipeline import STAGES, run_command

EXIT_OK = 0
EXIT_STAGE_FAILED = 1
EXIT_CONFIG_INVALID = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adens",
        description=(
            "Stage dementia from brain MRI with a tri-plane DenseNet ensemble: "
            "generate or ingest a cohort, preprocess, split, train, predict, "
            "evaluate, and report."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "command",
        choices=(*STAGES, "pipeline"),
        help="stage to run; 'pipeline' chains all stages in order",
    )
    parser.add_argument("--config", required=True, help="path to the YAML/JSON run config")
    parser.add_argument(
        "--force", action="store_true", help="re-run even when outputs are up to date"
    )
    parser.add_argument(
        "--fold", type=int, default=None, help="restrict train/predict to one fold"
    )
    parser.add_argument(
        "--paper-mode",
        action="store_true",
        help="pin 5 folds, hard voting, and the three canonical pretrained variants",
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log stage progress to stderr"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        try:
            document = load_config(args.config)
        except MissingFile as exc:
            raise ConfigInvalid([str(exc)]) from exc
        rc = build_run_config(document, paper_mode=args.paper_mode)
        run_command(args.command, rc, force=args.force, fold=args.fold)
    except ConfigInvalid as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG_INVALID
    except StageFailed as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE_FAILED
    except AdensError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
