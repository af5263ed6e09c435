"""Command-line front end.

Four commands drive the whole experiment: `synth` writes a dataset,
`train` fits every (fold, modality) job, `eval` produces metrics, fusion
reports, and figures, and `report` re-renders figures from the CSVs.

One TOML/JSON config file can drive everything; flags override individual
keys. The `UBP_SEED` environment variable supplies the seed when neither
a flag nor the config does. Exit codes: 0 success, 2 configuration error,
3 missing or unusable input, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import (ConfigurationError, MissingInputError, NumericalError,
                     UbpError)
from . import workflow

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--workdir", help="base directory for all paths")
    parser.add_argument("--seed", type=int, help="global random seed")
    parser.add_argument("--dataset", dest="dataset_dir",
                        help="dataset directory (relative to --workdir)")
    parser.add_argument("--run", dest="run_dir",
                        help="run directory (relative to --workdir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ubp",
        description="Uncertainty-aware blood-pressure estimation pipeline "
                    "on synthetic physiological data.")
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="generate a synthetic dataset")
    _add_common(synth)
    synth.add_argument("--subjects", type=int, help="number of subjects")
    synth.add_argument("--sessions", type=int, nargs=2, metavar=("LO", "HI"),
                       help="inclusive sessions-per-subject range")

    train = commands.add_parser("train", help="train all folds and modalities")
    _add_common(train)
    train.add_argument("--modalities",
                       help="comma-separated subset of rppg,ppg,img")
    train.add_argument("--epochs", type=int, help="training epochs")
    train.add_argument("--folds", type=int, help="cross-validation folds")
    train.add_argument("--workers", type=int, help="parallel training jobs")
    train.add_argument("--init-from", dest="init_from",
                       help="run directory with checkpoints to fine-tune from")

    evaluate = commands.add_parser("eval", help="evaluate a trained run")
    _add_common(evaluate)
    evaluate.add_argument("--report-only", action="store_true",
                          help="regenerate figures from existing CSVs")

    rep = commands.add_parser("report", help="re-render figures from CSVs")
    _add_common(rep)
    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    overrides = {
        "workdir": getattr(args, "workdir", None),
        "seed": getattr(args, "seed", None),
        "dataset_dir": getattr(args, "dataset_dir", None),
        "run_dir": getattr(args, "run_dir", None),
        "subjects": getattr(args, "subjects", None),
        "workers": getattr(args, "workers", None),
        "init_from": getattr(args, "init_from", None),
    }
    sessions = getattr(args, "sessions", None)
    if sessions is not None:
        overrides["sessions"] = tuple(sessions)
    modalities = getattr(args, "modalities", None)
    if modalities is not None:
        overrides["modalities"] = tuple(m.strip() for m in modalities.split(","))
    training = {}
    if getattr(args, "epochs", None) is not None:
        training["epochs"] = args.epochs
    if getattr(args, "folds", None) is not None:
        training["fold_count"] = args.folds
    if training:
        overrides["training"] = training
    return overrides


def _default_config_path(args: argparse.Namespace):
    """eval/report default to the resolved config written by `train`."""
    if args.config is not None or args.command not in ("eval", "report"):
        return args.config
    from pathlib import Path

    workdir = args.workdir or "."
    candidate = Path(workdir) / (args.run_dir or "run") / "resolved_config.json"
    return str(candidate) if candidate.exists() else None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = workflow.resolve_config(_default_config_path(args),
                                         _overrides_from_args(args))
        if args.command == "synth":
            summary = workflow.run_synth(config)
        elif args.command == "train":
            summary = workflow.run_train(config)
        elif args.command == "eval":
            summary = workflow.run_eval(config, report_only=args.report_only)
        else:
            summary = workflow.run_report(config)
    except ConfigurationError as error:
        print(f"configuration error: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as error:
        print(f"input error: {error}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as error:
        print(f"numerical failure: {error}", file=sys.stderr)
        return EXIT_NUMERIC
    except UbpError as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as error:
        print(f"I/O error: {error}", file=sys.stderr)
        return EXIT_MISSING
    print(json.dumps(summary, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
