"""Command-line entry point: ``alarmthresh <stage> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .pipeline import (
    StageError,
    run_pipeline,
    stage_evaluate,
    stage_features,
    stage_ingest,
    stage_label,
    stage_predict,
    stage_report,
    stage_synth,
    stage_train,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("alarmthresh")


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors raise instead of exiting, so main() owns exit codes."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI config file ([run], [train], [itransformer], [synth])")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value, e.g. --set train.max_epochs=10 (repeatable)")
    p.add_argument("--input-dir", help="raw input directory")
    p.add_argument("--work-dir", help="intermediate artifact directory (env ALARMTHRESH_WORK_DIR)")
    p.add_argument("--report-dir", help="report output directory")
    p.add_argument("--seed", type=int, help="global seed (default 42)")
    p.add_argument("--models", help="comma-separated subset of pctn,pctn_nogate,itransformer,naive, or 'all'")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="alarmthresh", description="Adaptive alarm-threshold engine")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    helps = {
        "synth": "generate synthetic alarm data into the input directory",
        "ingest": "parse snapshots (or a cell-day CSV) into work/celldays.csv",
        "features": "build the scaled 123-feature matrix with the time-ordered split",
        "label": "append the t1..t4 threshold labels, producing work/dataset.csv",
        "train": "train the selected neural models on the training dates",
        "predict": "write test-date predictions for the selected models",
        "evaluate": "write metrics, Wilcoxon, alpha and quantile-spread reports",
        "report": "write the data audit, label holdout check and summary",
        "pipeline": "run every stage in order",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        _common(p)
        if name == "synth":
            p.add_argument("--format", choices=("snapshots", "celldays"), help="emit snapshot files or a cell-day CSV")
        if name == "train":
            p.add_argument("--finetune", type=Path, metavar="CKPT", help="warm-start from this checkpoint instead")
            p.add_argument("--epochs", type=int, help="fine-tuning epochs (5..10)")
        if name == "pipeline":
            p.add_argument("--skip-synth", action="store_true", help="use the existing input directory as is")
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    for flag, key in (("input_dir", "run.input_dir"), ("work_dir", "run.work_dir"), ("report_dir", "run.report_dir"),
                      ("seed", "run.seed"), ("models", "run.models")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = str(value)
    if getattr(args, "format", None):
        out["run.synth_format"] = args.format
    if getattr(args, "epochs", None) is not None:
        out["run.finetune_epochs"] = str(args.epochs)
    return out


def run(args) -> None:
    cfg = load_config(args.config, _overrides(args))
    command = args.command
    if command == "synth":
        stage_synth(cfg)
    elif command == "ingest":
        stage_ingest(cfg)
    elif command == "features":
        stage_features(cfg)
    elif command == "label":
        stage_label(cfg)
    elif command == "train":
        stage_train(cfg, finetune_from=args.finetune)
    elif command == "predict":
        stage_predict(cfg)
    elif command == "evaluate":
        stage_evaluate(cfg)
    elif command == "report":
        stage_report(cfg)
    elif command == "pipeline":
        print(run_pipeline(cfg, skip_synth=args.skip_synth))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("no command given")
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        run(args)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error in stage {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - report any failure with the stage that raised it
        print(f"error in stage {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
