"""Run configuration: an INI-style key/value file with command-line overrides.

Example::

    [run]
    input_dir = input
    work_dir = work
    report_dir = reports
    seed = 42
    models = all
    n_test_dates = 3

    [train]
    max_epochs = 60
    lr = 0.001

    [itransformer]
    samples_per_epoch = 256

    [synth]
    n_cells = 500
    n_days = 10
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .synth import SynthConfig
from .training import ITRANSFORMER_TRAIN_DEFAULTS, TrainConfig

WORK_DIR_ENV = "ALARMTHRESH_WORK_DIR"
MODEL_KINDS = ("pctn", "pctn_nogate", "itransformer", "naive")
SYNTH_FORMATS = ("snapshots", "celldays")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    input_dir: Path = Path("input")
    work_dir: Path = Path("work")
    report_dir: Path = Path("reports")
    seed: int = 42
    models: tuple[str, ...] = MODEL_KINDS
    n_test_dates: int = 3
    synth_format: str = "snapshots"
    finetune_epochs: int = 0
    train: dict = field(default_factory=dict)
    itransformer: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)

    def __post_init__(self):
        dirs = [Path(self.input_dir).resolve(), Path(self.work_dir).resolve(), Path(self.report_dir).resolve()]
        if len(set(dirs)) != 3:
            raise ConfigError("input, work and report directories must be distinct")
        unknown = [m for m in self.models if m not in MODEL_KINDS]
        if unknown or not self.models:
            raise ConfigError(f"unknown model kinds {unknown}; choose from {', '.join(MODEL_KINDS)} or 'all'")
        if self.n_test_dates < 1:
            raise ConfigError("n_test_dates must be at least 1")
        if self.synth_format not in SYNTH_FORMATS:
            raise ConfigError(f"synth_format must be one of {SYNTH_FORMATS}")
        if self.finetune_epochs and not 5 <= self.finetune_epochs <= 10:
            raise ConfigError("finetune_epochs must be 0 (off) or between 5 and 10")
        # validate eagerly so that bad values fail before any stage runs
        self.train_config()
        self.itransformer_config()
        self.synth_config()

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(**{"seed": self.seed, **self.train})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[train]: {exc}") from exc

    def itransformer_config(self) -> TrainConfig:
        try:
            return TrainConfig(**{**ITRANSFORMER_TRAIN_DEFAULTS, "seed": self.seed, **self.itransformer})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[itransformer]: {exc}") from exc

    def synth_config(self) -> SynthConfig:
        try:
            return SynthConfig.from_mapping({"seed": str(self.seed), **self.synth})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[synth]: {exc}") from exc

    def echo(self) -> dict:
        return {
            "input_dir": str(self.input_dir),
            "work_dir": str(self.work_dir),
            "report_dir": str(self.report_dir),
            "seed": self.seed,
            "models": list(self.models),
            "n_test_dates": self.n_test_dates,
            "synth_format": self.synth_format,
            "finetune_epochs": self.finetune_epochs,
            "train": self.train_config().to_dict(),
            "itransformer": self.itransformer_config().to_dict(),
            "synth": {k: str(v) for k, v in sorted(self.synth.items())},
        }


_INT_KEYS = {"max_epochs", "batch_size", "patience", "samples_per_epoch", "val_samples", "hours_per_group", "seed"}
_FLOAT_KEYS = {"lr", "lr_min", "weight_decay", "val_fraction"}


def _train_value(key: str, raw: str):
    raw = raw.strip()
    if key in _INT_KEYS:
        return None if raw.lower() in ("", "none") else int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    raise ConfigError(f"unknown training option {key!r}")


def parse_models(text: str) -> tuple[str, ...]:
    text = text.strip()
    if text == "all":
        return MODEL_KINDS
    return tuple(m.strip() for m in text.split(",") if m.strip())


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (optional) and apply ``overrides`` given as ``section.key -> value`` strings."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.rpartition(".")
        section = section or "run"
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, str(value))
    unknown = set(parser.sections()) - {"run", "train", "itransformer", "synth"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    run = dict(parser["run"]) if parser.has_section("run") else {}
    kwargs: dict = {}
    try:
        for key, value in run.items():
            if key in ("input_dir", "work_dir", "report_dir"):
                kwargs[key] = Path(value)
            elif key in ("seed", "n_test_dates", "finetune_epochs"):
                kwargs[key] = int(value)
            elif key == "models":
                kwargs[key] = parse_models(value)
            elif key == "synth_format":
                kwargs[key] = value.strip()
            else:
                raise ConfigError(f"unknown [run] option {key!r}")
        for section in ("train", "itransformer"):
            if parser.has_section(section):
                kwargs[section] = {k: _train_value(k, v) for k, v in parser[section].items()}
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if parser.has_section("synth"):
        kwargs["synth"] = dict(parser["synth"])
    env_work = os.environ.get(WORK_DIR_ENV)
    if env_work and "run.work_dir" not in (overrides or {}):
        kwargs["work_dir"] = Path(env_work)
    return RunConfig(**kwargs)


def with_models(cfg: RunConfig, models: tuple[str, ...]) -> RunConfig:
    return replace(cfg, models=models)
