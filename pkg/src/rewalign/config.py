"""Key-value experiment config files with command-line overrides.

A config file is flat ``key = value`` text; ``#`` starts a comment.
Pipeline settings use a ``pipeline.`` prefix and learner settings
``learner.<method>.``, e.g.::

    env = fourrooms
    demo_counts = 2, 5, 10
    pipeline.max_clusters = 15
    learner.align.learning_rate = 0.1
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidInputError
from .harness import ExperimentConfig, default_pipeline
from .learning import METHODS, LearnerConfig

OUTPUT_ENV = "REWALIGN_OUTPUT"


@dataclass
class RunOptions:
    """Settings of the single-run subcommands."""

    n_demos: int = 5
    seed: int = 0
    method: str = "align"
    test_episodes: int = 0


@dataclass
class Config:
    experiment: ExperimentConfig
    run: RunOptions = field(default_factory=RunOptions)

    @property
    def output_dir(self) -> Path:
        return Path(self.experiment.output_dir)


def _coerce(text: str, current, name: str):
    text = text.strip()
    try:
        if isinstance(current, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(current, tuple):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if current and isinstance(current[0], int):
                return tuple(int(p) for p in parts)
            return tuple(parts)
        if current is None:
            if text.lower() in ("", "none"):
                return None
            try:
                return float(text)
            except ValueError:
                return text
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        return text
    except ValueError:
        raise InvalidInputError(f"bad value {text!r} for {name}") from None


def _set(obj, key: str, text: str, prefix: str):
    names = {f.name for f in dataclasses.fields(obj)}
    if key not in names:
        raise InvalidInputError(f"unknown config key {prefix}{key}")
    if key in _PATH_KEYS:
        setattr(obj, key, text.strip() or None)
        return
    setattr(obj, key, _coerce(text, getattr(obj, key), prefix + key))


_PATH_KEYS = ("output_dir",)


def parse_pairs(text: str) -> dict[str, str]:
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    cp.read_string("[config]\n" + text)
    return dict(cp["config"])


def build_config(pairs: dict[str, str]) -> Config:
    """Turn flat key-value pairs into validated config objects."""
    exp = {}
    pipe = {}
    learners: dict[str, dict[str, str]] = {}
    run = RunOptions()
    for key, value in pairs.items():
        if key.startswith("pipeline."):
            pipe[key[len("pipeline."):]] = value
        elif key.startswith("learner."):
            _, method, name = (key.split(".", 2) + ["", ""])[:3]
            if method not in METHODS or not name:
                raise InvalidInputError(f"bad learner key {key}")
            learners.setdefault(method, {})[name] = value
        elif key.startswith("run."):
            _set(run, key[len("run."):], value, "run.")
        else:
            exp[key] = value

    base = ExperimentConfig.__new__(ExperimentConfig)
    for f in dataclasses.fields(ExperimentConfig):
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        setattr(base, f.name, default)
    for key, value in exp.items():
        if key in ("pipeline", "learners"):
            raise InvalidInputError(f"use prefixed keys for {key}")
        _set(base, key, value, "")

    pipeline = default_pipeline(base.env)
    for key, value in pipe.items():
        _set(pipeline, key, value, "pipeline.")
    pipeline = dataclasses.replace(pipeline)  # re-validate

    lcfgs = {}
    for method, values in learners.items():
        lc = LearnerConfig.default(method)
        for key, value in values.items():
            _set(lc, key, value, f"learner.{method}.")
        lcfgs[method] = dataclasses.replace(lc)

    root = os.environ.get(OUTPUT_ENV)
    out = base.output_dir if base.output_dir is not None else "rewalign-out"
    if root and not Path(out).is_absolute():
        out = str(Path(root) / out)

    kwargs = {f.name: getattr(base, f.name) for f in dataclasses.fields(ExperimentConfig)}
    kwargs.update(pipeline=pipeline, learners=lcfgs, output_dir=out)
    experiment = ExperimentConfig(**kwargs)
    if run.method not in METHODS:
        raise InvalidInputError(f"unknown method {run.method!r}")
    if run.n_demos < 1:
        raise InvalidInputError("run.n_demos must be positive")
    return Config(experiment, run)


def load_config(path: str | Path | None, overrides: list[str] | tuple[str, ...] = ()) -> Config:
    """Read a config file (optional) and apply ``key=value`` overrides."""
    pairs: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise InvalidInputError(f"config file {p} does not exist")
        pairs.update(parse_pairs(p.read_text()))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise InvalidInputError(f"override {item!r} is not key=value")
        pairs[key.strip()] = value.strip()
    return build_config(pairs)
