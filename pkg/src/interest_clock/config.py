"""Experiment configuration: one INI file, one section per stage.

    [experiment]  seed, strategies, out_dir
    [generator]   GeneratorConfig fields
    [features]    window_days, alpha, beta, gamma, omega
    [model]       embedding_dim, hidden, n_user_buckets, n_item_buckets
    [optim]       lr, init_acc
    [clock]       strategy, sigma, mu, integer_hours
    [eval]        warmup_days, test_days, telemetry_every

Values are Python literals (``64, 32`` is a tuple); anything that does not
parse as a literal is kept as a string. ``--set section.key=value`` on the
command line overrides the file.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .clock import STRATEGIES, ClockStrategy
from .feature_store import ScoreWeights
from .stream import GeneratorConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    window_days: int = 30
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 1.0
    omega: float = 2.0

    @property
    def weights(self) -> ScoreWeights:
        return ScoreWeights(self.alpha, self.beta, self.gamma, self.omega)


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 8
    hidden: tuple[int, ...] = (64, 32)
    n_user_buckets: int = 2 ** 16
    n_item_buckets: int = 2 ** 16


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.05
    init_acc: float = 0.1


@dataclass(frozen=True)
class ClockConfig:
    strategy: str = "gaussian"
    sigma: float = 1.0
    mu: float = 0.0
    integer_hours: bool = False


@dataclass(frozen=True)
class EvalConfig:
    warmup_days: int = 30
    test_days: int = 4
    telemetry_every: int = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    clock: ClockConfig = field(default_factory=ClockConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    strategies: tuple[str, ...] = STRATEGIES
    out_dir: str = "out"

    def __post_init__(self):
        if not self.strategies:
            raise ConfigError("experiment.strategies must not be empty")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r} in experiment.strategies")
        if self.eval.warmup_days < 0 or self.eval.test_days < 1:
            raise ConfigError("eval.warmup_days must be >= 0 and eval.test_days >= 1")
        if self.eval.warmup_days + self.eval.test_days >= self.generator.days:
            raise ConfigError("generator.days leaves no training days after warm-up and test")
        if self.eval.telemetry_every < 1:
            raise ConfigError("eval.telemetry_every must be >= 1")

    @property
    def first_test_day(self) -> int:
        return self.generator.days - self.eval.test_days

    def clock_strategy(self, kind: str | None = None) -> ClockStrategy:
        c = self.clock
        return ClockStrategy(kind or c.strategy, c.sigma, c.mu, c.integer_hours)

    def estimator_params(self, kind: str | None = None) -> dict:
        f, m, o, c = self.features, self.model, self.optim, self.clock
        return dict(strategy=kind or c.strategy, sigma=c.sigma, mu=c.mu, integer_hours=c.integer_hours,
                    embedding_dim=m.embedding_dim, hidden=tuple(m.hidden), lr=o.lr, init_acc=o.init_acc,
                    score_weights=(f.alpha, f.beta, f.gamma, f.omega), window_days=f.window_days,
                    warmup_days=self.eval.warmup_days, n_user_buckets=m.n_user_buckets,
                    n_item_buckets=m.n_item_buckets, vocab=self.generator.vocab,
                    telemetry_every=self.eval.telemetry_every, random_state=self.seed)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()


_SECTIONS = {
    "generator": GeneratorConfig,
    "features": FeatureConfig,
    "model": ModelConfig,
    "optim": OptimConfig,
    "clock": ClockConfig,
    "eval": EvalConfig,
}
_EXPERIMENT_KEYS = ("seed", "strategies", "out_dir")


def _coerce(section, key, raw, default):
    if isinstance(default, str):
        return raw.strip()
    try:
        value = ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        value = raw.strip()
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                value = {"true": True, "false": False, "yes": True, "no": False}[value.lower()]
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if not isinstance(value, int):
                raise TypeError
            return value
        if isinstance(default, float):
            if not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = tuple(v.strip() for v in value.split(",") if v.strip())
            return tuple(value) if isinstance(value, (tuple, list)) else (value,)
        return str(value)
    except (TypeError, KeyError):
        raise ConfigError(f"{section}.{key}: cannot use {raw!r} "
                          f"(expected {type(default).__name__})") from None


def _parse_override(text: str) -> tuple[str, str, str]:
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    lhs, value = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section.strip(), key.strip(), value


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read an INI config (or the defaults when ``path`` is None) and apply overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for text in overrides:
        section, key, value = _parse_override(text)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)

    defaults = ExperimentConfig()
    top = {}
    parts = {}
    for section in parser.sections():
        if section == "experiment":
            for key, raw in parser.items(section):
                if key not in _EXPERIMENT_KEYS:
                    raise ConfigError(f"unknown key experiment.{key}")
                top[key] = _coerce(section, key, raw, getattr(defaults, key))
            continue
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigError(f"unknown config section [{section}]")
        base = getattr(defaults, section)
        values = {}
        for key, raw in parser.items(section):
            if not hasattr(base, key):
                raise ConfigError(f"unknown key {section}.{key}")
            values[key] = _coerce(section, key, raw, getattr(base, key))
        parts[section] = values
    seed = top.get("seed", defaults.seed)
    try:
        gen = dict(parts.pop("generator", {}))
        gen.setdefault("seed", seed)
        built = {name: cls(**parts.get(name, {})) for name, cls in _SECTIONS.items() if name != "generator"}
        return ExperimentConfig(generator=GeneratorConfig(**gen), **built, **top)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that loads back to ``cfg``."""
    lines = ["[experiment]"]
    for key in _EXPERIMENT_KEYS:
        lines.append(f"{key} = {_literal(getattr(cfg, key))}")
    for name in _SECTIONS:
        lines += ["", f"[{name}]"]
        for f in dataclasses.fields(getattr(cfg, name)):
            lines.append(f"{f.name} = {_literal(getattr(getattr(cfg, name), f.name))}")
    return "\n".join(lines) + "\n"


def _literal(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value) + ("," if len(value) == 1 else "")
    if isinstance(value, str):
        return value
    return repr(value)
