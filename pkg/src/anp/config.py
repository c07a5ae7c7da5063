"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment.  Unknown keys are
rejected.  Recognised keys and defaults:

model
    ``d`` (128), ``attention`` (uniform | laplace | dot_product | multihead),
    ``heads`` (8), ``self_attention_layers`` (0)
training
    ``dataset`` (gp_fixed | gp_random | synthetic | mnist), ``iterations``,
    ``batch_size`` (16), ``learning_rate`` (5e-5), ``seed``,
    ``eval_interval``, ``eval_episodes`` (64), ``checkpoint_interval``
    (0: final only), ``log_wall_clock`` (false)
data
    ``max_points`` (100 for GP, 200 for images, capped at the pixel count),
    ``mnist_path``, ``synthetic_count``, ``synthetic_size``, ``synthetic_seed``
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .model import ModelConfig

DATASETS = ("gp_fixed", "gp_random", "synthetic", "mnist")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: str = "gp_fixed"
    iterations: int = 1000
    batch_size: int = 16
    learning_rate: float = 5e-5
    seed: int = 0
    eval_interval: int = 100
    eval_episodes: int = 64
    checkpoint_interval: int = 0
    log_wall_clock: bool = False
    max_points: int = 0
    mnist_path: str = ""
    synthetic_count: int = 1000
    synthetic_size: int = 8
    synthetic_seed: int = 0

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.iterations < 0 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise ConfigError("iterations >= 0, eval_interval >= 1 and eval_episodes >= 1 required")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be >= 0")
        if self.dataset == "mnist" and not self.mnist_path:
            raise ConfigError("dataset = mnist needs mnist_path")

    @property
    def is_image(self) -> bool:
        return self.dataset in ("synthetic", "mnist")


_MODEL_KEYS = ("d", "attention", "heads", "self_attention_layers")
_TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "model")
KEYS = _MODEL_KEYS + _TRAIN_KEYS


def _convert(key: str, raw: str, template):
    if isinstance(template, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def parse_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = value
    return values


def build(values: dict[str, str], overrides: dict | None = None) -> TrainConfig:
    """Resolve raw key/value strings (and already-typed overrides) into a TrainConfig."""
    merged = {**values, **(overrides or {})}
    unknown = sorted(set(merged) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}")
    base_model = ModelConfig()
    defaults = {f.name: f.default for f in fields(TrainConfig) if f.name != "model"}
    model_kw, train_kw = {}, {}
    for key, raw in merged.items():
        if key in _MODEL_KEYS:
            template = getattr(base_model, key)
            model_kw[key] = raw if not isinstance(raw, str) else _convert(key, raw, template)
        else:
            template = defaults[key]
            train_kw[key] = raw if not isinstance(raw, str) else _convert(key, raw, template)
    dataset = train_kw.get("dataset", defaults["dataset"])
    if dataset in ("synthetic", "mnist"):
        model_kw.setdefault("d_x", 2)
    try:
        model = ModelConfig(**model_kw)
        return TrainConfig(model=model, **train_kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load(path, overrides: dict | None = None) -> TrainConfig:
    with open(path) as f:
        return build(parse_text(f.read()), overrides)


def loads(text: str, overrides: dict | None = None) -> TrainConfig:
    return build(parse_text(text), overrides)


def dumps(config: TrainConfig) -> str:
    """Canonical text form; ``loads(dumps(c)) == c``."""
    lines = []
    for key in _MODEL_KEYS:
        lines.append(f"{key} = {getattr(config.model, key)}")
    for key in _TRAIN_KEYS:
        value = getattr(config, key)
        if isinstance(value, float):
            value = repr(value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
