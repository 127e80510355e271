"""Run configuration: a flat TOML file plus ``--set key=value`` overrides."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .backbone import ConfigError, ModelConfig
from .data import SplitSpec
from .training import TrainConfig

OUT_ENV = "GRUNET_OUT"


@dataclass
class RunConfig:
    # data
    data_dir: str = ""
    predefined_split: bool = False
    synthetic_n: int = 0
    synthetic_size: int = 64
    synthetic_seed: int = 0
    train_frac: float = 0.7
    val_frac: float = 0.2
    test_frac: float = 0.1
    # text
    labels_path: str = ""
    embeddings_path: str = ""
    stub_dim: int = 64
    # model; 0 input size means "take it from the data"
    input_height: int = 0
    input_width: int = 0
    input_channels: int = 3
    depth: int = 4
    base_width: int = 32
    alpha: float = 1.67
    variant: str = "full"
    gdam_broadcast: bool = False
    res_blocks: list = field(default_factory=list)
    # training
    lr: float = 1e-4
    batch_size: int = 2
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    ablation_seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs/grunet"

    def model_config(self, height=None, width=None, text_dim=64) -> ModelConfig:
        return ModelConfig(
            input_height=self.input_height or height, input_width=self.input_width or width,
            input_channels=self.input_channels, depth=self.depth, base_width=self.base_width,
            alpha=self.alpha, variant=self.variant, seed=self.seed, text_dim=text_dim,
            res_blocks=list(self.res_blocks) or None, gdam_broadcast=self.gdam_broadcast,
        )

    def train_config(self, checkpoint_dir=None) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps,
                           seed=self.seed, checkpoint_dir=checkpoint_dir)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train_frac, self.val_frac, self.test_frac, self.seed)

    def validate(self):
        """Check values and paths before any work starts."""
        for name in ("data_dir", "labels_path", "embeddings_path"):
            value = getattr(self, name)
            if value and not Path(value).exists():
                raise ConfigError(f"{name} does not exist: {value}")
        if not self.data_dir and self.synthetic_n < 1:
            raise ConfigError("set data_dir or synthetic_n")
        if self.data_dir and self.synthetic_n:
            raise ConfigError("data_dir and synthetic_n are mutually exclusive")
        if not self.ablation_seeds:
            raise ConfigError("ablation_seeds must not be empty")
        self.train_config()
        self.split_spec()
        # model config checks that do not depend on the data
        probe = 2 ** self.depth * 32
        self.model_config(probe, probe)
        return self

    def to_toml(self) -> str:
        return tomli_w.dumps(asdict(self))


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key, value):
    default = getattr(RunConfig(), key)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
    elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    elif isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{key} must be a list, got {value!r}")
    elif not isinstance(default, list) and not isinstance(value, type(default)):
        raise ConfigError(f"{key} expects {type(default).__name__}, got {value!r}")
    return value


def parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    key, raw = (s.strip() for s in item.split("=", 1))
    try:
        value = tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        value = raw  # bare strings such as variant=full
    return key, value


def load_run_config(path=None, overrides=(), env=None) -> RunConfig:
    """File values, then ``$GRUNET_OUT``, then ``--set`` overrides; unknown keys are rejected."""
    env = os.environ if env is None else env
    values = {}
    if path:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            values.update(tomli.loads(path.read_text(encoding="utf-8")))
        except tomli.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
    if env.get(OUT_ENV):
        values["output_dir"] = env[OUT_ENV]
    for item in overrides:
        key, value = parse_override(item)
        values[key] = value
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    return RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
