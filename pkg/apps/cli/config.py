# apps/cli/config.py
"""
Run configuration.

A config file is flat `key = value` text with `#` comments (parsed with
python-dotenv). Command-line flags override file values. Every key is checked
against the schema below; the resolved config is echoed back in the same
format so a run can be repeated with `--config <run>/config.env`.
"""

import os
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field

from brain.losses import LossConfig
from data.dataset import DEFAULT_AUDIO_DIM, DEFAULT_VISUAL_DIM
from runners.trainer import TrainConfig

OUT_DIR = os.getenv("AVFORGE_OUT_DIR", "out")
CONFIG_ECHO = "config.env"


class ConfigError(ValueError):
    """Unknown or unreadable configuration keys."""


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    classes: int = Field(3, ge=1)
    per_class: int = Field(50, ge=1)
    audio_dim: int = Field(DEFAULT_AUDIO_DIM, ge=1)
    visual_dim: int = Field(DEFAULT_VISUAL_DIM, ge=1)
    separation: float = Field(10.0, gt=0)
    noise: float = Field(1.0, ge=0)
    seed: int = 0
    train_fraction: float = Field(0.8, gt=0, lt=1)
    dtype: str = Field("float32", pattern="^(float32|float64)$")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data_dir: Optional[str] = None
    out_dir: str = OUT_DIR
    run_name: str = "run"
    checkpoint: Optional[str] = None
    resume: Optional[str] = None
    k_max: int = Field(7, ge=1)
    parallel_runs: int = Field(1, ge=1)
    train: TrainConfig = Field(default_factory=TrainConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.run_name


# flat key -> section; `seed` feeds both the generator and the trainer
LOSS_KEYS = {name: name for name in LossConfig.model_fields} | {"loss": "kind"}
LOSS_KEYS.pop("kind")
TRAIN_KEYS = [name for name in TrainConfig.model_fields if name != "loss"]
SYNTH_KEYS = [name for name in SynthConfig.model_fields if name != "seed"]
RUN_KEYS = [name for name in RunConfig.model_fields if name not in ("train", "synth")]
FLAT_KEYS = sorted(set(LOSS_KEYS) | set(TRAIN_KEYS) | set(SYNTH_KEYS) | set(RUN_KEYS))


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such config file")
    values = dotenv_values(path)
    empty = [k for k, v in values.items() if v is None]
    if empty:
        raise ConfigError(f"{path}: keys without a value: {', '.join(empty)}")
    return dict(values)


def resolve_run_config(file_values: Mapping[str, object], overrides: Mapping[str, object]) -> RunConfig:
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(merged) - set(FLAT_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    loss = {LOSS_KEYS[k]: v for k, v in merged.items() if k in LOSS_KEYS}
    train = {k: v for k, v in merged.items() if k in TRAIN_KEYS}
    synth = {k: v for k, v in merged.items() if k in SYNTH_KEYS}
    if "seed" in merged:
        synth["seed"] = merged["seed"]
    run = {k: v for k, v in merged.items() if k in RUN_KEYS}
    return RunConfig(**run, train=TrainConfig(**train, loss=LossConfig(**loss)), synth=SynthConfig(**synth))


def _fmt(value) -> str:
    if hasattr(value, "value"):
        value = value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def flat_items(cfg: RunConfig, sections: List[str]) -> List[tuple]:
    items = []
    if "run" in sections:
        items += [(k, getattr(cfg, k)) for k in RUN_KEYS]
    if "synth" in sections:
        items += [(k, getattr(cfg.synth, k)) for k in SYNTH_KEYS]
        if "train" not in sections:
            items.append(("seed", cfg.synth.seed))
    if "train" in sections:
        items += [(k, getattr(cfg.train, k)) for k in TRAIN_KEYS]
        items += [(flat, getattr(cfg.train.loss, field)) for flat, field in LOSS_KEYS.items()]
    return [(k, v) for k, v in items if v is not None]


def echo_config(cfg: RunConfig, sections: List[str]) -> str:
    lines = ["# resolved configuration"]
    lines += [f"{k} = {_fmt(v)}" for k, v in flat_items(cfg, sections)]
    return "\n".join(lines) + "\n"
