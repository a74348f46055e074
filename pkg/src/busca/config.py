"""Flat key=value run configuration.

One file configures every stage through dotted keys (``scene.n_objects``,
``tracker.recovery``, ``model.d_model``, ...). Unknown keys are rejected
outright so typos never silently fall back to defaults. The top-level
``seed`` feeds scene generation, model init, and training unless a
section pins its own.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass
from typing import Dict, Tuple

from .model import ModelConfig
from .ste import SteConfig
from .synth import BuilderConfig, SceneConfig
from .tracker import TrackerConfig
from .train import TrainConfig

ENV_SEED = "BUSCA_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BuildConfig:
    """Training-data volume knobs that sit outside the sample builder."""

    n_samples: int = 20000
    holdout_frac: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.holdout_frac < 1.0:
            raise ValueError(f"holdout_frac outside (0, 1): {self.holdout_frac}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scene: SceneConfig = SceneConfig()
    tracker: TrackerConfig = TrackerConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    builder: BuilderConfig = BuilderConfig()
    data: BuildConfig = BuildConfig()
    ste: SteConfig = SteConfig()

    def ste_config(self) -> SteConfig:
        """Encoding parameters aligned with the model width."""
        return dataclasses.replace(self.ste, d_model=self.model.d_model)


_SECTIONS = {
    "scene": SceneConfig,
    "tracker": TrackerConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "builder": BuilderConfig,
    "data": BuildConfig,
    "ste": SteConfig,
}

# ste.d_model is not addressable: it always follows model.d_model.
_HIDDEN = {("ste", "d_model")}


def _convert(raw: str, typ, key: str):
    if typ is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got '{raw}'")
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got '{raw}'")
    if typ is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got '{raw}'")
    if typ is str:
        return raw
    raise ConfigError(f"{key}: unsupported field type {typ}")


def parse_config(text: str, source: str = "<config>", seed_override=None) -> RunConfig:
    """Parse key=value lines into a run configuration.

    Lines are ``key = value``; ``#`` starts a comment; blank lines are
    skipped. The BUSCA_SEED environment variable, when set, overrides any
    seed from the file; ``seed_override`` (the CLI flag) beats both.
    """
    hints = {name: typing.get_type_hints(cls) for name, cls in _SECTIONS.items()}
    overrides: Dict[str, Dict[str, object]] = {name: {} for name in _SECTIONS}
    seed = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got '{line}'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "seed":
            seed = _convert(raw, int, key)
            continue
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        section, field_name = key.split(".", 1)
        if section not in _SECTIONS or (section, field_name) in _HIDDEN:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if field_name not in hints[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if field_name in overrides[section]:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        overrides[section][field_name] = _convert(raw, hints[section][field_name], key)

    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"{ENV_SEED}={env_seed!r} is not an integer")
    if seed_override is not None:
        seed = int(seed_override)
    if seed is None:
        seed = 0

    # Global seed flows into the seeded sections unless pinned explicitly.
    if "seed" not in overrides["scene"]:
        overrides["scene"]["seed"] = seed
    if "seed" not in overrides["train"]:
        overrides["train"]["seed"] = seed

    sections = {}
    for name, cls in _SECTIONS.items():
        try:
            sections[name] = cls(**overrides[name])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{source}: invalid {name} settings: {e}")
    return RunConfig(seed=seed, **sections)


def load_config(path, seed_override=None) -> RunConfig:
    with open(path, "r") as fh:
        return parse_config(fh.read(), source=str(path), seed_override=seed_override)


def default_config_text() -> str:
    """Every addressable key with its default, as a ready-to-edit file."""
    lines = ["seed = 0"]
    for name, cls in _SECTIONS.items():
        lines.append("")
        for f in dataclasses.fields(cls):
            if (name, f.name) in _HIDDEN:
                continue
            v = f.default
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{name}.{f.name} = {v}")
    return "\n".join(lines) + "\n"
