"""Flat ``key = value`` run configuration.

Keys are dotted (``model.width``, ``train.lr``, ``noise.sigma``,
``paths.train_dir``); ``#`` starts a comment.  Unknown keys are rejected so
a typo cannot silently fall back to a default.
"""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .losses import LossWeights
from .model import ModelConfig
from .noise import NoiseSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _schema() -> dict:
    schema = {f"model.{f.name}": f.type for f in fields(ModelConfig)}
    for f in fields(TrainConfig):
        if f.name != "weights":
            schema[f"train.{f.name}"] = f.type
    schema.update({
        "train.alpha_rec": "float", "train.alpha_sc": "float", "train.alpha_diff": "float",
        "train.checkpoint_every": "int",
        "noise.kind": "str", "noise.sigma": "float", "noise.sigma_min": "float",
        "noise.sigma_max": "float", "noise.lam": "float", "noise.lam_min": "float",
        "noise.lam_max": "float",
        "paths.train_dir": "str", "paths.eval_noisy_dir": "str", "paths.eval_clean_dir": "str",
        "paths.checkpoint": "str", "paths.log": "str",
    })
    return schema


SCHEMA = _schema()
_PARSERS = {"int": int, "float": float, "bool": _bool, "str": str}


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            try:
                value = _PARSERS[SCHEMA[key]](value.strip())
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
        self.values[key] = value

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in cfg.values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            try:
                cfg.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.parse(text)

    def get(self, key: str, default=None):
        if key not in SCHEMA:
            raise KeyError(key)
        return self.values.get(key, default)

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if k not in self.values]
        if missing:
            raise ConfigError(f"missing required config key(s): {', '.join(missing)}")

    def _section(self, prefix: str) -> dict:
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self._section("model."))

    def train_config(self, seed: int | None = None) -> TrainConfig:
        d = self._section("train.")
        d.pop("checkpoint_every", None)
        w = {name: d.pop(f"alpha_{name}") for name in ("rec", "sc", "diff") if f"alpha_{name}" in d}
        if seed is not None:
            d["seed"] = seed
        try:
            return TrainConfig(weights=LossWeights(**w), **d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def noise_spec(self) -> NoiseSpec:
        self.require("noise.kind")
        kind = self.values["noise.kind"]
        keys = {
            "gaussian_fixed": ("noise.sigma",), "gaussian_range": ("noise.sigma_min", "noise.sigma_max"),
            "poisson_fixed": ("noise.lam",), "poisson_range": ("noise.lam_min", "noise.lam_max"),
        }
        if kind not in keys:
            raise ConfigError(f"noise.kind must be one of {sorted(keys)}, got {kind!r}")
        self.require(*keys[kind])
        try:
            return NoiseSpec(kind, *(self.values[k] for k in keys[kind]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
