"""TOML configuration covering every pipeline knob.

Sections map 1:1 onto the dataclasses they configure: [features],
[augment], [model], [train], [paths], and [backends.enhancer] /
[backends.recognizer] / [backends.scorer]. Any key can be overridden
on the command line with ``--set section.key=value``. The cache root
falls back to the BRIDGE_OA_CACHE_DIR environment variable.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .backends import BackendDescriptor
from .features import AugmentPolicy, FbankConfig
from .model import ModelConfig
from .training import TrainConfig

DEFAULT_CACHE_DIR = "bridge_oa_cache"


@dataclass(frozen=True)
class PathsConfig:
    cache_dir: str | None = None
    out_dir: str = "runs/default"


@dataclass
class AppConfig:
    features: FbankConfig = field(default_factory=FbankConfig)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    enhancer: BackendDescriptor = field(
        default_factory=lambda: BackendDescriptor(
            kind="enhancer", id="identity", mode="builtin", options={"name": "identity"}
        )
    )
    recognizer: BackendDescriptor | None = None
    scorer: BackendDescriptor = field(
        default_factory=lambda: BackendDescriptor(kind="scorer", id="synthetic-snr", mode="builtin")
    )

    def cache_dir(self) -> Path:
        explicit = self.paths.cache_dir or os.environ.get("BRIDGE_OA_CACHE_DIR")
        return Path(explicit or DEFAULT_CACHE_DIR)


def _build(cls, section: dict, name: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"unknown key(s) in [{name}]: {sorted(unknown)}")
    return cls(**section)


def _build_backend(kind: str, section: dict) -> BackendDescriptor:
    allowed = {"id", "mode", "command", "url", "options"}
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"unknown key(s) in [backends.{kind}]: {sorted(unknown)}")
    return BackendDescriptor(kind=kind, **section)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings onto the raw config dict."""
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        if len(keys) < 2:
            raise ValueError(f"override key must be dotted (section.key), got {dotted!r}")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ValueError(f"cannot override {dotted!r}: {key!r} is not a table")
        node[keys[-1]] = _parse_value(raw)
    return data


def load_config(path=None, overrides: list[str] | None = None) -> AppConfig:
    data: dict = {}
    if path is not None:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    if overrides:
        apply_overrides(data, overrides)

    known = {"features", "augment", "model", "train", "paths", "backends"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")

    backends_section = data.get("backends", {})
    unknown = set(backends_section) - {"enhancer", "recognizer", "scorer"}
    if unknown:
        raise ValueError(f"unknown backend section(s): {sorted(unknown)}")

    cfg = AppConfig(
        features=_build(FbankConfig, data.get("features", {}), "features"),
        augment=_build(AugmentPolicy, data.get("augment", {}), "augment"),
        model=_build(ModelConfig, data.get("model", {}), "model"),
        train=_build(TrainConfig, data.get("train", {}), "train"),
        paths=_build(PathsConfig, data.get("paths", {}), "paths"),
    )
    if "enhancer" in backends_section:
        cfg.enhancer = _build_backend("enhancer", backends_section["enhancer"])
    if "recognizer" in backends_section:
        cfg.recognizer = _build_backend("recognizer", backends_section["recognizer"])
    if "scorer" in backends_section:
        cfg.scorer = _build_backend("scorer", backends_section["scorer"])
    return cfg
