"""TOML configuration mapped onto the stage dataclasses.

Recognised tables: ``[detection]`` (with a nested ``[detection.geometry]``),
``[segmentation]``, ``[pipeline]``, ``[train]`` and ``[augment]``.  Keys
must match dataclass fields; anything else is rejected.
"""
from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

from .detection import DetectionConfig, GeometryConfig
from .errors import ParameterError
from .pipeline import PipelineConfig
from .recognizer.augment import AugmentConfig
from .recognizer.train import TrainConfig
from .segmentation import SegmentationConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_TABLES = {"detection", "segmentation", "pipeline", "train", "augment"}


def load_toml(path) -> dict:
    if path is None:
        return {}
    try:
        with open(Path(path), "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ParameterError(f"cannot read config {path}: {e}") from None
    unknown = set(data) - _TABLES
    if unknown:
        raise ParameterError(f"unknown config tables: {sorted(unknown)}")
    return data


def build(cls, table: dict | None, **nested):
    table = dict(table or {})
    names = {f.name for f in dataclasses.fields(cls)}
    bad = set(table) - names
    if bad:
        raise ParameterError(f"unknown {cls.__name__} keys: {sorted(bad)}")
    for key, value in table.items():
        if isinstance(value, list):
            table[key] = tuple(value)
    table.update(nested)
    try:
        return cls(**table)
    except (TypeError, ValueError) as e:
        raise ParameterError(f"bad {cls.__name__}: {e}") from None


def pipeline_config(data: dict) -> PipelineConfig:
    det = dict(data.get("detection", {}))
    geom = build(GeometryConfig, det.pop("geometry", None))
    return build(PipelineConfig, data.get("pipeline"),
                 detection=build(DetectionConfig, det, geometry=geom),
                 segmentation=build(SegmentationConfig, data.get("segmentation")))


def augment_config(data: dict) -> AugmentConfig:
    return build(AugmentConfig, data.get("augment"))


def train_config(data: dict, augment: bool = True) -> TrainConfig:
    return build(TrainConfig, data.get("train"), augment=augment_config(data) if augment else None)
