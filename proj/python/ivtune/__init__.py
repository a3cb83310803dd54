"""Infrared-conditioned prompt tuning of a frozen vision transformer."""

from ._ivtune import (
    ConfigError,
    DatasetSpec,
    FormatError,
    FreezeViolation,
    IvtuneError,
    Model,
    ModelConfig,
    NumericError,
    ShapeError,
    evaluate,
    explained_variance,
    generate_dataset,
    load_container,
    mean_radial_energy,
    param_report,
    preset_config,
    radial_energy,
    read_dataset,
    save_container,
    train,
    write_dataset,
)

__all__ = [
    "ConfigError",
    "DatasetSpec",
    "FormatError",
    "FreezeViolation",
    "IvtuneError",
    "Model",
    "ModelConfig",
    "NumericError",
    "ShapeError",
    "evaluate",
    "explained_variance",
    "generate_dataset",
    "load_container",
    "mean_radial_energy",
    "param_report",
    "preset_config",
    "radial_energy",
    "read_dataset",
    "save_container",
    "train",
    "write_dataset",
]
