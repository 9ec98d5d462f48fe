"""Trajectory prediction with visual-sector masking and graph attention."""

from ._core import (
    Config,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    Model,
    NumericError,
    Sample,
    SchemaError,
    bivariate_log_density,
    gaussian_constrain,
    gradcheck,
    horizon_bucket,
    load_samples,
    sector_for_speed,
    synth,
    visual_matrix,
)

__all__ = [
    "Config",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "Model",
    "NumericError",
    "Sample",
    "SchemaError",
    "bivariate_log_density",
    "gaussian_constrain",
    "gradcheck",
    "horizon_bucket",
    "load_samples",
    "sector_for_speed",
    "synth",
    "visual_matrix",
]
