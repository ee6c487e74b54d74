"""Python front end to the uaflow C++ library.

Points are rows of float64 arrays. Class conditions are ints, with None for
the null condition.
"""

from ._uaflow import (
    ConfigError,
    DimensionError,
    Error,
    InvalidArgument,
    IoError,
    Model,
    NumericError,
    draw,
    energy_distance,
    lambda_opt,
    precision_recall,
    sample,
    train,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "Error",
    "InvalidArgument",
    "IoError",
    "Model",
    "NumericError",
    "draw",
    "energy_distance",
    "lambda_opt",
    "precision_recall",
    "sample",
    "train",
]
