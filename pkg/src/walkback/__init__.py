"""Generative transition operators trained to walk heated data back to the data distribution."""
from .errors import (ConfigError, DomainError, OperatorError, TrainingError, UsageError,
                     WalkbackError)
from .kernels import BACKEND
from .operators import (BernoulliOperator, GaussianOperator, MatrixOperator, TabularOperator)
from .schedule import TemperatureSchedule, make_cooling, make_heating
from .training import TrainConfig, cool, heat_trajectory, train, walkback_update

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BernoulliOperator", "ConfigError", "DomainError", "GaussianOperator",
    "MatrixOperator", "OperatorError", "TabularOperator", "TemperatureSchedule", "TrainConfig",
    "TrainingError", "UsageError", "WalkbackError", "cool", "heat_trajectory", "make_cooling",
    "make_heating", "train", "walkback_update",
]
