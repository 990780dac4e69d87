"""Score-based sampling lab: DSM training, annealed Langevin and consistent
annealed sampling, expected denoised samples and analytic oracles."""

from scorelab.errors import (
    ConfigError,
    DegenerateDensityError,
    DivergenceError,
    InsufficientDataError,
    InvalidScheduleError,
    InvalidSizeError,
    NonFiniteError,
    ScoreLabError,
    StepTooLargeError,
    StepTooSmallError,
)
from scorelab.schedules import (
    NoiseSchedule,
    SamplerConstants,
    cas_constants,
    dilate,
    geometric_schedule,
    sigma1_from_data,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateDensityError",
    "DivergenceError",
    "InsufficientDataError",
    "InvalidScheduleError",
    "InvalidSizeError",
    "NoiseSchedule",
    "NonFiniteError",
    "SamplerConstants",
    "ScoreLabError",
    "StepTooLargeError",
    "StepTooSmallError",
    "cas_constants",
    "dilate",
    "geometric_schedule",
    "sigma1_from_data",
]
