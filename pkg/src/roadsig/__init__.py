"""Position along a known route from IMU vibration signatures."""

from .core import (
    ConfigError,
    Dataset,
    Drive,
    OffRouteError,
    Position,
    ProcessedWindow,
    RawWindow,
    RoadsigError,
    RouteError,
    RouteModel,
    build_route,
    label_segment,
)
from .evaluate import MetricsReport, ideal_bounds, metrics
from .positioning import midpoint, run_drive, step, transition_logic
from .preprocess import preprocess

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "Dataset", "Drive", "MetricsReport", "OffRouteError", "Position",
    "ProcessedWindow", "RawWindow", "RoadsigError", "RouteError", "RouteModel",
    "build_route", "ideal_bounds", "label_segment", "metrics", "midpoint", "preprocess",
    "run_drive", "step", "transition_logic",
]
