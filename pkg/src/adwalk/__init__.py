"""Stopped-random-walk marketplace simulator and treatment-effect inference."""

from .config import ScenarioConfig, desk_scenario, load_config
from .errors import AdwalkError, ConfigError, EstimationError, InvariantError
from .market import ReservePolicy

__version__ = "0.1.0"

__all__ = [
    "AdwalkError",
    "ConfigError",
    "EstimationError",
    "InvariantError",
    "ReservePolicy",
    "ScenarioConfig",
    "desk_scenario",
    "load_config",
]
