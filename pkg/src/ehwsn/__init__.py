"""Energy-aware resource allocation for RF-powered sensor networks under accumulate-then-transmit.

Per-frame drift-plus-penalty programs are solved by successive inner
approximation on top of a small log-barrier interior-point solver.
"""
__version__ = "0.1.0"

from .config import (Allocation, ConfigError, FrameState, SlackState, SolverConfig, SystemConfig, UnitScales,
                     load_config, validate_config)
from .harness import EpisodeLog, ExperimentSpec, run_episode, run_experiment
from .sca import SCHEMES, solve_frame
from .solver import ConvexProblem, solve

__all__ = [
    "Allocation", "ConfigError", "ConvexProblem", "EpisodeLog", "ExperimentSpec", "FrameState", "SCHEMES",
    "SlackState", "SolverConfig", "SystemConfig", "UnitScales", "load_config", "run_episode",
    "run_experiment", "solve", "solve_frame", "validate_config",
]
