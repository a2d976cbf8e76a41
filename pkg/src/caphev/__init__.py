"""Corridor-level coordination of connected automated plug-in hybrids, with a powertrain model."""

from .config import ScenarioConfig, load_config
from .sim import compare_runs, emit_outputs, run_scenario

__all__ = ["ScenarioConfig", "load_config", "run_scenario", "compare_runs", "emit_outputs"]
__version__ = "0.1.0"
