"""Age-of-information optimal power control for two-source OMA and NOMA uplinks."""
from .config import ExperimentConfig, LearnerConfig, ScenarioConfig, SimConfig, SolverConfig

__version__ = "0.1.0"

__all__ = ["ExperimentConfig", "LearnerConfig", "ScenarioConfig", "SimConfig", "SolverConfig"]
