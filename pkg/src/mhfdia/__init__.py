"""Moving-horizon false data injection attacks against windowed state estimators."""
from .attack import (AttackHistory, AttackSupport, GeneratorConfig, MovingHorizonAttacker, generate_attack,
                     make_workspace, nullspace_basis)
from .errors import ConfigError, NumericalError
from .estimators import BddDetector, MheEstimator
from .harness import RunConfig, SweepSpec, load_config, run, sweep
from .plant import HorizonObservation, NoiseModel, PlantModel, build_horizon
from .trace import SimTrace, export

__all__ = [
    "AttackHistory", "AttackSupport", "BddDetector", "ConfigError", "GeneratorConfig", "HorizonObservation",
    "MheEstimator", "MovingHorizonAttacker", "NoiseModel", "NumericalError", "PlantModel", "RunConfig",
    "SimTrace", "SweepSpec", "build_horizon", "export", "generate_attack", "load_config", "make_workspace",
    "nullspace_basis", "run", "sweep",
]
