"""collusim: a queue-based traffic world where a learned signal controller
is trained on honest vehicle reports, frozen, and then probed by a group of
vehicles that learn to falsify their presence counts.

The package is organized as a numpy library: `network`/`simulator` hold the
deterministic world, `nn`/`ppo` the from-scratch optimization machinery,
`atcs` the frozen signal-control target, `collusion` the learned attack,
`baselines` the rule-based arms, and `harness` the seeded experiment
orchestration behind the `collusim` CLI.
"""

from .errors import (
    CheckpointError,
    CollusimError,
    ConfigError,
    FrozenPolicyError,
    ReportError,
    TrainingDiverged,
    ValidationError,
)
from .network import Intersection, Link, NetworkSpec, RoadNetwork, build_network
from .scenario import ScenarioConfig, load_scenario, materialize_vehicles
from .simulator import PresenceReport, SimConfig, SimState, Vehicle, step

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "CollusimError",
    "ConfigError",
    "FrozenPolicyError",
    "Intersection",
    "Link",
    "NetworkSpec",
    "PresenceReport",
    "ReportError",
    "RoadNetwork",
    "ScenarioConfig",
    "SimConfig",
    "SimState",
    "TrainingDiverged",
    "ValidationError",
    "Vehicle",
    "build_network",
    "load_scenario",
    "materialize_vehicles",
    "step",
    "__version__",
]
