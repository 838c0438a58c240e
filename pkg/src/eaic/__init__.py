"""Energy-aware Cartesian impedance control for a simulated unscrewing task."""
from .controllers import (
    EnergyAwareController,
    EnergyAwareState,
    HybridController,
    HybridState,
    ImpedanceController,
    TankState,
)
from .lie import Transform, Twist, Wrench
from .robot import ChainModel, RobotState, Snapshot, panda7
from .scenario import ConfigError, ScenarioConfig, compare, load_config, run_scenario
from .spring import StiffnessSet
from .world import SimWorld

__all__ = [
    "ChainModel",
    "ConfigError",
    "EnergyAwareController",
    "EnergyAwareState",
    "HybridController",
    "HybridState",
    "ImpedanceController",
    "RobotState",
    "ScenarioConfig",
    "SimWorld",
    "Snapshot",
    "StiffnessSet",
    "TankState",
    "Transform",
    "Twist",
    "Wrench",
    "compare",
    "load_config",
    "panda7",
    "run_scenario",
]
