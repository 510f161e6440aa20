from .builtins import BUILTIN_NAMES, builtin_scenario, los_crossing, los_crossing_variants
from .config import (ActorSpec, ConfigError, MotionScript, ScenarioConfig, VelocitySegment, Waypoint,
                     config_from_dict, config_to_dict, dump_scenario, load_scenario, scenario_schema)
from .engine import run
from .world import CollisionDetector, detect_ground_truth_collisions, observe, perturb, step, tick_noise

__all__ = [
    "BUILTIN_NAMES", "builtin_scenario", "los_crossing", "los_crossing_variants",
    "ActorSpec", "ConfigError", "MotionScript", "ScenarioConfig", "VelocitySegment", "Waypoint",
    "config_from_dict", "config_to_dict", "dump_scenario", "load_scenario", "scenario_schema", "run",
    "CollisionDetector", "detect_ground_truth_collisions", "observe", "perturb", "step", "tick_noise",
]
