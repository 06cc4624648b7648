from nbt_planner.config_parser import ConfigParser, parse_from_file
from nbt_planner.ig_engine import CameraModel, IgConfig, compute_distribution
from nbt_planner.parser import ConfigParserError
from nbt_planner.planner import HorizonConfig, PlannerContext, receding_horizon_step
from nbt_planner.settings.core import load_settings
from nbt_planner.sim.runner import run_scenario
from nbt_planner.utils import NBTPlannerException, ValidationError
from nbt_planner.voxelmap import VoxelMap, downsample_cloud, integrate_cloud

__all__ = [
    "CameraModel",
    "ConfigParser",
    "ConfigParserError",
    "HorizonConfig",
    "IgConfig",
    "NBTPlannerException",
    "PlannerContext",
    "ValidationError",
    "VoxelMap",
    "compute_distribution",
    "downsample_cloud",
    "integrate_cloud",
    "load_settings",
    "parse_from_file",
    "receding_horizon_step",
    "run_scenario",
]
