"""
typed settings built from defaults, scenario files and command line overrides

Loading order: data/defaults.cfg, then the files named by 'include' (depth
first), then the scenario file itself, then the dotted-path overrides.
"""
import copy
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from nbt_planner.config_parser import parse_from_file, parse_value
from nbt_planner.ig_engine import MODES, CameraModel, IgConfig
from nbt_planner.infodist import IdwParams
from nbt_planner.kinematics import KinematicChain, load_robot
from nbt_planner.planner import HorizonConfig
from nbt_planner.settings.base import Section, deg
from nbt_planner.sim.scene import Scene, SimCamera, scene_from_dict
from nbt_planner.utils import ValidationError
from nbt_planner.voxelmap import Box, OccupancyParams

logger = logging.getLogger("nbt_planner")

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")
DEFAULTS_PATH = os.path.join(DATA_DIR, "defaults.cfg")

INCLUDE_KEY = "include"
# blocks that a later file replaces instead of merging into
REPLACED_BLOCKS = ("scene",)
# config keys holding file paths, resolved against the declaring file
PATH_KEYS = (("task", "robot"), ("bench", "map"))
MAP_SOURCES = ("scene", "empty")


@dataclass(frozen=True)
class MapSettings(Section):
    resolution: float = 0.02
    # voxel filter leaf size, none = resolution
    leaf: Optional[float] = None
    p_hit: float = 0.7
    p_miss: float = 0.4
    p_min: float = 0.12
    p_max: float = 0.97
    t_occ: float = 0.5
    t_free: float = 0.5
    max_range: float = 5.0
    bounds_lower: Optional[Tuple[float, float, float]] = None
    bounds_upper: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValidationError(f"map.resolution must be positive, got {self.resolution}")
        if (self.bounds_lower is None) != (self.bounds_upper is None):
            raise ValidationError("map.bounds_lower and map.bounds_upper go together")

    @property
    def leaf_size(self) -> float:
        return self.leaf if self.leaf is not None else self.resolution

    def occupancy_params(self) -> OccupancyParams:
        return OccupancyParams(
            p_hit=self.p_hit,
            p_miss=self.p_miss,
            p_min=self.p_min,
            p_max=self.p_max,
            t_occ=self.t_occ,
            t_free=self.t_free,
            max_range=self.max_range,
        )

    def bounds(self) -> Optional[Box]:
        if self.bounds_lower is None:
            return None
        return Box(lower=self.bounds_lower, upper=self.bounds_upper)


@dataclass(frozen=True)
class CameraSettings(Section):
    fov_h: float = field(default=math.radians(75.0), metadata=deg("fov_h_deg"))
    fov_v: float = field(default=math.radians(65.0), metadata=deg("fov_v_deg"))
    range: float = 3.86
    rows: int = 48
    cols: int = 64
    noise_sigma: float = 0.0

    def model(self) -> CameraModel:
        return CameraModel(fov_h=self.fov_h, fov_v=self.fov_v, range=self.range)

    def sim_camera(self) -> SimCamera:
        return SimCamera(self.model(), self.rows, self.cols, self.noise_sigma)


@dataclass(frozen=True)
class IgSettings(Section):
    r_s: float = 1.0
    n_p: int = 500
    s_g: float = 100.0
    mode: str = "parallel"
    # numba threads, 0 = all
    workers: int = 0
    buffer_size: int = field(default=10, metadata={"alias": "n_b"})
    power: float = 2.0
    zero_dist_epsilon: float = 1e-6
    k_nearest: Optional[int] = None
    normalize_weights: bool = False
    theta_cut: Optional[float] = field(default=None, metadata=deg("theta_cut_deg"))
    export_clouds: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"ig.mode can be one of {MODES}, got {self.mode!r}")
        if self.buffer_size < 1:
            raise ValidationError("ig.n_b must be at least 1")

    def ig_config(self, poi: Sequence[float], seed: int) -> IgConfig:
        return IgConfig(
            poi=tuple(poi), r_s=self.r_s, n_p=self.n_p, s_g=self.s_g, rng_seed=seed
        )

    def idw_params(self) -> IdwParams:
        return IdwParams(
            power=self.power,
            zero_dist_epsilon=self.zero_dist_epsilon,
            k_nearest=self.k_nearest,
            normalize_weights=self.normalize_weights,
        )


@dataclass(frozen=True)
class PlannerSettings(Section):
    horizon: int = 30
    dt: float = 0.1
    q_weight: Any = 1.0
    r_weight: Any = 0.1
    w_o: float = 100.0
    w_i: float = 0.0
    w_ref: float = 0.0
    epsilon: float = 1e-7
    margin: float = 0.05
    ref_dt: float = 0.1
    max_iterations: int = 200
    ftol: float = 1e-12
    gtol: float = 1e-8
    penalty: float = 1e3
    penalty_growth: float = 10.0
    penalty_rounds: int = 4
    tolerance: float = 1e-6

    def horizon_config(self, theta_cut: Optional[float] = None) -> HorizonConfig:
        return HorizonConfig(theta_cut=theta_cut, **asdict(self))


@dataclass(frozen=True)
class TaskSettings(Section):
    name: str = "run"
    robot: str = "robots/ur10.robot"
    start: Tuple[float, ...] = (-1.57, 0.0, 0.0, 0.0, 1.0, 0.0)
    # one joint state or a list of them, visited in order
    goals: Tuple = (1.57, -0.75, 0.0, 0.0, 0.0, 0.0)
    goal_tolerance: float = 0.01
    duration: float = 20.0
    sensor_rate: float = 5.0
    seed: int = 0
    waypoints: Optional[Tuple] = None
    # joint state of the stationary reference capture, none = start
    reference_pose: Optional[Tuple[float, ...]] = None
    reference_frames: int = 3

    def goal_list(self) -> List[Tuple[float, ...]]:
        if self.goals and all(isinstance(value, (int, float)) for value in self.goals):
            return [tuple(self.goals)]
        return [tuple(goal) for goal in self.goals]


@dataclass(frozen=True)
class SweepSettings(Section):
    w_i: Tuple[float, ...] = (0.0, 5.0, 25.0, 50.0)
    seeds: int = 5
    first_seed: int = 0


@dataclass(frozen=True)
class BenchSettings(Section):
    n_p: Tuple[int, ...] = (100, 200, 300, 400, 500, 600, 700, 800, 900, 1000)
    s_g: Tuple[float, ...] = (5.0, 50.0, 100.0, 200.0)
    iterations: int = 100
    modes: Tuple[str, ...] = MODES
    # 'scene' renders the scenario from task.start, 'empty' keeps the map empty,
    # anything else is a map dump
    map: str = "scene"
    frames: int = 3
    # extra random occupied voxels around the poi
    random_occupied: int = 0
    seed: int = 0

    def __post_init__(self):
        unknown = sorted(set(self.modes) - set(MODES))
        if unknown:
            raise ValidationError(f"bench.modes: unknown modes {unknown}")
        if self.iterations < 1:
            raise ValidationError("bench.iterations must be at least 1")

    def grid(self) -> List[Tuple[int, float]]:
        return [(n_p, s_g) for s_g in self.s_g for n_p in self.n_p]


@dataclass(frozen=True, eq=False)
class Settings:
    source: str
    map: MapSettings
    camera: CameraSettings
    ig: IgSettings
    planner: PlannerSettings
    task: TaskSettings
    sweep: SweepSettings
    robot: KinematicChain
    scene: Optional[Scene] = None
    bench: Optional[BenchSettings] = None
    raw: Dict = field(default_factory=dict)

    def horizon_config(self) -> HorizonConfig:
        return self.planner.horizon_config(self.ig.theta_cut)


SECTIONS = {
    "map": MapSettings,
    "camera": CameraSettings,
    "ig": IgSettings,
    "planner": PlannerSettings,
    "task": TaskSettings,
    "sweep": SweepSettings,
    "bench": BenchSettings,
}
KNOWN_KEYS = set(SECTIONS) | {"scene"}


def resolve_path(value: str, base_dir: str) -> str:
    """config path -> existing absolute path, tried against base_dir, then the data dir"""
    if os.path.isabs(value):
        candidates = [value]
    else:
        candidates = [os.path.join(base_dir, value), os.path.join(DATA_DIR, value)]
    for candidate in candidates:
        if os.path.exists(candidate):
            return os.path.abspath(candidate)
    raise ValidationError(f"file not found: {value} (looked in {', '.join(candidates)})")


def _resolve_paths(data: Dict, base_dir: str) -> None:
    for section, key in PATH_KEYS:
        block = data.get(section)
        if not isinstance(block, dict) or not isinstance(block.get(key), str):
            continue
        if section == "bench" and block[key] in MAP_SOURCES:
            continue
        block[key] = resolve_path(block[key], base_dir)


def merge(base: Dict, update: Dict) -> Dict:
    result = dict(base)
    for key, value in update.items():
        if (
            isinstance(value, dict)
            and isinstance(result.get(key), dict)
            and key not in REPLACED_BLOCKS
        ):
            result[key] = merge(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def read_config(path: str, seen: Tuple[str, ...] = ()) -> Dict:
    """one config file merged over the files it includes, paths resolved"""
    path = os.path.abspath(path)
    if path in seen:
        raise ValidationError(f"include cycle: {' -> '.join(seen + (path,))}")
    if not os.path.isfile(path):
        raise ValidationError(f"config file not found: {path}")
    data = parse_from_file(path)
    base_dir = os.path.dirname(path)
    _resolve_paths(data, base_dir)
    includes = data.pop(INCLUDE_KEY, [])
    if isinstance(includes, str):
        includes = [includes]
    result = {}
    for include in includes:
        result = merge(result, read_config(resolve_path(include, base_dir), seen + (path,)))
    return merge(result, data)


def apply_override(config: Dict, override: str) -> Dict:
    if "=" not in override:
        raise ValidationError(f"override must look like key=value, got {override!r}")
    key, text = override.split("=", 1)
    parts = key.strip().split(".")
    node = config
    for part in parts[:-1]:
        node = node.get(part) if isinstance(node, dict) else None
        if not isinstance(node, dict):
            raise ValidationError(f"unknown override key {key.strip()!r}")
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ValidationError(f"unknown override key {key.strip()!r}")
    value = parse_value(text.strip())
    if parts == ["task", "robot"] and isinstance(value, str):
        value = resolve_path(value, os.getcwd())
    node[parts[-1]] = value
    logger.info(f"override {key.strip()} = {value!r}")
    return config


def load_config(path: str, overrides: Sequence[str] = ()) -> Dict:
    config = merge(read_config(DEFAULTS_PATH), read_config(path))
    unknown = sorted(set(config) - KNOWN_KEYS)
    if unknown:
        raise ValidationError(f"{path}: unknown sections {unknown}")
    for override in overrides:
        apply_override(config, override)
    return config


def settings_from_config(config: Dict, source: str) -> Settings:
    sections = {
        name: cls.init(config.get(name, {}), name)
        for name, cls in SECTIONS.items()
        if name != "bench"
    }
    robot = load_robot(sections["task"].robot)
    start = sections["task"].start
    if len(start) != robot.n_dof:
        raise ValidationError(f"task.start has {len(start)} joints, robot has {robot.n_dof}")
    for goal in sections["task"].goal_list():
        if len(goal) != robot.n_dof:
            raise ValidationError(f"task goal {goal} has {len(goal)} joints, robot has {robot.n_dof}")
    return Settings(
        source=source,
        robot=robot,
        scene=scene_from_dict(config["scene"], "scene") if "scene" in config else None,
        bench=BenchSettings.init(config["bench"], "bench") if "bench" in config else None,
        raw=config,
        **sections,
    )


def load_settings(path: str, overrides: Sequence[str] = ()) -> Settings:
    config = load_config(path, overrides)
    settings = settings_from_config(config, os.path.abspath(path))
    logger.info(f"settings loaded from {path} with {len(overrides)} overrides")
    return settings
