import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from nbt_planner.geometry import AxisBox, Plane, Sphere
from nbt_planner.ig_engine import CameraModel, frustum_axes
from nbt_planner.infodist import CameraPose
from nbt_planner.settings.base import Section
from nbt_planner.utils import ValidationError, as_vector
from nbt_planner.voxelmap import Box

logger = logging.getLogger("nbt_planner")

Primitive = Union[AxisBox, Sphere, Plane]

PRIMITIVE_BLOCKS = {"box": AxisBox, "sphere": Sphere, "plane": Plane}


@dataclass(frozen=True)
class SimCamera:
    camera: CameraModel
    rows: int = 48
    cols: int = 64
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValidationError(f"image needs at least 2x2 rays, got {self.rows}x{self.cols}")
        if self.noise_sigma < 0:
            raise ValidationError("noise sigma must be >= 0")

    def ray_offsets(self) -> Tuple[np.ndarray, np.ndarray]:
        """horizontal and vertical slopes of every pixel ray, row-major"""
        tan_h = np.tan(self.camera.fov_h / 2.0)
        tan_v = np.tan(self.camera.fov_v / 2.0)
        x = tan_h * (2.0 * (np.arange(self.cols) + 0.5) / self.cols - 1.0)
        y = tan_v * (2.0 * (np.arange(self.rows) + 0.5) / self.rows - 1.0)
        slope_y, slope_x = np.meshgrid(y, x, indexing="ij")
        return slope_x.ravel(), slope_y.ravel()


@dataclass(frozen=True)
class MovingPrimitive:
    """primitive moving with constant velocity while t_start <= t <= t_end"""

    primitive: Primitive
    velocity: Tuple[float, float, float]
    t_start: float = 0.0
    t_end: float = float("inf")

    def __post_init__(self):
        as_vector(self.velocity, 3, "velocity")
        if self.t_end < self.t_start:
            raise ValidationError("moving primitive ends before it starts")

    def at(self, t: float) -> Primitive:
        elapsed = min(max(t - self.t_start, 0.0), self.t_end - self.t_start)
        return self.primitive.translated(np.asarray(self.velocity, dtype=float) * elapsed)


@dataclass(frozen=True)
class Scene:
    poi: Tuple[float, float, float]
    roi: Box
    static: Tuple[Primitive, ...] = ()
    # the object to reconstruct, rendered alone for the reference map
    objects: Tuple[Primitive, ...] = ()
    moving: Tuple[MovingPrimitive, ...] = ()
    bounds: Optional[Box] = None

    def __post_init__(self):
        poi = as_vector(self.poi, 3, "poi")
        if self.bounds is not None and not self.bounds.contains(poi)[0]:
            raise ValidationError(f"poi {self.poi} lies outside the scene bounds")

    def primitives_at(self, t: float) -> List[Primitive]:
        return list(self.static) + list(self.objects) + [item.at(t) for item in self.moving]

    def obstacles_at(self, t: float) -> Tuple[Primitive, ...]:
        return tuple(item for item in self.primitives_at(t) if item.obstacle)

    def objects_only(self) -> "Scene":
        return Scene(poi=self.poi, roi=self.roi, objects=self.objects, bounds=self.bounds)


def render_depth(
    scene: Scene,
    pose: CameraPose,
    cam: SimCamera,
    t: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    world points of one simulated depth image

    ray k has direction axis + x_k h + y_k v, its parameter is the depth along the
    optical axis and hits deeper than the camera range are dropped
    """
    origin, directions = camera_rays(pose, cam)
    origins = np.broadcast_to(origin, directions.shape)

    depth = np.full(len(directions), np.inf)
    for primitive in scene.primitives_at(t):
        depth = np.minimum(depth, primitive.intersect(origins, directions))
    hit = depth <= cam.camera.range
    if not np.any(hit):
        return np.zeros((0, 3))
    depth = depth[hit]
    directions = directions[hit]
    if cam.noise_sigma > 0:
        if rng is None:
            raise ValidationError("noisy rendering needs a random generator")
        lengths = np.linalg.norm(directions, axis=1)
        depth = depth + cam.noise_sigma * rng.standard_normal(len(depth)) / lengths
    return origin + directions * depth[:, None]


def _primitives(data: Dict, source: str) -> List[Primitive]:
    primitives = []
    for block, cls in PRIMITIVE_BLOCKS.items():
        items = data.get(block, [])
        if isinstance(items, dict):
            items = [items]
        for num, item in enumerate(items):
            primitives.append(_primitive(cls, item, f"{source}: {block} {num}"))
    return primitives


def _primitive(cls, item: Dict, source: str) -> Primitive:
    if not isinstance(item, dict):
        raise ValidationError(f"{source}: expected a block")
    try:
        kwargs = {
            key: tuple(value) if isinstance(value, list) else value
            for key, value in item.items()
        }
        return cls(**kwargs)
    except TypeError as error:
        raise ValidationError(f"{source}: {error}") from error


@dataclass(frozen=True)
class MotionSection(Section):
    velocity: Tuple[float, float, float]
    t_start: float = 0.0
    t_end: float = float("inf")


def _moving(data: Dict, source: str) -> List[MovingPrimitive]:
    items = data.get("moving", [])
    if isinstance(items, dict):
        items = [items]
    moving = []
    for num, item in enumerate(items):
        name = f"{source}: moving {num}"
        shapes = {key: item[key] for key in PRIMITIVE_BLOCKS if key in item}
        motion = {key: value for key, value in item.items() if key not in PRIMITIVE_BLOCKS}
        shape = _primitives(shapes, name)
        if len(shape) != 1:
            raise ValidationError(f"{name}: exactly one primitive per moving block")
        settings = MotionSection.init(motion, name)
        moving.append(
            MovingPrimitive(shape[0], settings.velocity, settings.t_start, settings.t_end)
        )
    return moving


def _box(data: Dict, source: str) -> Box:
    if not isinstance(data, dict) or set(data) != {"lower", "upper"}:
        raise ValidationError(f"{source}: needs exactly 'lower' and 'upper'")
    return Box(lower=tuple(data["lower"]), upper=tuple(data["upper"]))


def scene_from_dict(data: Dict, source: str = "scene") -> Scene:
    known = {"poi", "roi", "bounds", "object", "moving"} | set(PRIMITIVE_BLOCKS)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"{source}: unknown keys {unknown}")
    for required in ("poi", "roi"):
        if required not in data:
            raise ValidationError(f"{source}: missing required key '{required}'")
    objects = data.get("object", {})
    if not isinstance(objects, dict):
        raise ValidationError(f"{source}: a single 'object' block groups the object primitives")
    return Scene(
        poi=tuple(as_vector(data["poi"], 3, "poi")),
        roi=_box(data["roi"], f"{source}: roi"),
        static=tuple(_primitives(data, source)),
        objects=tuple(_primitives(objects, f"{source}: object")),
        moving=tuple(_moving(data, source)),
        bounds=_box(data["bounds"], f"{source}: bounds") if "bounds" in data else None,
    )


def describe(scene: Scene) -> str:
    return (
        f"{len(scene.static)} static, {len(scene.objects)} object and "
        f"{len(scene.moving)} moving primitives, poi {tuple(round(v, 4) for v in scene.poi)}"
    )


def camera_rays(pose: CameraPose, cam: SimCamera) -> Tuple[np.ndarray, np.ndarray]:
    """origin and unnormalized directions of every pixel ray"""
    axis = as_vector(pose.optical_axis, 3, "optical axis")
    horizontal, vertical = frustum_axes(axis[None, :])
    slope_x, slope_y = cam.ray_offsets()
    directions = axis + slope_x[:, None] * horizontal + slope_y[:, None] * vertical
    return as_vector(pose.position, 3, "camera position"), directions


def points_on_surfaces(points: np.ndarray, primitives: Sequence[Primitive]) -> np.ndarray:
    """smallest |signed distance| of each point to any primitive surface"""
    if not len(primitives):
        return np.full(len(points), np.inf)
    distances = [np.abs(primitive.signed_distance(points)[0]) for primitive in primitives]
    return np.min(distances, axis=0)
