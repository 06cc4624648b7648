"""
interpolated information gain around the camera and the orientation factor

The buffer keeps the last N_B information distributions. The gain at a query
point is the inverse distance weighted gain of every buffered distribution,
summed with recency weights 1/(N_B - u), u = 0 for the oldest slot. With fewer
than N_B entries the weights are counted from the newest entry, which always
has weight 1.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from nbt_planner.ig_engine import CameraModel, InformationDistribution, PerspectiveGain
from nbt_planner.utils import (
    NoDistributionError,
    UndefinedOrientationError,
    ValidationError,
    as_points,
    as_vector,
)

logger = logging.getLogger("nbt_planner")

# closer than this the ideal orientation is undefined
MIN_POI_DISTANCE = 1e-9


@dataclass(frozen=True)
class CameraPose:
    position: Tuple[float, float, float]
    optical_axis: Tuple[float, float, float]

    def __post_init__(self):
        as_vector(self.position, 3, "camera position")
        axis = as_vector(self.optical_axis, 3, "optical axis")
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValidationError(f"optical axis must be a unit vector, got {self.optical_axis}")


@dataclass(frozen=True)
class IdwParams:
    power: float = 2.0
    zero_dist_epsilon: float = 1e-6
    # interpolate over the k nearest perspectives of an entry, none = all of them
    k_nearest: Optional[int] = None
    normalize_weights: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.power) and self.power >= 0):
            raise ValidationError(f"idw power must be finite and >= 0, got {self.power}")
        if not (math.isfinite(self.zero_dist_epsilon) and self.zero_dist_epsilon >= 0):
            raise ValidationError("zero_dist_epsilon must be finite and >= 0")
        if self.k_nearest is not None and self.k_nearest < 1:
            raise ValidationError(f"k_nearest must be at least 1, got {self.k_nearest}")


@dataclass(frozen=True)
class BufferEntry:
    origins: np.ndarray
    gains: np.ndarray
    tree: cKDTree

    @classmethod
    def init(
        cls, distribution: Union[InformationDistribution, Iterable[PerspectiveGain]]
    ) -> "BufferEntry":
        if not isinstance(distribution, InformationDistribution):
            distribution = InformationDistribution.from_gains(distribution)
        origins = np.array(distribution.origins, dtype=float)
        gains = np.array(distribution.gains, dtype=float)
        return cls(origins=origins, gains=gains, tree=cKDTree(origins))

    @property
    def mean_gain(self) -> float:
        return float(np.mean(self.gains))


@dataclass(frozen=True)
class BufferView:
    """immutable state of a buffer, safe to evaluate from several readers"""

    entries: Tuple[BufferEntry, ...]
    capacity: int

    def __len__(self) -> int:
        return len(self.entries)

    def weights(self, normalize: bool = False) -> np.ndarray:
        """recency weights oldest -> newest, the newest always 1 before normalization"""
        count = len(self.entries)
        weights = 1.0 / (count - np.arange(count, dtype=float))
        if normalize and count:
            weights = weights / weights.sum()
        return weights


class DistributionBuffer:
    def __init__(self, capacity: int) -> None:
        if int(capacity) != capacity or capacity < 1:
            raise ValidationError(f"buffer capacity must be a positive integer, got {capacity}")
        self.capacity = int(capacity)
        self._entries = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def push(
        self, distribution: Union[InformationDistribution, Iterable[PerspectiveGain]]
    ) -> None:
        """append as newest, the oldest entry is evicted at capacity"""
        self._entries.append(BufferEntry.init(distribution))

    def clear(self) -> None:
        self._entries.clear()

    def view(self) -> BufferView:
        return BufferView(entries=tuple(self._entries), capacity=self.capacity)


BufferLike = Union[DistributionBuffer, BufferView]


def _view(buffer: BufferLike) -> BufferView:
    view = buffer.view() if isinstance(buffer, DistributionBuffer) else buffer
    if not len(view):
        raise NoDistributionError("no distribution available")
    return view


def _as_entry(entry) -> BufferEntry:
    if isinstance(entry, BufferEntry):
        return entry
    return BufferEntry.init(entry)


def _neighbours(
    entry: BufferEntry, points: np.ndarray, params: IdwParams
) -> Tuple[np.ndarray, np.ndarray]:
    """distances (M, k) and perspective indices (M, k) used for each query point"""
    count = len(entry.gains)
    if params.k_nearest is None or params.k_nearest >= count:
        diff = points[:, None, :] - entry.origins[None, :, :]
        distances = np.linalg.norm(diff, axis=2)
        indices = np.broadcast_to(np.arange(count), distances.shape)
        return distances, indices
    distances, indices = entry.tree.query(points, k=params.k_nearest)
    return distances.reshape(len(points), -1), indices.reshape(len(points), -1)


def idw_values(
    entry: BufferEntry, points: np.ndarray, params: IdwParams, with_gradient: bool = False
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    distances, indices = _neighbours(entry, points, params)
    gains = entry.gains[indices]
    nearest = np.argmin(distances, axis=1)
    rows = np.arange(len(points))
    at_origin = distances[rows, nearest] < params.zero_dist_epsilon

    safe = np.where(at_origin[:, None], 1.0, distances)
    weights = safe ** (-params.power)
    total = weights.sum(axis=1)
    values = (weights * gains).sum(axis=1) / total
    values = np.where(at_origin, gains[rows, nearest], values)
    if not with_gradient:
        return values, None

    # d w_j / d q = -p w_j (q - o_j) / d_j^2
    diff = points[:, None, :] - entry.origins[indices]
    d_weights = (-params.power * weights / safe**2)[:, :, None] * diff
    gradient = (d_weights * (gains - values[:, None])[:, :, None]).sum(axis=1)
    gradient /= total[:, None]
    gradient[at_origin] = 0.0
    return values, gradient


def idw_single(
    entry: Union[BufferEntry, InformationDistribution, Sequence[PerspectiveGain]],
    query: Sequence[float],
    params: IdwParams,
) -> float:
    entry = _as_entry(entry)
    if not len(entry.gains):
        raise NoDistributionError("no distribution available")
    point = as_vector(query, 3, "query").reshape(1, 3)
    values, _ = idw_values(entry, point, params)
    return float(values[0])


def gain_and_gradient(
    buffer: BufferLike, points: np.ndarray, params: IdwParams
) -> Tuple[np.ndarray, np.ndarray]:
    """G and dG/dpoint for every point, shapes (M,) and (M, 3)"""
    view = _view(buffer)
    points = as_points(points, "query points")
    weights = view.weights(params.normalize_weights)
    gains = np.zeros(len(points))
    gradient = np.zeros((len(points), 3))
    for weight, entry in zip(weights, view.entries):
        values, d_values = idw_values(entry, points, params, with_gradient=True)
        gains += weight * values
        gradient += weight * d_values
    return gains, gradient


def gain_at(buffer: BufferLike, query: Sequence[float], params: IdwParams) -> float:
    view = _view(buffer)
    point = as_vector(query, 3, "query").reshape(1, 3)
    weights = view.weights(params.normalize_weights)
    total = 0.0
    for weight, entry in zip(weights, view.entries):
        values, _ = idw_values(entry, point, params)
        total += weight * values[0]
    return float(total)


def remaining_ig(buffer: BufferLike) -> float:
    """mean over buffered distributions of their mean perspective gain"""
    view = _view(buffer)
    return float(np.mean([entry.mean_gain for entry in view.entries]))


def cutoff_angle(cam: CameraModel, theta_cut: Optional[float] = None) -> float:
    """half-angle of the narrower field of view unless configured"""
    if theta_cut is not None:
        return theta_cut
    return min(cam.fov_h, cam.fov_v) / 2.0


def orientation_factor(
    pose: CameraPose,
    poi: Sequence[float],
    cam: CameraModel,
    theta_cut: Optional[float] = None,
) -> float:
    to_poi = as_vector(poi, 3, "poi") - np.asarray(pose.position, dtype=float)
    distance = np.linalg.norm(to_poi)
    if distance < MIN_POI_DISTANCE:
        raise UndefinedOrientationError("undefined ideal orientation")
    axis = np.asarray(pose.optical_axis, dtype=float)
    theta = math.atan2(np.linalg.norm(np.cross(axis, to_poi)), float(axis @ to_poi))
    if theta > cutoff_angle(cam, theta_cut):
        return 0.0
    return math.cos(theta)


def orientation_and_gradient(
    positions: np.ndarray,
    axes: np.ndarray,
    poi: Sequence[float],
    theta_cut: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    O with its gradients w.r.t. camera position and optical axis, all vectorized

    positions coincident with the poi get O = 0 and zero gradients, the optimizer
    must not stop on them
    """
    to_poi = np.asarray(poi, dtype=float) - positions
    distance = np.linalg.norm(to_poi, axis=1)
    valid = distance >= MIN_POI_DISTANCE
    safe = np.where(valid, distance, 1.0)
    dot = np.einsum("ij,ij->i", axes, to_poi)
    cross = np.linalg.norm(np.cross(axes, to_poi), axis=1)
    theta = np.arctan2(cross, dot)
    inside = valid & (theta <= theta_cut)
    factor = np.where(inside, np.cos(theta), 0.0)

    direction = to_poi / safe[:, None]
    cosine = dot / safe
    # O = a.v / |v| with v = poi - p
    d_to_poi = axes / safe[:, None] - (cosine / safe)[:, None] * direction
    d_position = np.where(inside[:, None], -d_to_poi, 0.0)
    d_axis = np.where(inside[:, None], direction, 0.0)
    return factor, d_position, d_axis
