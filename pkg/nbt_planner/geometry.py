"""analytic primitives shared by the depth simulator and the obstacle clearance"""
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from nbt_planner.utils import ValidationError

# smallest accepted ray parameter, rays never hit their own origin
T_EPSILON = 1e-9


def _vector(value, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=float).reshape(-1)
    if array.shape != (3,) or not np.all(np.isfinite(array)):
        raise ValidationError(f"{name} must be a finite 3D vector, got {value}")
    return array


@dataclass(frozen=True)
class Sphere:
    center: Tuple[float, float, float]
    radius: float
    obstacle: bool = True

    def __post_init__(self):
        _vector(self.center, "sphere center")
        if not self.radius > 0:
            raise ValidationError(f"sphere radius must be positive, got {self.radius}")

    def translated(self, offset: np.ndarray) -> "Sphere":
        return replace(self, center=tuple(np.asarray(self.center) + offset))

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        center = np.asarray(self.center)
        oc = origins - center
        b = np.einsum("ij,ij->i", oc, directions)
        a = np.einsum("ij,ij->i", directions, directions)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - a * c
        t = np.full(len(origins), np.inf)
        hit = disc >= 0
        root = np.sqrt(np.where(hit, disc, 0.0))
        near = (-b - root) / a
        far = (-b + root) / a
        t = np.where(hit & (near > T_EPSILON), near, t)
        t = np.where(hit & (near <= T_EPSILON) & (far > T_EPSILON), far, t)
        return t

    def signed_distance(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        diff = np.atleast_2d(points) - np.asarray(self.center)
        norm = np.linalg.norm(diff, axis=1)
        safe = np.where(norm > 1e-12, norm, 1.0)
        gradient = diff / safe[:, None]
        gradient[norm <= 1e-12] = (0.0, 0.0, 1.0)
        return norm - self.radius, gradient


@dataclass(frozen=True)
class AxisBox:
    lower: Tuple[float, float, float]
    upper: Tuple[float, float, float]
    obstacle: bool = True

    def __post_init__(self):
        lower = _vector(self.lower, "box lower")
        upper = _vector(self.upper, "box upper")
        if np.any(lower >= upper):
            raise ValidationError(f"box lower {self.lower} must be below upper {self.upper}")

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lower) + np.asarray(self.upper)) / 2.0

    @property
    def half_extent(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / 2.0

    def translated(self, offset: np.ndarray) -> "AxisBox":
        return replace(
            self,
            lower=tuple(np.asarray(self.lower) + offset),
            upper=tuple(np.asarray(self.upper) + offset),
        )

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """slab method"""
        lower = np.asarray(self.lower)
        upper = np.asarray(self.upper)
        with np.errstate(divide="ignore", invalid="ignore"):
            inverse = 1.0 / directions
            t1 = (lower - origins) * inverse
            t2 = (upper - origins) * inverse
        parallel = directions == 0.0
        inside_slab = (origins >= lower) & (origins <= upper)
        t_low = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
        t_high = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
        t_near = t_low.max(axis=1)
        t_far = t_high.min(axis=1)
        hit = (t_near <= t_far) & (t_far > T_EPSILON)
        t = np.where(t_near > T_EPSILON, t_near, t_far)
        return np.where(hit, t, np.inf)

    def signed_distance(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        diff = np.atleast_2d(points) - self.center
        q = np.abs(diff) - self.half_extent
        outside_q = np.maximum(q, 0.0)
        outside = np.linalg.norm(outside_q, axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        sign = np.where(diff >= 0.0, 1.0, -1.0)
        gradient = np.zeros_like(diff)
        is_outside = outside > 0.0
        gradient[is_outside] = (
            sign[is_outside] * outside_q[is_outside] / outside[is_outside][:, None]
        )
        axis = np.argmax(q, axis=1)
        rows = np.nonzero(~is_outside)[0]
        gradient[rows, axis[rows]] = sign[rows, axis[rows]]
        return outside + inside, gradient


@dataclass(frozen=True)
class Plane:
    point: Tuple[float, float, float]
    normal: Tuple[float, float, float]
    obstacle: bool = False
    _unit: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _vector(self.point, "plane point")
        normal = _vector(self.normal, "plane normal")
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            raise ValidationError("plane normal must be non-zero")
        object.__setattr__(self, "_unit", normal / norm)

    def translated(self, offset: np.ndarray) -> "Plane":
        return replace(self, point=tuple(np.asarray(self.point) + offset))

    def intersect(self, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
        denominator = directions @ self._unit
        numerator = (np.asarray(self.point) - origins) @ self._unit
        with np.errstate(divide="ignore", invalid="ignore"):
            t = numerator / denominator
        valid = (np.abs(denominator) > 1e-12) & (t > T_EPSILON)
        return np.where(valid, t, np.inf)

    def signed_distance(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """half-space below the plane is solid"""
        points = np.atleast_2d(points)
        distance = (points - np.asarray(self.point)) @ self._unit
        return distance, np.tile(self._unit, (len(points), 1))
