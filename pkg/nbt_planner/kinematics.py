"""
forward kinematics of serial manipulators with revolute standard-DH joints

Frame 0 is the robot base, frame i is the distal frame of joint i. Joint i
rotates about the z axis of frame i - 1. The camera frame is frame N_DoF
composed with the camera mount, its optical axis is the mount's z axis.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from nbt_planner.config_parser import parse_from_file
from nbt_planner.infodist import CameraPose
from nbt_planner.settings.base import Section
from nbt_planner.utils import ValidationError, as_vector

logger = logging.getLogger("nbt_planner")

# clearance reported when there is nothing to collide with
CLEARANCE_SENTINEL = 1e6


@dataclass(frozen=True)
class Joint(Section):
    a: float = 0.0
    alpha: float = 0.0
    d: float = 0.0
    theta_offset: float = 0.0
    lower: float = -np.pi
    upper: float = np.pi
    velocity: float = 1.0
    acceleration: float = 2.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValidationError(f"joint lower limit {self.lower} must be below upper {self.upper}")
        if not (self.velocity > 0 and self.acceleration > 0):
            raise ValidationError("joint velocity and acceleration limits must be positive")


@dataclass(frozen=True)
class LinkSphere(Section):
    link: int
    radius: float
    offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError(f"link sphere radius must be positive, got {self.radius}")
        as_vector(self.offset, 3, "link sphere offset")


@dataclass(frozen=True)
class Mount(Section):
    """fixed transform given as translation and roll-pitch-yaw angles (rad)"""

    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rpy: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def matrix(self) -> np.ndarray:
        transform = np.eye(4)
        transform[:3, :3] = Rotation.from_euler(
            "xyz", as_vector(self.rpy, 3, "rpy")
        ).as_matrix()
        transform[:3, 3] = as_vector(self.translation, 3, "translation")
        return transform


@dataclass(frozen=True)
class KinematicChain:
    joints: Tuple[Joint, ...]
    spheres: Tuple[LinkSphere, ...] = ()
    camera_mount: Mount = field(default_factory=Mount)
    base: Mount = field(default_factory=Mount)
    name: str = "robot"

    def __post_init__(self):
        if not self.joints:
            raise ValidationError("a kinematic chain needs at least one joint")
        for sphere in self.spheres:
            if not 0 <= sphere.link <= len(self.joints):
                raise ValidationError(
                    f"link sphere attached to link {sphere.link}, chain has {len(self.joints)} joints"
                )

    @property
    def n_dof(self) -> int:
        return len(self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([joint.lower for joint in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([joint.upper for joint in self.joints])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([joint.velocity for joint in self.joints])

    @property
    def acceleration(self) -> np.ndarray:
        return np.array([joint.acceleration for joint in self.joints])

    def dh_table(self) -> np.ndarray:
        """rows (a, alpha, d, theta_offset)"""
        return np.array(
            [(joint.a, joint.alpha, joint.d, joint.theta_offset) for joint in self.joints]
        )

    def within_limits(self, q: np.ndarray, tolerance: float = 0.0) -> bool:
        return bool(
            np.all(q >= self.lower - tolerance) and np.all(q <= self.upper + tolerance)
        )


@dataclass(frozen=True)
class FkResult:
    camera: CameraPose
    camera_frame: np.ndarray
    frames: List[np.ndarray]


def joint_state(chain: KinematicChain, q: Sequence[float]) -> np.ndarray:
    return as_vector(q, chain.n_dof, "joint state")


def dh_transforms(dh: np.ndarray, qs: np.ndarray) -> np.ndarray:
    """T = Rz(theta) Tz(d) Tx(a) Rx(alpha) for every state and joint, shape (B, N, 4, 4)"""
    a, alpha, d, offset = dh.T
    theta = qs + offset
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    transforms = np.zeros(qs.shape + (4, 4))
    transforms[..., 0, 0] = ct
    transforms[..., 0, 1] = -st * ca
    transforms[..., 0, 2] = st * sa
    transforms[..., 0, 3] = a * ct
    transforms[..., 1, 0] = st
    transforms[..., 1, 1] = ct * ca
    transforms[..., 1, 2] = -ct * sa
    transforms[..., 1, 3] = a * st
    transforms[..., 2, 1] = sa
    transforms[..., 2, 2] = ca
    transforms[..., 2, 3] = d
    transforms[..., 3, 3] = 1.0
    return transforms


def frames_batch(chain: KinematicChain, qs: np.ndarray) -> np.ndarray:
    """world frames 0..N_DoF for every state, shape (B, N_DoF + 1, 4, 4)"""
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    if qs.shape[1] != chain.n_dof:
        raise ValidationError(
            f"joint states must have {chain.n_dof} entries, got {qs.shape[1]}"
        )
    transforms = dh_transforms(chain.dh_table(), qs)
    frames = np.empty((len(qs), chain.n_dof + 1, 4, 4))
    frames[:, 0] = chain.base.matrix()
    for joint in range(chain.n_dof):
        frames[:, joint + 1] = frames[:, joint] @ transforms[:, joint]
    return frames


def forward_kinematics(chain: KinematicChain, q: Sequence[float]) -> FkResult:
    q = joint_state(chain, q)
    frames = frames_batch(chain, q[None, :])[0]
    camera_frame = frames[-1] @ chain.camera_mount.matrix()
    axis = camera_frame[:3, 2] / np.linalg.norm(camera_frame[:3, 2])
    return FkResult(
        camera=CameraPose(position=tuple(camera_frame[:3, 3]), optical_axis=tuple(axis)),
        camera_frame=camera_frame,
        frames=list(frames),
    )


def camera_poses(chain: KinematicChain, qs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """camera positions and optical axes, shapes (B, 3)"""
    frames = frames_batch(chain, qs)
    camera = frames[:, -1] @ chain.camera_mount.matrix()
    return camera[:, :3, 3], camera[:, :3, 2]


def _point_jacobian(
    frames: np.ndarray, points: np.ndarray, n_joints: int
) -> np.ndarray:
    """jacobian (B, 3, N) of points rigidly attached after joint n_joints"""
    z = frames[:, :-1, :3, 2]
    origins = frames[:, :-1, :3, 3]
    columns = np.cross(z, points[:, None, :] - origins)
    columns[:, n_joints:] = 0.0
    return np.transpose(columns, (0, 2, 1))


def camera_jacobians(
    chain: KinematicChain, qs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """positions (B, 3), axes (B, 3) and their jacobians (B, 3, N)"""
    frames = frames_batch(chain, qs)
    camera = frames[:, -1] @ chain.camera_mount.matrix()
    positions, axes = camera[:, :3, 3], camera[:, :3, 2]
    position_jacobian = _point_jacobian(frames, positions, chain.n_dof)
    z = frames[:, :-1, :3, 2]
    axis_jacobian = np.transpose(np.cross(z, axes[:, None, :]), (0, 2, 1))
    return positions, axes, position_jacobian, axis_jacobian


def sphere_centers(chain: KinematicChain, qs: np.ndarray) -> np.ndarray:
    """world centers of all link spheres, shape (B, S, 3)"""
    return _sphere_centers(chain, frames_batch(chain, qs))


def _sphere_centers(chain: KinematicChain, frames: np.ndarray) -> np.ndarray:
    centers = np.empty((len(frames), len(chain.spheres), 3))
    for num, sphere in enumerate(chain.spheres):
        frame = frames[:, sphere.link]
        centers[:, num] = frame[:, :3, :3] @ np.asarray(sphere.offset) + frame[:, :3, 3]
    return centers


def sphere_jacobians(
    chain: KinematicChain, qs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """centers (B, S, 3) and jacobians (B, S, 3, N)"""
    frames = frames_batch(chain, qs)
    centers = _sphere_centers(chain, frames)
    jacobians = np.empty(centers.shape + (chain.n_dof,))
    for num, sphere in enumerate(chain.spheres):
        jacobians[:, num] = _point_jacobian(frames, centers[:, num], sphere.link)
    return centers, jacobians


def clearance_and_gradient(
    chain: KinematicChain, qs: np.ndarray, obstacles: Sequence
) -> Tuple[np.ndarray, np.ndarray]:
    """
    minimum signed clearance per state (B,) and its gradient w.r.t. q (B, N)

    the gradient is the one of the closest (sphere, obstacle) pair
    """
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    if not obstacles or not chain.spheres:
        return np.full(len(qs), CLEARANCE_SENTINEL), np.zeros(qs.shape)
    centers, jacobians = sphere_jacobians(chain, qs)
    radii = np.array([sphere.radius for sphere in chain.spheres])
    flat = centers.reshape(-1, 3)
    best = np.full(centers.shape[:2], np.inf)
    best_direction = np.zeros(centers.shape)
    for obstacle in obstacles:
        distance, direction = obstacle.signed_distance(flat)
        distance = distance.reshape(centers.shape[:2]) - radii
        closer = distance < best
        best = np.where(closer, distance, best)
        best_direction = np.where(
            closer[..., None], direction.reshape(centers.shape), best_direction
        )
    pair = np.argmin(best, axis=1)
    rows = np.arange(len(qs))
    gradient = np.einsum(
        "bi,bij->bj", best_direction[rows, pair], jacobians[rows, pair]
    )
    return best[rows, pair], gradient


def min_obstacle_clearance(
    chain: KinematicChain, q: Sequence[float], obstacles: Sequence
) -> float:
    """minimum surface-to-surface distance over link spheres and obstacles, negative when penetrating"""
    q = joint_state(chain, q)
    if not obstacles or not chain.spheres:
        return CLEARANCE_SENTINEL
    centers = sphere_centers(chain, q[None, :])[0]
    radii = np.array([sphere.radius for sphere in chain.spheres])
    return float(
        min(np.min(obstacle.signed_distance(centers)[0] - radii) for obstacle in obstacles)
    )


def chain_from_dict(data: dict, source: str = "robot") -> KinematicChain:
    joints = data.get("joint")
    if joints is None:
        raise ValidationError(f"{source}: robot description has no 'joint' blocks")
    if isinstance(joints, dict):
        joints = [joints]
    spheres = data.get("sphere", [])
    if isinstance(spheres, dict):
        spheres = [spheres]
    unknown = sorted(set(data) - {"name", "joint", "sphere", "camera_mount", "base"})
    if unknown:
        raise ValidationError(f"{source}: unknown keys {unknown}")
    return KinematicChain(
        joints=tuple(Joint.init(joint, f"{source}: joint {num}") for num, joint in enumerate(joints)),
        spheres=tuple(
            LinkSphere.init(sphere, f"{source}: sphere {num}") for num, sphere in enumerate(spheres)
        ),
        camera_mount=Mount.init(data.get("camera_mount", {}), f"{source}: camera_mount"),
        base=Mount.init(data.get("base", {}), f"{source}: base"),
        name=str(data.get("name", os.path.splitext(os.path.basename(source))[0])),
    )


def load_robot(path: str) -> KinematicChain:
    if not os.path.isfile(path):
        raise ValidationError(f"robot description file not found: {path}")
    chain = chain_from_dict(parse_from_file(path), source=path)
    logger.info(f"loaded robot '{chain.name}' with {chain.n_dof} joints from {path}")
    return chain
