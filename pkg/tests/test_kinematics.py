import math
import os

import numpy as np
import pytest

from nbt_planner import ValidationError
from nbt_planner.geometry import AxisBox, Sphere
from nbt_planner.kinematics import (
    CLEARANCE_SENTINEL,
    Joint,
    KinematicChain,
    LinkSphere,
    Mount,
    camera_jacobians,
    chain_from_dict,
    clearance_and_gradient,
    forward_kinematics,
    load_robot,
    min_obstacle_clearance,
)
from nbt_planner.settings.core import DATA_DIR

UR10 = os.path.join(DATA_DIR, "robots", "ur10.robot")
PLANAR2 = os.path.join(DATA_DIR, "robots", "planar2.robot")


def rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]])


def rot_x(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1, 0, 0, 0], [0, c, -s, 0], [0, s, c, 0], [0, 0, 0, 1.0]])


def shift(x=0.0, z=0.0):
    transform = np.eye(4)
    transform[0, 3] = x
    transform[2, 3] = z
    return transform


def oracle_camera_frame(chain, q):
    frame = chain.base.matrix()
    for joint, angle in zip(chain.joints, q):
        frame = (
            frame
            @ rot_z(angle + joint.theta_offset)
            @ shift(z=joint.d)
            @ shift(x=joint.a)
            @ rot_x(joint.alpha)
        )
    return frame @ chain.camera_mount.matrix()


def test_single_joint_camera_position():
    result = forward_kinematics(KinematicChain(joints=(Joint(a=1.0),)), [0.0])
    np.testing.assert_allclose(result.camera.position, (1.0, 0.0, 0.0))
    np.testing.assert_allclose(result.camera.optical_axis, (0.0, 0.0, 1.0))


def test_identity_chain_returns_base_pose():
    base = Mount(translation=(0.5, -1.0, 2.0))
    chain = KinematicChain(joints=(Joint(), Joint(), Joint()), base=base)
    result = forward_kinematics(chain, [0.0, 0.0, 0.0])
    np.testing.assert_allclose(result.camera.position, (0.5, -1.0, 2.0))
    np.testing.assert_allclose(result.camera_frame, base.matrix())


def test_ur10_matches_transform_product():
    chain = load_robot(UR10)
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = rng.uniform(chain.lower, chain.upper)
        expected = oracle_camera_frame(chain, q)
        result = forward_kinematics(chain, q)
        np.testing.assert_allclose(result.camera_frame, expected, atol=1e-12)
        np.testing.assert_allclose(result.camera.optical_axis, expected[:3, 2], atol=1e-12)


def test_ur10_start_looks_at_demonstrator_poi():
    chain = load_robot(UR10)
    camera = forward_kinematics(chain, [-1.57, 0.0, 0.0, 0.0, 1.0, 0.0]).camera
    np.testing.assert_allclose(camera.position, (-0.2418, 1.3038, 0.0116), atol=1e-3)
    to_poi = np.array((-0.6746, 1.9766, 0.0116)) - camera.position
    cosine = to_poi @ np.asarray(camera.optical_axis) / np.linalg.norm(to_poi)
    assert cosine > 0.999


def test_planar_arm():
    chain = load_robot(PLANAR2)
    assert "planar2" == chain.name
    straight = forward_kinematics(chain, [0.0, 0.0]).camera
    np.testing.assert_allclose(straight.position, (2.0, 0.0, 0.0), atol=1e-12)
    np.testing.assert_allclose(straight.optical_axis, (1.0, 0.0, 0.0), atol=1e-5)
    turned = forward_kinematics(chain, [math.pi / 2, 0.0]).camera
    np.testing.assert_allclose(turned.position, (0.0, 2.0, 0.0), atol=1e-12)
    np.testing.assert_allclose(turned.optical_axis, (0.0, 1.0, 0.0), atol=1e-5)


def test_camera_jacobians_match_finite_differences():
    chain = load_robot(UR10)
    q = np.array([-1.2, -0.4, 0.7, 0.3, 1.1, -0.5])
    positions, axes, position_jacobian, axis_jacobian = camera_jacobians(chain, q[None, :])
    step = 1e-6
    for joint in range(chain.n_dof):
        offset = np.zeros(chain.n_dof)
        offset[joint] = step
        upper = forward_kinematics(chain, q + offset).camera
        lower = forward_kinematics(chain, q - offset).camera
        np.testing.assert_allclose(
            position_jacobian[0, :, joint],
            (np.asarray(upper.position) - lower.position) / (2 * step),
            atol=1e-7,
        )
        np.testing.assert_allclose(
            axis_jacobian[0, :, joint],
            (np.asarray(upper.optical_axis) - lower.optical_axis) / (2 * step),
            atol=1e-7,
        )


def test_clearance_between_spheres():
    chain = KinematicChain(joints=(Joint(),), spheres=(LinkSphere(link=0, radius=0.1),))
    obstacle = Sphere(center=(0.5, 0.0, 0.0), radius=0.2)
    assert 0.2 == pytest.approx(min_obstacle_clearance(chain, [0.0], [obstacle]))


def test_clearance_negative_when_penetrating():
    chain = KinematicChain(joints=(Joint(a=1.0),), spheres=(LinkSphere(link=1, radius=0.1),))
    obstacle = AxisBox(lower=(0.95, -0.5, -0.5), upper=(2.0, 0.5, 0.5))
    assert -0.15 == pytest.approx(min_obstacle_clearance(chain, [0.0], [obstacle]))


def test_clearance_without_obstacles():
    chain = load_robot(UR10)
    assert CLEARANCE_SENTINEL == min_obstacle_clearance(chain, np.zeros(6), [])
    values, gradient = clearance_and_gradient(chain, np.zeros((3, 6)), ())
    assert np.all(values == 1e6)
    assert not np.any(gradient)


def test_clearance_gradient_matches_finite_differences():
    chain = load_robot(PLANAR2)
    obstacles = (Sphere(center=(1.5, 1.0, 0.0), radius=0.2), AxisBox((-1.0, -2.0, -1.0), (0.0, -1.5, 1.0)))
    q = np.array([0.4, -0.3])
    values, gradient = clearance_and_gradient(chain, q[None, :], obstacles)
    assert values[0] == pytest.approx(min_obstacle_clearance(chain, q, obstacles))
    step = 1e-6
    for joint in range(2):
        offset = np.zeros(2)
        offset[joint] = step
        upper = min_obstacle_clearance(chain, q + offset, obstacles)
        lower = min_obstacle_clearance(chain, q - offset, obstacles)
        assert gradient[0, joint] == pytest.approx((upper - lower) / (2 * step), abs=1e-6)


def test_wrong_joint_count():
    with pytest.raises(ValidationError):
        forward_kinematics(load_robot(PLANAR2), [0.0, 0.0, 0.0])


def test_invalid_robot_descriptions():
    with pytest.raises(ValidationError):
        chain_from_dict({"name": "empty"})
    with pytest.raises(ValidationError):
        chain_from_dict({"joint": {"a": 1.0, "lower": 1.0, "upper": -1.0}})
    with pytest.raises(ValidationError):
        chain_from_dict({"joint": {"a": 1.0}, "sphere": {"link": 3, "radius": 0.1}})
    with pytest.raises(ValidationError):
        chain_from_dict({"joint": {"a": 1.0}, "gripper": {}})
    with pytest.raises(ValidationError) as e:
        chain_from_dict({"joint": {"length": 1.0}}, source="arm.robot")
    assert "arm.robot" in str(e.value)


def test_missing_robot_file():
    with pytest.raises(ValidationError) as e:
        load_robot("/nonexistent/arm.robot")
    assert "/nonexistent/arm.robot" in str(e.value)
