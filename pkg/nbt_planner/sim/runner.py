"""
closed sensing and planning loop of one scenario

Every planner period the loop records the metrics at the current camera pose,
checks the goal and executes u_0 of a new horizon plan. Every sensor period it
first renders a depth image, integrates it into the map and pushes a new
information distribution into the buffer.
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from nbt_planner.artifacts import RunArtifacts
from nbt_planner.ig_engine import compute_distribution, reach_region, set_workers
from nbt_planner.infodist import DistributionBuffer, gain_at, orientation_factor, remaining_ig
from nbt_planner.kinematics import KinematicChain, forward_kinematics
from nbt_planner.planner import INFEASIBLE, PlannerContext, receding_horizon_step
from nbt_planner.settings.core import Settings
from nbt_planner.sim.metrics import RunMetrics, v_r
from nbt_planner.sim.scene import Scene, SimCamera, describe, render_depth
from nbt_planner.utils import (
    MetricsError,
    NBTPlannerException,
    UndefinedOrientationError,
    ValidationError,
)
from nbt_planner.voxelmap import VoxelMap, count_states, downsample_cloud, integrate_cloud

logger = logging.getLogger("nbt_planner")

# independent random streams of one seed
SENSOR_STREAM = 1
REFERENCE_STREAM = 2
SAMPLING_STREAM = 3


@dataclass
class RunResult:
    metrics: RunMetrics
    voxel_map: VoxelMap
    reference_map: VoxelMap
    states: np.ndarray
    # u executed in every cycle, states[k + 1] = states[k] + controls[k] * dt
    controls: np.ndarray


def stream_seed(seed: int, stream: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, stream, index]).generate_state(1)[0])


def sense(
    voxel_map: VoxelMap,
    scene: Scene,
    chain: KinematicChain,
    q: np.ndarray,
    cam: SimCamera,
    t: float,
    leaf: float,
    rng: np.random.Generator,
) -> int:
    """render, downsample and integrate one depth image, returns the point count"""
    pose = forward_kinematics(chain, q).camera
    cloud = downsample_cloud(render_depth(scene, pose, cam, t, rng), leaf)
    integrate_cloud(voxel_map, pose.position, cloud)
    return len(cloud)


def new_map(settings: Settings) -> VoxelMap:
    return VoxelMap(
        settings.map.resolution, settings.map.occupancy_params(), settings.map.bounds()
    )


def capture_reference(settings: Settings) -> VoxelMap:
    """map of the object alone seen from a stationary pose"""
    task = settings.task
    pose = np.asarray(task.reference_pose if task.reference_pose is not None else task.start)
    scene = settings.scene.objects_only()
    reference = new_map(settings)
    for frame in range(task.reference_frames):
        rng = np.random.default_rng(stream_seed(task.seed, REFERENCE_STREAM, frame))
        sense(
            reference,
            scene,
            settings.robot,
            pose,
            settings.camera.sim_camera(),
            0.0,
            settings.map.leaf_size,
            rng,
        )
    return reference


def sensor_period_cycles(sensor_rate: float, dt: float) -> int:
    cycles = 1.0 / (sensor_rate * dt)
    if cycles < 1 - 1e-9 or abs(cycles - round(cycles)) > 1e-6:
        raise ValidationError(
            f"sensor period {1.0 / sensor_rate} s must be a multiple of the planner period {dt} s"
        )
    return int(round(cycles))


def run_scenario(
    settings: Settings, artifacts: Optional[RunArtifacts] = None
) -> RunResult:
    if settings.scene is None:
        raise ValidationError(f"{settings.source}: a scenario needs a 'scene' block")
    task, scene, chain = settings.task, settings.scene, settings.robot
    if not task.duration > 0:
        raise MetricsError("empty metrics: zero-duration run")
    cfg = settings.horizon_config()
    cam = settings.camera.model()
    sim_cam = settings.camera.sim_camera()
    idw = settings.ig.idw_params()
    ig_cfg = settings.ig.ig_config(scene.poi, task.seed)
    region = reach_region(ig_cfg, cam)
    sensor_every = sensor_period_cycles(task.sensor_rate, cfg.dt)
    steps = int(round(task.duration / cfg.dt))
    goals = [np.asarray(goal, dtype=float) for goal in task.goal_list()]
    waypoints = np.asarray(task.waypoints, dtype=float) if task.waypoints else None
    threads = set_workers(settings.ig.workers)
    logger.info(
        f"scenario '{task.name}': {describe(scene)}, robot '{chain.name}', "
        f"w_I={cfg.w_i}, seed {task.seed}, {threads} threads"
    )

    reference_map = capture_reference(settings)
    voxel_map = new_map(settings)
    buffer = DistributionBuffer(settings.ig.buffer_size)
    metrics = RunMetrics()
    x = np.asarray(task.start, dtype=float)
    u_prev = np.zeros(chain.n_dof)
    goal_index = 0
    previous = None
    states = [x.copy()]
    controls = []
    current_v_r = current_remaining = float("nan")

    for cycle in range(steps + 1):
        t = cycle * cfg.dt
        if cycle % sensor_every == 0:
            frame = metrics.frames
            rng = np.random.default_rng(stream_seed(task.seed, SENSOR_STREAM, frame))
            points = sense(voxel_map, scene, chain, x, sim_cam, t, settings.map.leaf_size, rng)
            snapshot = voxel_map.snapshot(region)
            frame_cfg = replace(ig_cfg, rng_seed=stream_seed(task.seed, SAMPLING_STREAM, frame))
            distribution = compute_distribution(snapshot, frame_cfg, cam, settings.ig.mode)
            buffer.push(distribution)
            if artifacts is not None:
                artifacts.export_distribution(frame, distribution)
            current_v_r = v_r(voxel_map, reference_map, scene.roi)
            current_remaining = remaining_ig(buffer)
            if len(buffer) == buffer.capacity and np.isnan(metrics.remaining_ig_first_full):
                metrics.remaining_ig_first_full = current_remaining
            metrics.frames += 1
            logger.info(
                f"t={t:.1f} frame {frame}: {points} points, {count_states(voxel_map)}, "
                f"remaining ig {current_remaining:.4f}, v_r {current_v_r:.2f} %"
            )

        pose = forward_kinematics(chain, x).camera
        try:
            factor = orientation_factor(pose, scene.poi, cam, settings.ig.theta_cut)
        except UndefinedOrientationError:
            factor = 0.0
        gain = gain_at(buffer, pose.position, idw)
        metrics.record(t, factor, gain, current_v_r, current_remaining)

        if np.max(np.abs(x - goals[goal_index])) < task.goal_tolerance:
            if goal_index == len(goals) - 1:
                metrics.goal_reached = True
                break
            goal_index += 1
            previous = None
            logger.info(f"t={t:.1f} goal {goal_index} of {len(goals)} reached")
        if cycle == steps:
            break

        ctx = PlannerContext(
            chain=chain,
            x0=x,
            goal=goals[goal_index],
            camera=cam,
            poi=scene.poi,
            obstacles=scene.obstacles_at(t),
            buffer=buffer.view(),
            idw=idw,
            waypoints=waypoints,
            u_prev=u_prev,
            t0=t,
        )
        try:
            u, plan = receding_horizon_step(ctx, cfg, previous)
        except NBTPlannerException as error:
            logger.warning(f"t={t:.1f} planner failed, holding: {error}")
            u, plan = np.zeros(chain.n_dof), None
        if plan is not None and plan.status == INFEASIBLE:
            u = np.zeros(chain.n_dof)
        if plan is None or plan.status == INFEASIBLE:
            metrics.planner_failures += 1
        if plan is not None and artifacts is not None:
            artifacts.append_plan(plan.log_rows(t, cfg.dt))

        x = x + u * cfg.dt
        controls.append(u)
        u_prev = u
        previous = plan
        metrics.cycles += 1
        states.append(x.copy())

    metrics.travel_time = metrics.times[-1]
    logger.info(
        f"scenario '{task.name}' stopped at t={metrics.travel_time:.1f} s, "
        f"goal reached: {metrics.goal_reached}, planner failures: {metrics.planner_failures}"
    )
    if artifacts is not None:
        artifacts.write_maps(voxel_map, reference_map)
        artifacts.close()
    return RunResult(
        metrics=metrics,
        voxel_map=voxel_map,
        reference_map=reference_map,
        states=np.array(states),
        controls=np.array(controls, dtype=float).reshape(-1, chain.n_dof),
    )
