"""
numba kernels for voxel traversal

All traversals walk voxels in index space with an Amanatides & Woo incremental
stepping: the axis with the smallest parametric boundary distance advances first,
ties go to the lowest axis (x, then y, then z), and only axes that have not yet
reached the endpoint voxel may step, so every walk ends exactly in the endpoint voxel.

The same per-perspective function backs the sequential and the parallel
distribution kernels, which keeps their results bit-identical.
"""
import math

import numpy as np
from numba import njit, prange


@njit(cache=False)
def _walk_setup(origin, endpoint, resolution):
    current = np.empty(3, dtype=np.int64)
    last = np.empty(3, dtype=np.int64)
    step = np.zeros(3, dtype=np.int64)
    t_max = np.empty(3)
    t_delta = np.empty(3)
    n_steps = 0
    for axis in range(3):
        current[axis] = int(math.floor(origin[axis] / resolution))
        last[axis] = int(math.floor(endpoint[axis] / resolution))
        delta = endpoint[axis] - origin[axis]
        if delta > 0.0:
            step[axis] = 1
            t_max[axis] = ((current[axis] + 1) * resolution - origin[axis]) / delta
            t_delta[axis] = resolution / delta
        elif delta < 0.0:
            step[axis] = -1
            t_max[axis] = (current[axis] * resolution - origin[axis]) / delta
            t_delta[axis] = -resolution / delta
        else:
            t_max[axis] = np.inf
            t_delta[axis] = np.inf
        n_steps += abs(last[axis] - current[axis])
    return current, last, step, t_max, t_delta, n_steps


@njit(cache=False)
def _next_axis(current, last, t_max):
    best = -1
    best_t = np.inf
    for axis in range(3):
        if current[axis] != last[axis]:
            if best == -1 or t_max[axis] < best_t:
                best = axis
                best_t = t_max[axis]
    return best


@njit(cache=False)
def segment_voxel_count(origin, endpoint, resolution):
    count = 0
    for axis in range(3):
        count += abs(
            int(math.floor(endpoint[axis] / resolution))
            - int(math.floor(origin[axis] / resolution))
        )
    return count + 1


@njit(cache=False)
def segment_voxels(origin, endpoint, resolution, out, offset):
    """write keys of all voxels from origin to endpoint (inclusive) into out[offset:]"""
    current, last, step, t_max, t_delta, n_steps = _walk_setup(
        origin, endpoint, resolution
    )
    out[offset, 0] = current[0]
    out[offset, 1] = current[1]
    out[offset, 2] = current[2]
    for i in range(n_steps):
        axis = _next_axis(current, last, t_max)
        current[axis] += step[axis]
        t_max[axis] += t_delta[axis]
        out[offset + i + 1, 0] = current[0]
        out[offset + i + 1, 1] = current[1]
        out[offset + i + 1, 2] = current[2]
    return n_steps + 1


@njit(cache=False)
def _lookup(gains, occupied, lower, ix, iy, iz):
    lx = ix - lower[0]
    ly = iy - lower[1]
    lz = iz - lower[2]
    if (
        lx < 0
        or ly < 0
        or lz < 0
        or lx >= gains.shape[0]
        or ly >= gains.shape[1]
        or lz >= gains.shape[2]
    ):
        # outside of the stored region everything is unknown
        return 1.0, False
    return gains[lx, ly, lz], occupied[lx, ly, lz]


@njit(cache=False)
def ray_gain(origin, endpoint, resolution, gains, occupied, lower):
    current, last, step, t_max, t_delta, n_steps = _walk_setup(
        origin, endpoint, resolution
    )
    gain, is_occupied = _lookup(
        gains, occupied, lower, current[0], current[1], current[2]
    )
    total = gain
    if is_occupied:
        return total
    for _ in range(n_steps):
        axis = _next_axis(current, last, t_max)
        current[axis] += step[axis]
        t_max[axis] += t_delta[axis]
        gain, is_occupied = _lookup(
            gains, occupied, lower, current[0], current[1], current[2]
        )
        total += gain
        if is_occupied:
            break
    return total


@njit(cache=False)
def perspective_gain(origin, endpoints, resolution, gains, occupied, lower):
    total = 0.0
    for k in range(endpoints.shape[0]):
        total += ray_gain(origin, endpoints[k], resolution, gains, occupied, lower)
    return total / endpoints.shape[0]


@njit(cache=False)
def distribution_sequential(origins, endpoints, resolution, gains, occupied, lower):
    out = np.empty(origins.shape[0])
    for j in range(origins.shape[0]):
        out[j] = perspective_gain(
            origins[j], endpoints[j], resolution, gains, occupied, lower
        )
    return out


@njit(parallel=True, cache=False)
def distribution_parallel(origins, endpoints, resolution, gains, occupied, lower):
    out = np.empty(origins.shape[0])
    for j in prange(origins.shape[0]):
        out[j] = perspective_gain(
            origins[j], endpoints[j], resolution, gains, occupied, lower
        )
    return out


@njit(cache=False)
def cloud_updates(origin, points, resolution, max_range, l_hit, l_miss):
    """
    keys and log-odds increments of one cloud, ray by ray in cloud order:
    traversed voxels get l_miss, the endpoint voxel gets l_hit; rays longer than
    max_range are cut at max_range and only carve free space
    """
    n = points.shape[0]
    endpoints = np.empty((n, 3))
    carve_only = np.zeros(n, dtype=np.bool_)
    counts = np.empty(n, dtype=np.int64)
    total = 0
    for r in range(n):
        dist = 0.0
        for axis in range(3):
            dist += (points[r, axis] - origin[axis]) ** 2
        dist = math.sqrt(dist)
        if dist > max_range:
            carve_only[r] = True
            for axis in range(3):
                endpoints[r, axis] = (
                    origin[axis] + (points[r, axis] - origin[axis]) * max_range / dist
                )
        else:
            for axis in range(3):
                endpoints[r, axis] = points[r, axis]
        counts[r] = segment_voxel_count(origin, endpoints[r], resolution)
        total += counts[r]

    keys = np.empty((total, 3), dtype=np.int64)
    deltas = np.empty(total)
    offset = 0
    for r in range(n):
        written = segment_voxels(origin, endpoints[r], resolution, keys, offset)
        for i in range(written - 1):
            deltas[offset + i] = l_miss
        if carve_only[r]:
            deltas[offset + written - 1] = l_miss
        else:
            deltas[offset + written - 1] = l_hit
        offset += written
    return keys, deltas, carve_only.sum()


@njit(cache=False)
def apply_updates(log_odds, observed, slots, deltas, l_min, l_max):
    for i in range(slots.shape[0]):
        slot = slots[i]
        value = log_odds[slot] + deltas[i]
        if value < l_min:
            value = l_min
        elif value > l_max:
            value = l_max
        log_odds[slot] = value
        observed[slot] = True
