import math

import numpy as np
import pytest

from nbt_planner import CameraModel, IgConfig, ValidationError, VoxelMap, compute_distribution, integrate_cloud
from nbt_planner.ig_engine import (
    InformationDistribution,
    benchmark,
    endpoints_for,
    far_plane_offsets,
    frustum_endpoints,
    perspective_from_sample,
    ray_gain,
    reach_region,
    open_unit_samples,
    sample_arrays,
    sample_perspectives,
    write_benchmark_csv,
)
from nbt_planner.kernels import perspective_gain
from nbt_planner.voxelmap import MapSnapshot, VoxelCell

CAMERA = CameraModel(fov_h=math.radians(75), fov_v=math.radians(65), range=3.86)


def unknown_snapshot(resolution=1.0):
    return VoxelMap(resolution).snapshot()


def dense_snapshot(gains, occupied, resolution=1.0):
    return MapSnapshot(
        resolution=resolution,
        lower=np.zeros(3, dtype=np.int64),
        gains=np.ascontiguousarray(gains, dtype=float),
        occupied=np.ascontiguousarray(occupied, dtype=bool),
    )


def observed_map():
    voxel_map = VoxelMap(0.05)
    rng = np.random.default_rng(3)
    for _ in range(3):
        points = rng.uniform((0.5, -0.3, -0.3), (0.7, 0.3, 0.3), (200, 3))
        integrate_cloud(voxel_map, (-0.5, 0.0, 0.0), points)
    return voxel_map


def test_perspective_from_forced_sample():
    result = perspective_from_sample((1.0, 0.0, 0.0), 1.0, 1.0, (0.0, 0.0, 0.0))
    assert result.origin == pytest.approx((1.0, 0.0, 0.0))
    assert result.direction == pytest.approx((-1.0, 0.0, 0.0))


def test_perspective_points_at_poi():
    poi = np.array((0.3, -0.2, 1.0))
    result = perspective_from_sample((0.0, 2.0, 0.0), 0.125, 2.0, poi)
    np.testing.assert_allclose(result.origin, poi + (0.0, 1.0, 0.0))
    np.testing.assert_allclose(result.direction, (0.0, -1.0, 0.0))


def test_degenerate_sample_rejected():
    with pytest.raises(ValidationError):
        perspective_from_sample((0.0, 0.0, 0.0), 0.5, 1.0, (0.0, 0.0, 0.0))


def test_samples_uniform_in_ball():
    origins, directions = sample_arrays(IgConfig(poi=(1.0, 2.0, 3.0), r_s=1.0, n_p=100000, rng_seed=1))
    radii = np.linalg.norm(origins - (1.0, 2.0, 3.0), axis=1)
    assert np.all(radii <= 1.0 + 1e-12)
    # volume fraction of the inner ball of radius 0.5
    assert 0.125 == pytest.approx(np.mean(radii <= 0.5), abs=0.01)
    np.testing.assert_allclose(np.linalg.norm(directions, axis=1), 1.0)
    # every direction points at the poi
    towards = (1.0, 2.0, 3.0) - origins
    cosine = np.einsum("ij,ij->i", towards, directions) / radii
    np.testing.assert_allclose(cosine, 1.0)


def test_sampling_deterministic_per_seed():
    cfg = IgConfig(n_p=50, rng_seed=11)
    first = sample_perspectives(cfg)
    second = sample_perspectives(cfg)
    assert first == second
    other = sample_perspectives(IgConfig(n_p=50, rng_seed=12))
    assert first != other


def test_far_plane_half_extent():
    assert 2.0 == pytest.approx(CameraModel(math.pi / 2, math.pi / 2, 2.0).d_h)
    assert math.sqrt(3.0) == pytest.approx(CameraModel(math.pi / 3, math.pi / 3, 3.0).d_h)


def test_endpoint_count():
    offsets = far_plane_offsets(CameraModel(math.pi / 2, math.pi / 2, 2.0), 0.01, 100)
    # 5 x 5 grid and 4 corners
    assert 29 == len(offsets)


def test_endpoints_include_corners_on_far_plane():
    camera = CameraModel(math.pi / 2, math.pi / 2, 2.0)
    persp = perspective_from_sample((1.0, 0.0, 0.0), 1.0, 1.0, (0.0, 0.0, 0.0))
    endpoints = frustum_endpoints(persp, camera, 0.01, 100)
    # far plane at x = 1 - 2
    np.testing.assert_allclose(endpoints[:, 0], -1.0)
    corners = endpoints[-4:]
    np.testing.assert_allclose(np.abs(corners[:, 1:]), 2.0)
    np.testing.assert_allclose(endpoints[12], (-1.0, 0.0, 0.0), atol=1e-12)


def test_invalid_configs():
    with pytest.raises(ValidationError):
        IgConfig(n_p=0)
    with pytest.raises(ValidationError):
        IgConfig(s_g=0.5)
    with pytest.raises(ValidationError):
        IgConfig(r_s=0.0)
    with pytest.raises(ValidationError):
        CameraModel(fov_h=math.pi, fov_v=1.0, range=1.0)
    with pytest.raises(ValidationError):
        compute_distribution(unknown_snapshot(), IgConfig(n_p=2), CAMERA, mode="gpu")


def test_ray_through_unknown_voxels():
    result = ray_gain(unknown_snapshot(), (0.5, 0.5, 0.5), (9.5, 0.5, 0.5))
    assert 10.0 == result


def test_ray_stops_at_occupied_first_voxel():
    snapshot = dense_snapshot(np.zeros((1, 1, 1)), np.ones((1, 1, 1)))
    assert 0.0 == ray_gain(snapshot, (0.5, 0.5, 0.5), (9.5, 0.5, 0.5))


def test_ray_counts_occupied_voxel_then_stops():
    gains = np.full((10, 1, 1), 0.4)
    occupied = np.zeros((10, 1, 1), dtype=bool)
    gains[3] = 0.25
    occupied[3] = True
    snapshot = dense_snapshot(gains, occupied)
    assert 0.4 * 3 + 0.25 == pytest.approx(ray_gain(snapshot, (0.5, 0.5, 0.5), (9.5, 0.5, 0.5)))


def test_ray_with_coincident_ends_rejected():
    with pytest.raises(ValidationError):
        ray_gain(unknown_snapshot(), (0.5, 0.5, 0.5), (0.5, 0.5, 0.5))


def test_single_ray_perspective_gain():
    snapshot = unknown_snapshot()
    endpoints = np.array([(6.5, 0.5, 0.5)])
    result = perspective_gain(
        np.array((0.5, 0.5, 0.5)), endpoints, 1.0, snapshot.gains, snapshot.occupied, snapshot.lower
    )
    assert 7.0 == result


def oracle_ray_gain(gains, occupied, origin, endpoint):
    """slab test of every voxel in the bounding range, visited by entry parameter"""
    low = np.floor(np.minimum(origin, endpoint)).astype(int)
    high = np.floor(np.maximum(origin, endpoint)).astype(int)
    delta = endpoint - origin
    crossed = []
    for ix in range(low[0], high[0] + 1):
        for iy in range(low[1], high[1] + 1):
            for iz in range(low[2], high[2] + 1):
                cell = np.array((ix, iy, iz), dtype=float)
                t1 = (cell - origin) / delta
                t2 = (cell + 1.0 - origin) / delta
                t_enter = max(np.max(np.minimum(t1, t2)), 0.0)
                t_exit = min(np.min(np.maximum(t1, t2)), 1.0)
                if t_exit > t_enter:
                    crossed.append((t_enter, (ix, iy, iz)))
    total = 0.0
    for _, key in sorted(crossed):
        total += gains[key]
        if occupied[key]:
            break
    return total


def test_ray_gain_matches_brute_force_oracle():
    rng = np.random.default_rng(2024)
    gains = rng.uniform(0.0, 1.0, (8, 8, 8))
    occupied = rng.random((8, 8, 8)) < 0.1
    snapshot = dense_snapshot(gains, occupied)
    for _ in range(1000):
        origin = rng.uniform(0.0, 8.0, 3)
        endpoint = rng.uniform(0.0, 8.0, 3)
        expected = oracle_ray_gain(gains, occupied, origin, endpoint)
        assert expected == pytest.approx(ray_gain(snapshot, origin, endpoint), abs=1e-9)


def test_distribution_of_unknown_map():
    cfg = IgConfig(poi=(0.0, 0.0, 0.0), r_s=0.5, n_p=20, s_g=100, rng_seed=5)
    result = compute_distribution(unknown_snapshot(0.05), cfg, CAMERA, mode="sequential")
    assert 20 == len(result)
    assert np.all(result.gains >= 1.0)
    assert 20 == len(result.best(100))


def test_parallel_equals_sequential():
    snapshot = observed_map().snapshot()
    cfg = IgConfig(poi=(0.6, 0.0, 0.0), r_s=0.5, n_p=64, s_g=20, rng_seed=9)
    sequential = compute_distribution(snapshot, cfg, CAMERA, mode="sequential")
    parallel = compute_distribution(snapshot, cfg, CAMERA, mode="parallel")
    assert np.array_equal(sequential.gains, parallel.gains)
    assert np.array_equal(sequential.origins, parallel.origins)


def test_distribution_deterministic_and_read_only():
    snapshot = observed_map().snapshot()
    cfg = IgConfig(poi=(0.6, 0.0, 0.0), r_s=0.5, n_p=16, s_g=50, rng_seed=4)
    first = compute_distribution(snapshot, cfg, CAMERA)
    second = compute_distribution(snapshot, cfg, CAMERA)
    assert np.array_equal(first.gains, second.gains)
    with pytest.raises(ValueError):
        first.gains[0] = 0.0


def test_best_and_export(tmp_path):
    distribution = InformationDistribution(
        origins=np.array([(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0)]),
        gains=np.array([1.0, 3.0, 2.0]),
        ray_count=5,
    )
    best = distribution.best(2)
    assert [3.0, 2.0] == [item.gain for item in best]
    assert (1.0, 0.0, 0.0) == best[0].origin
    assert 2.0 == pytest.approx(distribution.mean_gain)
    path = tmp_path / "id_0000.txt"
    distribution.export(str(path))
    lines = path.read_text().splitlines()
    assert ["0 0 0 1", "1 0 0 3", "2 0 0 2"] == lines


def test_reach_region_holds_all_endpoints():
    cfg = IgConfig(poi=(1.0, 1.0, 1.0), r_s=0.5, n_p=30, s_g=50, rng_seed=2)
    region = reach_region(cfg, CAMERA)
    origins, directions = sample_arrays(cfg)
    endpoints = endpoints_for(origins, directions, CAMERA, 0.05, cfg.s_g).reshape(-1, 3)
    assert np.all(region.contains(endpoints))


def test_benchmark_smoke(tmp_path):
    rows = benchmark(unknown_snapshot(0.05), CAMERA, [(10, 100.0)], iterations=1)
    assert [(10, 100.0, "sequential"), (10, 100.0, "parallel")] == [
        (row.n_p, row.s_g, row.mode) for row in rows
    ]
    assert all(row.mean_s > 0 and row.std_s == 0.0 for row in rows)
    path = tmp_path / "benchmark.csv"
    write_benchmark_csv(rows, str(path))
    lines = path.read_text().splitlines()
    assert "n_p,s_g,mode,mean_s,std_s" == lines[0]
    assert lines[1].startswith("10,100,sequential,")


def test_benchmark_needs_iterations():
    with pytest.raises(ValidationError):
        benchmark(unknown_snapshot(), CAMERA, [(10, 100.0)], iterations=0)


class ZerosFirst:
    """generator stand-in whose first draw is all zeros"""

    def __init__(self):
        self.calls = 0

    def random(self, size):
        self.calls += 1
        return np.zeros(size) if self.calls == 1 else np.full(size, 0.25)


def test_radial_samples_exclude_interval_ends():
    rng = ZerosFirst()
    assert [0.25, 0.25, 0.25] == list(open_unit_samples(rng, 3))
    assert 2 == rng.calls
    values = open_unit_samples(np.random.default_rng(0), 10000)
    assert np.all((values > 0.0) & (values < 1.0))


def test_ray_gain_rises_when_a_voxel_becomes_unknown():
    voxel_map = VoxelMap(1.0)
    for ix in range(8):
        voxel_map.set_cell((ix, 0, 0), VoxelCell(math.log(0.3 / 0.7), True))
    origin, endpoint = (0.5, 0.5, 0.5), (7.5, 0.5, 0.5)
    before = voxel_map.snapshot()
    g_prev = before.gains[3, 0, 0]
    assert 0.3 == pytest.approx(g_prev)

    voxel_map.set_cell((3, 0, 0), VoxelCell(0.0, False))
    after = voxel_map.snapshot()
    expected = ray_gain(before, origin, endpoint) + 1.0 - g_prev
    assert expected == pytest.approx(ray_gain(after, origin, endpoint), abs=1e-12)
