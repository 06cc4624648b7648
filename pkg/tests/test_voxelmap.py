import numpy as np
import pytest

from nbt_planner import ValidationError, VoxelMap, downsample_cloud, integrate_cloud
from nbt_planner.voxelmap import (
    Box,
    OccupancyParams,
    VoxelCell,
    VoxelState,
    classify,
    count_states,
    dump_map,
    fill_occupied,
    load_map,
    occupied_volume,
)

ORIGIN = (0.05, 0.05, 0.05)


def test_single_hit_endpoint_occupied():
    voxel_map = integrate_cloud(VoxelMap(0.1), ORIGIN, [(1.05, 0.05, 0.05)])
    state, probability = classify(voxel_map, (10, 0, 0))
    assert state == VoxelState.OCCUPIED
    assert probability == pytest.approx(0.7)


def test_traversed_voxels_free():
    voxel_map = integrate_cloud(VoxelMap(0.1), ORIGIN, [(1.05, 0.05, 0.05)])
    for ix in range(10):
        state, probability = classify(voxel_map, (ix, 0, 0))
        assert state == VoxelState.FREE
        assert probability == pytest.approx(0.4)
    expected = {"unknown": 0, "free": 10, "occupied": 1}
    assert expected == count_states(voxel_map)


def test_single_miss_is_free():
    voxel_map = integrate_cloud(VoxelMap(0.1), ORIGIN, [(0.55, 0.05, 0.05)])
    state, _ = classify(voxel_map, (2, 0, 0))
    assert state == VoxelState.FREE


def test_untouched_voxel_unknown():
    voxel_map = integrate_cloud(VoxelMap(0.1), ORIGIN, [(1.05, 0.05, 0.05)])
    assert voxel_map.cell((0, 5, 0)) is None
    assert (VoxelState.UNKNOWN, 0.5) == classify(voxel_map, (0, 5, 0))


def test_repeated_hits_clamped():
    voxel_map = VoxelMap(0.1)
    for _ in range(50):
        integrate_cloud(voxel_map, ORIGIN, [(1.05, 0.05, 0.05)])
    state, probability = classify(voxel_map, (10, 0, 0))
    assert state == VoxelState.OCCUPIED
    assert probability == pytest.approx(0.97, abs=1e-12)
    _, free_probability = classify(voxel_map, (3, 0, 0))
    assert free_probability == pytest.approx(0.12, abs=1e-12)


def test_rays_beyond_max_range_only_carve():
    voxel_map = VoxelMap(0.1, OccupancyParams(max_range=0.5))
    integrate_cloud(voxel_map, ORIGIN, [(1.05, 0.05, 0.05)])
    assert voxel_map.cell((10, 0, 0)) is None
    assert count_states(voxel_map)["occupied"] == 0
    assert classify(voxel_map, (3, 0, 0))[0] == VoxelState.FREE


def test_map_bounds_drop_outside_updates():
    bounds = Box(lower=(0.0, 0.0, 0.0), upper=(0.5, 1.0, 1.0))
    voxel_map = integrate_cloud(VoxelMap(0.1, bounds=bounds), ORIGIN, [(1.05, 0.05, 0.05)])
    assert voxel_map.cell((10, 0, 0)) is None
    assert voxel_map.cell((2, 0, 0)) is not None
    assert len(voxel_map) == 5


def test_empty_cloud_keeps_map():
    voxel_map = integrate_cloud(VoxelMap(0.1), ORIGIN, [])
    assert len(voxel_map) == 0


def test_invalid_inputs():
    with pytest.raises(ValidationError):
        VoxelMap(0.0)
    with pytest.raises(ValidationError):
        OccupancyParams(p_hit=0.4)
    with pytest.raises(ValidationError):
        integrate_cloud(VoxelMap(0.1), ORIGIN, [(np.nan, 0.0, 0.0)])
    with pytest.raises(ValidationError):
        integrate_cloud(VoxelMap(0.1), (0.0, 0.0), [(1.0, 0.0, 0.0)])


def test_set_cell_clamps_log_odds():
    voxel_map = VoxelMap(0.1)
    voxel_map.set_cell((1, 2, 3), VoxelCell(log_odds=100.0, observed=True))
    expected = voxel_map.params.l_max
    assert expected == voxel_map.cell((1, 2, 3)).log_odds


def test_occupied_volume_counts_region_only():
    voxel_map = VoxelMap(1.0)
    inside = [(0, 0, 0), (1, 0, 0), (2, 0, 0)]
    outside = [(10, 0, 0), (11, 0, 0)]
    assert 5 == fill_occupied(voxel_map, np.array(inside + outside))
    region = Box(lower=(0.0, 0.0, 0.0), upper=(3.0, 1.0, 1.0))
    assert 3 == occupied_volume(voxel_map, region)


def test_fill_occupied_respects_bounds():
    bounds = Box(lower=(0.0, 0.0, 0.0), upper=(2.0, 2.0, 2.0))
    voxel_map = VoxelMap(1.0, bounds=bounds)
    assert 1 == fill_occupied(voxel_map, np.array([(1, 1, 1), (5, 5, 5)]))


def test_downsample_cube_corners_to_center():
    corners = [
        (x, y, z) for x in (0.1, 1.9) for y in (0.1, 1.9) for z in (0.1, 1.9)
    ]
    result = downsample_cloud(corners, 2.0)
    assert result.shape == (1, 3)
    np.testing.assert_allclose(result[0], (1.0, 1.0, 1.0))


def test_downsample_one_centroid_per_cell_in_key_order():
    points = [(1.2, 0.0, 0.0), (0.2, 0.0, 0.0), (0.4, 0.0, 0.0), (1.4, 0.0, 0.0)]
    result = downsample_cloud(points, 1.0)
    np.testing.assert_allclose(result, [(0.3, 0.0, 0.0), (1.3, 0.0, 0.0)])


def test_downsample_edge_cases():
    assert downsample_cloud([], 0.1).shape == (0, 3)
    with pytest.raises(ValidationError):
        downsample_cloud([(0.0, 0.0, 0.0)], 0.0)


def test_snapshot_gains():
    voxel_map = integrate_cloud(VoxelMap(0.1), ORIGIN, [(0.35, 0.05, 0.05)])
    snapshot = voxel_map.snapshot()
    expected_gains = [0.4, 0.4, 0.4, 0.3]
    np.testing.assert_allclose(snapshot.gains[:, 0, 0], expected_gains)
    assert snapshot.occupied[:, 0, 0].tolist() == [False, False, False, True]
    assert snapshot.lower.tolist() == [0, 0, 0]
    with pytest.raises(ValueError):
        snapshot.gains[0, 0, 0] = 1.0


def test_snapshot_region_and_empty_map():
    voxel_map = integrate_cloud(VoxelMap(0.1), ORIGIN, [(0.35, 0.05, 0.05)])
    region = Box(lower=(0.2, 0.0, 0.0), upper=(0.4, 0.1, 0.1))
    snapshot = voxel_map.snapshot(region)
    assert snapshot.lower.tolist() == [2, 0, 0]
    assert snapshot.gains.shape == (2, 1, 1)
    assert VoxelMap(0.1).snapshot().gains.shape == (0, 0, 0)


def test_map_dump_and_load(tmp_path):
    voxel_map = integrate_cloud(VoxelMap(0.1), ORIGIN, [(0.35, 0.25, 0.05)])
    path = str(tmp_path / "map.txt")
    dump_map(voxel_map, path)
    loaded = load_map(path)
    assert loaded.resolution == voxel_map.resolution
    assert list(loaded.cells()) == list(voxel_map.cells())


def test_load_map_rejects_other_files(tmp_path):
    path = tmp_path / "cloud.txt"
    path.write_text("0 0 0\n")
    with pytest.raises(ValidationError):
        load_map(str(path))


def test_integration_is_additive():
    rng = np.random.default_rng(5)
    first = rng.uniform((0.5, -0.4, -0.4), (1.5, 0.4, 0.4), (60, 3))
    second = rng.uniform((0.3, -0.6, -0.2), (1.2, 0.6, 0.5), (60, 3))
    in_two = integrate_cloud(VoxelMap(0.1), ORIGIN, first)
    integrate_cloud(in_two, ORIGIN, second)
    in_one = integrate_cloud(VoxelMap(0.1), ORIGIN, np.vstack([first, second]))
    assert list(in_one.cells()) == list(in_two.cells())


def test_downsample_matches_bucketing():
    rng = np.random.default_rng(8)
    points = rng.uniform(0.0, 1.0, (1000, 3))
    buckets = {}
    for point in points:
        buckets.setdefault(tuple(np.floor(point / 0.1).astype(int)), []).append(point)
    expected = np.array([np.mean(buckets[key], axis=0) for key in sorted(buckets)])
    result = downsample_cloud(points, 0.1)
    assert expected.shape == result.shape
    assert np.allclose(expected, result)


def test_occupied_volume_matches_full_scan():
    rng = np.random.default_rng(9)
    voxel_map = VoxelMap(0.1)
    fill_occupied(voxel_map, rng.integers(-10, 10, (300, 3)))
    integrate_cloud(voxel_map, ORIGIN, rng.uniform(-1.0, 1.0, (200, 3)))
    region = Box(lower=(-0.55, -0.7, -0.3), upper=(0.4, 0.65, 0.9))
    expected = 0
    for key, _ in voxel_map.cells():
        center = voxel_map.key_to_center(key)
        inside = all(lo <= c <= hi for lo, c, hi in zip(region.lower, center, region.upper))
        if inside and classify(voxel_map, key)[0] == VoxelState.OCCUPIED:
            expected += 1
    assert expected > 0
    assert expected == occupied_volume(voxel_map, region)
