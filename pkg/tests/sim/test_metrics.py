import json

import numpy as np
import pytest

from nbt_planner import ValidationError, VoxelMap
from nbt_planner.sim.metrics import (
    METRICS_FILE,
    SUMMARY_FILE,
    RunMetrics,
    auc,
    read_metrics,
    recompute_summary,
    v_r,
    write_metrics,
)
from nbt_planner.utils import EmptyReferenceError, MetricsError
from nbt_planner.voxelmap import Box, fill_occupied

ROI = Box(lower=(0.0, 0.0, 0.0), upper=(12.0, 0.1, 0.1))


def occupied_map(count, resolution=0.1):
    voxel_map = VoxelMap(resolution)
    fill_occupied(voxel_map, np.array([(ix, 0, 0) for ix in range(count)]))
    return voxel_map


def test_auc_constant():
    assert 2.0 == pytest.approx(auc([0.0, 1.0, 2.0], [1.0, 1.0, 1.0]))


def test_auc_linear():
    assert 0.5 == pytest.approx(auc([0.0, 0.5, 1.0], [0.0, 0.5, 1.0]))


def test_auc_is_additive():
    times = np.linspace(0.0, 2.0, 21)
    values = np.sin(times) ** 2
    whole = auc(times, values)
    parts = auc(times[:11], values[:11]) + auc(times[10:], values[10:])
    assert whole == pytest.approx(parts)


def test_auc_needs_two_increasing_samples():
    with pytest.raises(MetricsError):
        auc([0.0], [1.0])
    with pytest.raises(MetricsError):
        auc([0.0, 1.0, 1.0], [1.0, 1.0, 1.0])
    with pytest.raises(MetricsError):
        auc([0.0, 1.0], [1.0])


def test_v_r_identical_maps():
    assert 0.0 == v_r(occupied_map(100), occupied_map(100), ROI)


def test_v_r_percentage():
    assert 15.0 == pytest.approx(v_r(occupied_map(115), occupied_map(100), ROI))


def test_v_r_antisymmetric_sign():
    assert v_r(occupied_map(80), occupied_map(100), ROI) < 0
    assert v_r(occupied_map(100), occupied_map(80), ROI) > 0


def test_v_r_empty_reference():
    with pytest.raises(EmptyReferenceError) as e:
        v_r(occupied_map(10), VoxelMap(0.1), ROI)
    assert "empty reference" in str(e.value)


def test_v_r_resolution_mismatch():
    with pytest.raises(ValidationError):
        v_r(occupied_map(10, 0.1), occupied_map(10, 0.2), ROI)


def sample_metrics():
    metrics = RunMetrics()
    for num, t in enumerate((0.0, 0.1, 0.2, 0.3)):
        metrics.record(t, 1.0, 2.0 + num, 5.0 - num, 1.5 - 0.1 * num)
    metrics.travel_time = 0.3
    metrics.cycles = 3
    metrics.frames = 2
    return metrics


def test_summary():
    summary = sample_metrics().summary()
    assert 0.3 == summary["travel_time"]
    assert 2.0 == summary["final_v_r"]
    assert 1.2 == pytest.approx(summary["remaining_ig"])
    assert 4 == summary["samples"]
    # trapezoids of O G = 2, 3, 4, 5
    assert 0.1 * (2.5 + 3.5 + 4.5) == pytest.approx(summary["auc"])


def test_summary_of_empty_run():
    metrics = RunMetrics()
    metrics.record(0.0, 1.0, 1.0, 0.0, 1.0)
    with pytest.raises(MetricsError) as e:
        metrics.summary()
    assert "empty metrics" in str(e.value)


def test_write_read_recompute(tmp_path):
    stored = write_metrics(str(tmp_path), sample_metrics())
    lines = (tmp_path / METRICS_FILE).read_text().splitlines()
    assert "t,O,G,OG,v_r,remaining_ig" == lines[0]
    assert 5 == len(lines)
    recomputed = recompute_summary(str(tmp_path))
    for key in ("auc", "travel_time", "remaining_ig", "final_v_r"):
        assert stored[key] == pytest.approx(recomputed[key], abs=1e-9)
    assert [0.0, 0.1, 0.2, 0.3] == read_metrics(str(tmp_path)).times


def test_truncated_metrics_log(tmp_path):
    write_metrics(str(tmp_path), sample_metrics())
    path = tmp_path / METRICS_FILE
    text = path.read_text().rstrip()
    # drop the last field of the last row
    path.write_text(text[: text.rfind(",")] + "\n")
    with pytest.raises(MetricsError) as e:
        recompute_summary(str(tmp_path))
    assert "row 3 is truncated" in str(e.value)


def test_missing_rows_detected(tmp_path):
    write_metrics(str(tmp_path), sample_metrics())
    path = tmp_path / METRICS_FILE
    path.write_text("\n".join(path.read_text().splitlines()[:-1]) + "\n")
    with pytest.raises(MetricsError) as e:
        recompute_summary(str(tmp_path))
    assert "samples" in str(e.value)


def test_incomplete_run_directory(tmp_path):
    with pytest.raises(MetricsError):
        recompute_summary(str(tmp_path))
    write_metrics(str(tmp_path), sample_metrics())
    summary_path = tmp_path / SUMMARY_FILE
    summary = json.loads(summary_path.read_text())
    summary["finished"] = False
    summary_path.write_text(json.dumps(summary))
    with pytest.raises(MetricsError):
        recompute_summary(str(tmp_path))
