import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from nbt_planner.utils import EmptyReferenceError, MetricsError, ValidationError
from nbt_planner.voxelmap import Box, VoxelMap, occupied_volume

logger = logging.getLogger("nbt_planner")

METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"
METRICS_HEADER = ["t", "O", "G", "OG", "v_r", "remaining_ig"]

# tolerance of recomputed against stored summary values
RECOMPUTE_TOLERANCE = 1e-9


def auc(times: Sequence[float], values: Sequence[float]) -> float:
    """trapezoidal area under a sampled series"""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(times) != len(values):
        raise MetricsError("times and values differ in length")
    if len(times) < 2:
        raise MetricsError("area under the curve needs at least 2 samples")
    if np.any(np.diff(times) <= 0):
        raise MetricsError("sample times must be strictly increasing")
    return float(np.sum((values[1:] + values[:-1]) * np.diff(times)) / 2.0)


def v_r(recon_map: VoxelMap, reference_map: VoxelMap, roi: Box) -> float:
    """percentage change of occupied voxels in roi against the reference map"""
    if not math.isclose(recon_map.resolution, reference_map.resolution):
        raise ValidationError(
            f"maps differ in resolution: {recon_map.resolution} vs {reference_map.resolution}"
        )
    reference = occupied_volume(reference_map, roi)
    if reference == 0:
        raise EmptyReferenceError("empty reference")
    return 100.0 * (occupied_volume(recon_map, roi) - reference) / reference


@dataclass
class RunMetrics:
    times: List[float] = field(default_factory=list)
    orientation: List[float] = field(default_factory=list)
    gain: List[float] = field(default_factory=list)
    v_r: List[float] = field(default_factory=list)
    remaining_ig: List[float] = field(default_factory=list)
    travel_time: float = float("nan")
    goal_reached: bool = False
    # remaining ig when the distribution buffer first became full
    remaining_ig_first_full: float = float("nan")
    cycles: int = 0
    frames: int = 0
    planner_failures: int = 0

    def record(self, t: float, orientation: float, gain: float, v_r: float, remaining: float) -> None:
        self.times.append(t)
        self.orientation.append(orientation)
        self.gain.append(gain)
        self.v_r.append(v_r)
        self.remaining_ig.append(remaining)

    @property
    def product(self) -> List[float]:
        return [o * g for o, g in zip(self.orientation, self.gain)]

    @property
    def auc(self) -> float:
        return auc(self.times, self.product)

    def summary(self) -> Dict:
        if len(self.times) < 2:
            raise MetricsError("empty metrics: the run recorded fewer than 2 samples")
        return {
            "auc": self.auc,
            "travel_time": self.travel_time,
            "remaining_ig": self.remaining_ig[-1],
            "remaining_ig_first_full": self.remaining_ig_first_full,
            "final_v_r": self.v_r[-1],
            "goal_reached": self.goal_reached,
            "samples": len(self.times),
            "cycles": self.cycles,
            "frames": self.frames,
            "planner_failures": self.planner_failures,
            "finished": True,
        }

    def rows(self) -> List[list]:
        return [
            [t, o, g, o * g, vr, rem]
            for t, o, g, vr, rem in zip(
                self.times, self.orientation, self.gain, self.v_r, self.remaining_ig
            )
        ]


def write_metrics(run_dir: str, metrics: RunMetrics) -> Dict:
    summary = metrics.summary()
    with open(os.path.join(run_dir, METRICS_FILE), "w", newline="") as csv_file:
        writer = csv.writer(csv_file)
        writer.writerow(METRICS_HEADER)
        writer.writerows(metrics.rows())
    with open(os.path.join(run_dir, SUMMARY_FILE), "w") as summary_file:
        json.dump(summary, summary_file, indent=1)
    return summary


def read_metrics(run_dir: str) -> RunMetrics:
    path = os.path.join(run_dir, METRICS_FILE)
    if not os.path.isfile(path):
        raise MetricsError(f"incomplete run, {path} is missing")
    metrics = RunMetrics()
    with open(path, newline="") as csv_file:
        reader = csv.reader(csv_file)
        if next(reader, None) != METRICS_HEADER:
            raise MetricsError(f"{path}: unexpected header")
        for num, row in enumerate(reader):
            if len(row) != len(METRICS_HEADER):
                raise MetricsError(f"{path}: row {num} is truncated")
            try:
                t, o, g, _, vr, rem = (float(value) for value in row)
            except ValueError as error:
                raise MetricsError(f"{path}: row {num}: {error}") from error
            metrics.record(t, o, g, vr, rem)
    return metrics


def recompute_summary(run_dir: str) -> Dict:
    """summary values recomputed from the metrics log, checked against the stored ones"""
    path = os.path.join(run_dir, SUMMARY_FILE)
    if not os.path.isfile(path):
        raise MetricsError(f"incomplete run, {path} is missing")
    with open(path) as summary_file:
        try:
            stored = json.load(summary_file)
        except json.JSONDecodeError as error:
            raise MetricsError(f"{path}: {error}") from error
    if not stored.get("finished"):
        raise MetricsError(f"incomplete run in {run_dir}")
    metrics = read_metrics(run_dir)
    if len(metrics.times) != stored.get("samples"):
        raise MetricsError(
            f"metrics log holds {len(metrics.times)} samples, summary expects {stored.get('samples')}"
        )
    recomputed = {
        "auc": metrics.auc,
        "travel_time": metrics.times[-1],
        "remaining_ig": metrics.remaining_ig[-1],
        "final_v_r": metrics.v_r[-1],
    }
    for key, value in recomputed.items():
        if not math.isclose(value, stored[key], rel_tol=0.0, abs_tol=RECOMPUTE_TOLERANCE):
            raise MetricsError(f"{key} recomputed as {value}, the run stored {stored[key]}")
    return recomputed
