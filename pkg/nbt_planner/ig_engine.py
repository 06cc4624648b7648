import csv
import logging
import math
import time
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Sequence, Tuple

import numba
import numpy as np

from nbt_planner import kernels
from nbt_planner.utils import ValidationError, as_vector
from nbt_planner.voxelmap import Box, MapSnapshot

logger = logging.getLogger("nbt_planner")

SEQUENTIAL = "sequential"
PARALLEL = "parallel"
MODES = (SEQUENTIAL, PARALLEL)

BENCHMARK_HEADER = ["n_p", "s_g", "mode", "mean_s", "std_s"]


@dataclass(frozen=True)
class CameraModel:
    fov_h: float
    fov_v: float
    range: float

    def __post_init__(self):
        for name in ("fov_h", "fov_v"):
            value = getattr(self, name)
            if not 0.0 < value < math.pi:
                raise ValidationError(f"{name} must lie in (0, pi), got {value}")
        if not self.range > 0:
            raise ValidationError(f"camera range must be positive, got {self.range}")

    @property
    def d_h(self) -> float:
        return self.range * math.tan(self.fov_h / 2.0)

    @property
    def d_v(self) -> float:
        return self.range * math.tan(self.fov_v / 2.0)


@dataclass(frozen=True)
class Perspective:
    origin: Tuple[float, float, float]
    direction: Tuple[float, float, float]


@dataclass(frozen=True)
class IgConfig:
    poi: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    r_s: float = 1.0
    n_p: int = 500
    s_g: float = 100.0
    rng_seed: int = 0

    def __post_init__(self):
        as_vector(self.poi, 3, "poi")
        if not self.r_s > 0:
            raise ValidationError(f"r_s must be positive, got {self.r_s}")
        if int(self.n_p) != self.n_p or self.n_p < 1:
            raise ValidationError(f"n_p must be a positive integer, got {self.n_p}")
        if not self.s_g >= 1:
            raise ValidationError(f"s_g must be at least 1, got {self.s_g}")


@dataclass(frozen=True)
class PerspectiveGain:
    origin: Tuple[float, float, float]
    gain: float
    ray_count: int


@dataclass(frozen=True)
class InformationDistribution:
    """perspectives of one raycasting pass with their mean ray gains"""

    origins: np.ndarray
    gains: np.ndarray
    ray_count: int

    def __post_init__(self):
        if self.origins.ndim != 2 or self.origins.shape[1] != 3:
            raise ValidationError("origins must have shape (N, 3)")
        if self.gains.shape != (len(self.origins),):
            raise ValidationError("one gain per perspective origin is required")
        self.origins.setflags(write=False)
        self.gains.setflags(write=False)

    @classmethod
    def from_gains(cls, gains: Iterable[PerspectiveGain]) -> "InformationDistribution":
        gains = list(gains)
        if not gains:
            raise ValidationError("a distribution needs at least one perspective")
        return cls(
            origins=np.array([gain.origin for gain in gains], dtype=float),
            gains=np.array([gain.gain for gain in gains], dtype=float),
            ray_count=gains[0].ray_count,
        )

    def __len__(self) -> int:
        return len(self.gains)

    def __getitem__(self, index: int) -> PerspectiveGain:
        return PerspectiveGain(
            origin=tuple(float(value) for value in self.origins[index]),
            gain=float(self.gains[index]),
            ray_count=self.ray_count,
        )

    def __iter__(self) -> Iterator[PerspectiveGain]:
        for index in range(len(self)):
            yield self[index]

    @property
    def mean_gain(self) -> float:
        return float(np.mean(self.gains))

    def best(self, count: int = 1) -> List[PerspectiveGain]:
        """perspectives with the highest gain, best first"""
        order = np.argsort(-self.gains, kind="stable")[:count]
        return [self[int(index)] for index in order]

    def export(self, path: str) -> None:
        """ig point cloud, one 'x y z gain' line per perspective"""
        np.savetxt(path, np.column_stack([self.origins, self.gains]), fmt="%.9g")


@dataclass(frozen=True)
class BenchmarkRow:
    n_p: int
    s_g: float
    mode: str
    mean_s: float
    std_s: float


def set_workers(workers: int) -> int:
    """size the numba thread pool, 0 = all available threads"""
    available = numba.config.NUMBA_NUM_THREADS
    threads = available if workers <= 0 else min(workers, available)
    numba.set_num_threads(threads)
    return threads


def perspective_from_sample(
    x: Sequence[float], x_r: float, r_s: float, poi: Sequence[float]
) -> Perspective:
    """scale a normal sample onto the sphere and pull it inside with the cube root of x_r"""
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x)
    if norm < 1e-12:
        raise ValidationError("degenerate normal sample")
    surface = x / norm
    origin = r_s * x_r ** (1.0 / 3.0) * surface + np.asarray(poi, dtype=float)
    return Perspective(origin=tuple(origin), direction=tuple(-surface))


def open_unit_samples(rng: np.random.Generator, count: int) -> np.ndarray:
    """uniform samples on the open interval (0, 1), zeros are redrawn"""
    values = rng.random(count)
    zero = values == 0.0
    while np.any(zero):
        values[zero] = rng.random(int(zero.sum()))
        zero = values == 0.0
    return values


def sample_arrays(cfg: IgConfig) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.rng_seed)
    x = rng.standard_normal((cfg.n_p, 3))
    norms = np.linalg.norm(x, axis=1)
    degenerate = norms < 1e-12
    while np.any(degenerate):
        x[degenerate] = rng.standard_normal((int(degenerate.sum()), 3))
        norms = np.linalg.norm(x, axis=1)
        degenerate = norms < 1e-12
    x_r = open_unit_samples(rng, cfg.n_p)
    surface = x / norms[:, None]
    origins = cfg.r_s * np.cbrt(x_r)[:, None] * surface + np.asarray(cfg.poi, dtype=float)
    return origins, -surface


def sample_perspectives(cfg: IgConfig) -> List[Perspective]:
    origins, directions = sample_arrays(cfg)
    return [
        Perspective(origin=tuple(origin), direction=tuple(direction))
        for origin, direction in zip(origins, directions)
    ]


def frustum_axes(directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """horizontal and vertical far-plane axes, up hint +z or +x for vertical views"""
    directions = np.atleast_2d(directions)
    up = np.tile(np.array([0.0, 0.0, 1.0]), (len(directions), 1))
    vertical_view = np.linalg.norm(np.cross(directions, up), axis=1) < 1e-6
    up[vertical_view] = (1.0, 0.0, 0.0)
    horizontal = np.cross(directions, up)
    horizontal /= np.linalg.norm(horizontal, axis=1)[:, None]
    vertical = np.cross(horizontal, directions)
    return horizontal, vertical


def far_plane_offsets(cam: CameraModel, s_vox: float, s_g: float) -> np.ndarray:
    """(horizontal, vertical) far-plane offsets: the regular grid, then the four corners"""
    spacing = s_g * s_vox
    if not spacing > 0:
        raise ValidationError("endpoint spacing must be positive")
    d_h, d_v = cam.d_h, cam.d_v
    n_h = int(math.floor(d_h / spacing + 1e-9))
    n_v = int(math.floor(d_v / spacing + 1e-9))
    h_values = np.arange(-n_h, n_h + 1) * spacing
    v_values = np.arange(-n_v, n_v + 1) * spacing
    grid = np.array([(h, v) for h in h_values for v in v_values])
    corners = np.array([(-d_h, -d_v), (-d_h, d_v), (d_h, -d_v), (d_h, d_v)])
    return np.vstack([grid, corners])


def endpoints_for(
    origins: np.ndarray,
    directions: np.ndarray,
    cam: CameraModel,
    s_vox: float,
    s_g: float,
) -> np.ndarray:
    """endpoints of all perspectives, shape (N_P, N_E, 3)"""
    offsets = far_plane_offsets(cam, s_vox, s_g)
    horizontal, vertical = frustum_axes(directions)
    centers = origins + directions * cam.range
    return (
        centers[:, None, :]
        + offsets[None, :, 0, None] * horizontal[:, None, :]
        + offsets[None, :, 1, None] * vertical[:, None, :]
    )


def frustum_endpoints(
    persp: Perspective, cam: CameraModel, s_vox: float, s_g: float
) -> np.ndarray:
    origins = np.asarray([persp.origin], dtype=float)
    directions = np.asarray([persp.direction], dtype=float)
    return endpoints_for(origins, directions, cam, s_vox, s_g)[0]


def ray_gain(
    snapshot: MapSnapshot, origin: Sequence[float], endpoint: Sequence[float]
) -> float:
    origin = np.ascontiguousarray(origin, dtype=float)
    endpoint = np.ascontiguousarray(endpoint, dtype=float)
    if np.array_equal(origin, endpoint):
        raise ValidationError("ray origin and endpoint coincide")
    return float(
        kernels.ray_gain(
            origin,
            endpoint,
            snapshot.resolution,
            snapshot.gains,
            snapshot.occupied,
            snapshot.lower,
        )
    )


def reach_region(cfg: IgConfig, cam: CameraModel) -> Box:
    """box that holds every voxel a ray of this configuration can touch"""
    corner_ray = math.sqrt(cam.range**2 + cam.d_h**2 + cam.d_v**2)
    reach = cfg.r_s + corner_ray
    poi = np.asarray(cfg.poi, dtype=float)
    return Box(lower=tuple(poi - reach), upper=tuple(poi + reach))


def compute_distribution(
    snapshot: MapSnapshot,
    cfg: IgConfig,
    cam: CameraModel,
    mode: str = PARALLEL,
) -> InformationDistribution:
    if mode not in MODES:
        raise ValidationError(f"mode can be one of {MODES}, got {mode!r}")
    origins, directions = sample_arrays(cfg)
    endpoints = endpoints_for(origins, directions, cam, snapshot.resolution, cfg.s_g)
    kernel = (
        kernels.distribution_parallel if mode == PARALLEL else kernels.distribution_sequential
    )
    gains = kernel(
        np.ascontiguousarray(origins),
        np.ascontiguousarray(endpoints),
        snapshot.resolution,
        snapshot.gains,
        snapshot.occupied,
        snapshot.lower,
    )
    return InformationDistribution(
        origins=origins, gains=gains, ray_count=endpoints.shape[1]
    )


def benchmark(
    snapshot: MapSnapshot,
    cam: CameraModel,
    grid: Iterable[Tuple[int, float]],
    iterations: int,
    base_cfg: IgConfig = IgConfig(),
    modes: Sequence[str] = MODES,
) -> List[BenchmarkRow]:
    """mean and std of wall-clock runtime per (n_p, s_g, mode)"""
    if iterations < 1:
        raise ValidationError("benchmark needs at least one iteration")
    rows = []
    grid = list(grid)
    # first calls compile the kernels, keep compilation out of the timings
    for mode in modes:
        warmup = IgConfig(base_cfg.poi, base_cfg.r_s, 1, base_cfg.s_g, base_cfg.rng_seed)
        compute_distribution(snapshot, warmup, cam, mode)
    for n_p, s_g in grid:
        cfg = IgConfig(base_cfg.poi, base_cfg.r_s, int(n_p), float(s_g), base_cfg.rng_seed)
        for mode in modes:
            runtimes = np.empty(iterations)
            for iteration in range(iterations):
                started = time.perf_counter()
                compute_distribution(snapshot, cfg, cam, mode)
                runtimes[iteration] = time.perf_counter() - started
            row = BenchmarkRow(
                n_p=int(n_p),
                s_g=float(s_g),
                mode=mode,
                mean_s=float(runtimes.mean()),
                std_s=float(runtimes.std()),
            )
            logger.info(
                f"n_p={row.n_p} s_g={row.s_g:g} {mode}: {row.mean_s:.6f} s (std {row.std_s:.6f})"
            )
            rows.append(row)
    return rows


def write_benchmark_csv(rows: Sequence[BenchmarkRow], path: str) -> None:
    with open(path, "w", newline="") as csv_file:
        writer = csv.writer(csv_file)
        writer.writerow(BENCHMARK_HEADER)
        for row in rows:
            writer.writerow([row.n_p, f"{row.s_g:g}", row.mode, repr(row.mean_s), repr(row.std_s)])
