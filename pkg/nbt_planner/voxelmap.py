import enum
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterator, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from nbt_planner import kernels
from nbt_planner.utils import (
    ValidationError,
    as_points,
    log_odds_to_probability,
    probability_to_log_odds,
)

logger = logging.getLogger("nbt_planner")

MAP_HEADER = "voxelmap v1"


class VoxelKey(NamedTuple):
    ix: int
    iy: int
    iz: int


class VoxelState(enum.Enum):
    OCCUPIED = "occupied"
    FREE = "free"
    UNKNOWN = "unknown"


@dataclass
class VoxelCell:
    log_odds: float = 0.0
    observed: bool = False


@dataclass(frozen=True)
class Box:
    """axis-aligned box, used for map bounds and query regions"""

    lower: Tuple[float, float, float]
    upper: Tuple[float, float, float]

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != (3,) or upper.shape != (3,):
            raise ValidationError("box corners must be 3D points")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValidationError("box corners must be finite")
        if np.any(lower > upper):
            raise ValidationError(f"box lower {self.lower} exceeds upper {self.upper}")

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all(
            (points >= np.asarray(self.lower)) & (points <= np.asarray(self.upper)),
            axis=1,
        )


@dataclass(frozen=True)
class OccupancyParams:
    """log-odds sensor model and state thresholds"""

    p_hit: float = 0.7
    p_miss: float = 0.4
    p_min: float = 0.12
    p_max: float = 0.97
    t_occ: float = 0.5
    t_free: float = 0.5
    max_range: float = 5.0

    def __post_init__(self):
        for name in ("p_hit", "p_miss", "p_min", "p_max", "t_occ", "t_free"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {value}")
        if self.p_hit <= 0.5 or self.p_miss >= 0.5:
            raise ValidationError("p_hit must exceed 0.5 and p_miss must stay below it")
        if self.p_min >= self.p_max:
            raise ValidationError("p_min must be smaller than p_max")
        if self.t_free > self.t_occ:
            raise ValidationError("t_free must not exceed t_occ")
        if not self.max_range > 0:
            raise ValidationError("max_range must be positive")

    @property
    def l_hit(self) -> float:
        return probability_to_log_odds(self.p_hit)

    @property
    def l_miss(self) -> float:
        return probability_to_log_odds(self.p_miss)

    @property
    def l_min(self) -> float:
        return probability_to_log_odds(self.p_min)

    @property
    def l_max(self) -> float:
        return probability_to_log_odds(self.p_max)


@dataclass(frozen=True)
class MapSnapshot:
    """
    read-only dense view of a voxel map for raycasting

    gains holds g(v) of every voxel inside the block starting at key `lower`,
    occupied marks voxels that stop a ray; everything outside the block is Unknown
    """

    resolution: float
    lower: np.ndarray
    gains: np.ndarray
    occupied: np.ndarray

    def __post_init__(self):
        self.lower.setflags(write=False)
        self.gains.setflags(write=False)
        self.occupied.setflags(write=False)


class VoxelMap:
    """
    sparse three-state occupancy map

    cells are kept in a hash grid: a dict from key to a slot in flat payload arrays
    """

    def __init__(
        self,
        resolution: float,
        params: Optional[OccupancyParams] = None,
        bounds: Optional[Box] = None,
    ) -> None:
        if not (resolution > 0 and math.isfinite(resolution)):
            raise ValidationError(f"voxel resolution must be positive, got {resolution}")
        self.resolution = float(resolution)
        self.params = params or OccupancyParams()
        self.bounds = bounds
        self._slots: Dict[Tuple[int, int, int], int] = {}
        self._keys = np.zeros((0, 3), dtype=np.int64)
        self._log_odds = np.zeros(0)
        self._observed = np.zeros(0, dtype=bool)

    def __len__(self) -> int:
        return len(self._slots)

    def world_to_key(self, point: Sequence[float]) -> VoxelKey:
        ix, iy, iz = (int(math.floor(value / self.resolution)) for value in point)
        return VoxelKey(ix, iy, iz)

    def key_to_center(self, key: Sequence[int]) -> Tuple[float, float, float]:
        return tuple((int(index) + 0.5) * self.resolution for index in key)

    def key_in_bounds(self, keys: np.ndarray) -> np.ndarray:
        if self.bounds is None:
            return np.ones(len(keys), dtype=bool)
        centers = (keys + 0.5) * self.resolution
        return self.bounds.contains(centers)

    def _grow(self, needed: int) -> None:
        capacity = len(self._log_odds)
        if needed <= capacity:
            return
        new_capacity = max(needed, 2 * capacity, 1024)
        keys = np.zeros((new_capacity, 3), dtype=np.int64)
        log_odds = np.zeros(new_capacity)
        observed = np.zeros(new_capacity, dtype=bool)
        keys[:capacity] = self._keys
        log_odds[:capacity] = self._log_odds
        observed[:capacity] = self._observed
        self._keys, self._log_odds, self._observed = keys, log_odds, observed

    def slots_for(self, keys: np.ndarray) -> np.ndarray:
        """slot index of every key, new cells are created unobserved"""
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        unique_slots = np.empty(len(unique), dtype=np.int64)
        size = len(self._slots)
        self._grow(size + len(unique))
        for num, key in enumerate(map(tuple, unique.tolist())):
            slot = self._slots.get(key)
            if slot is None:
                slot = size
                self._slots[key] = slot
                self._keys[slot] = key
                size += 1
            unique_slots[num] = slot
        return unique_slots[inverse]

    def cell(self, key: Sequence[int]) -> Optional[VoxelCell]:
        slot = self._slots.get(tuple(int(index) for index in key))
        if slot is None:
            return None
        return VoxelCell(float(self._log_odds[slot]), bool(self._observed[slot]))

    def set_cell(self, key: Sequence[int], cell: VoxelCell) -> None:
        key_array = np.asarray([key], dtype=np.int64)
        if not self.key_in_bounds(key_array)[0]:
            raise ValidationError(f"voxel {tuple(key)} lies outside map bounds")
        slot = self.slots_for(key_array)[0]
        self._log_odds[slot] = min(
            max(cell.log_odds, self.params.l_min), self.params.l_max
        )
        self._observed[slot] = cell.observed

    def cells(self) -> Iterator[Tuple[VoxelKey, VoxelCell]]:
        for key, slot in sorted(self._slots.items()):
            yield VoxelKey(*key), VoxelCell(
                float(self._log_odds[slot]), bool(self._observed[slot])
            )

    def stored(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """keys, log-odds and observed flags of all stored cells"""
        size = len(self._slots)
        return self._keys[:size], self._log_odds[:size], self._observed[:size]

    def states(self, log_odds: np.ndarray, observed: np.ndarray) -> np.ndarray:
        """vectorized classification, codes 0 = unknown, 1 = free, 2 = occupied"""
        probability = log_odds_to_probability(log_odds)
        codes = np.zeros(len(log_odds), dtype=np.int8)
        codes[observed & (probability <= self.params.t_free)] = 1
        codes[observed & (probability >= self.params.t_occ)] = 2
        return codes

    def snapshot(self, region: Optional[Box] = None) -> MapSnapshot:
        keys, log_odds, observed = self.stored()
        if region is not None and len(keys):
            inside = region.contains((keys + 0.5) * self.resolution)
            keys, log_odds, observed = keys[inside], log_odds[inside], observed[inside]
        if not len(keys):
            return MapSnapshot(
                resolution=self.resolution,
                lower=np.zeros(3, dtype=np.int64),
                gains=np.ones((0, 0, 0)),
                occupied=np.zeros((0, 0, 0), dtype=bool),
            )
        lower = keys.min(axis=0)
        shape = tuple(keys.max(axis=0) - lower + 1)
        gains = np.ones(shape)
        occupied = np.zeros(shape, dtype=bool)
        probability = log_odds_to_probability(log_odds)
        codes = self.states(log_odds, observed)
        voxel_gain = np.where(
            codes == 2, 1.0 - probability, np.where(codes == 1, probability, 1.0)
        )
        local = tuple((keys - lower).T)
        gains[local] = voxel_gain
        occupied[local] = codes == 2
        return MapSnapshot(
            resolution=self.resolution,
            lower=lower.astype(np.int64),
            gains=gains,
            occupied=occupied,
        )

    def copy(self) -> "VoxelMap":
        other = VoxelMap(self.resolution, self.params, self.bounds)
        other._slots = dict(self._slots)
        other._keys = self._keys.copy()
        other._log_odds = self._log_odds.copy()
        other._observed = self._observed.copy()
        return other


def downsample_cloud(
    points: Union[Sequence, np.ndarray], leaf: float
) -> np.ndarray:
    """voxel-grid filter: one centroid per occupied leaf cell, ordered by cell key"""
    if not leaf > 0:
        raise ValidationError(f"leaf size must be positive, got {leaf}")
    cloud = as_points(points, "cloud")
    if not len(cloud):
        return cloud
    cells = np.floor(cloud / leaf).astype(np.int64)
    _, inverse, counts = np.unique(
        cells, axis=0, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, cloud)
    return sums / counts[:, None]


def integrate_cloud(
    voxel_map: VoxelMap,
    sensor_origin: Sequence[float],
    points: Union[Sequence, np.ndarray],
) -> VoxelMap:
    """integrate one (already downsampled) cloud with hit/miss log-odds updates"""
    origin = np.asarray(sensor_origin, dtype=float)
    if origin.shape != (3,) or not np.all(np.isfinite(origin)):
        raise ValidationError("sensor origin must be a finite 3D point")
    cloud = as_points(points, "cloud")
    if not len(cloud):
        return voxel_map
    params = voxel_map.params
    keys, deltas, truncated = kernels.cloud_updates(
        origin,
        np.ascontiguousarray(cloud),
        voxel_map.resolution,
        params.max_range,
        params.l_hit,
        params.l_miss,
    )
    if truncated:
        logger.debug(f"{truncated} rays cut at max range {params.max_range} m")
    inside = voxel_map.key_in_bounds(keys)
    if not np.all(inside):
        keys, deltas = keys[inside], deltas[inside]
    if not len(keys):
        return voxel_map
    slots = voxel_map.slots_for(keys)
    kernels.apply_updates(
        voxel_map._log_odds,
        voxel_map._observed,
        slots,
        deltas,
        params.l_min,
        params.l_max,
    )
    return voxel_map


def classify(voxel_map: VoxelMap, key: Sequence[int]) -> Tuple[VoxelState, float]:
    cell = voxel_map.cell(key)
    if cell is None or not cell.observed:
        return VoxelState.UNKNOWN, 0.5
    probability = log_odds_to_probability(cell.log_odds)
    if probability >= voxel_map.params.t_occ:
        return VoxelState.OCCUPIED, probability
    if probability <= voxel_map.params.t_free:
        return VoxelState.FREE, probability
    return VoxelState.UNKNOWN, probability


def count_states(voxel_map: VoxelMap, region: Optional[Box] = None) -> Dict[str, int]:
    keys, log_odds, observed = voxel_map.stored()
    if region is not None:
        inside = region.contains((keys + 0.5) * voxel_map.resolution)
        log_odds, observed = log_odds[inside], observed[inside]
    codes = voxel_map.states(log_odds, observed)
    return {
        VoxelState.UNKNOWN.value: int(np.sum(codes == 0)),
        VoxelState.FREE.value: int(np.sum(codes == 1)),
        VoxelState.OCCUPIED.value: int(np.sum(codes == 2)),
    }


def occupied_volume(voxel_map: VoxelMap, region: Box) -> int:
    return count_states(voxel_map, region)[VoxelState.OCCUPIED.value]


def fill_occupied(voxel_map: VoxelMap, keys: np.ndarray) -> int:
    """mark keys as observed and occupied at the clamp bound, returns the number kept in bounds"""
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    keys = keys[voxel_map.key_in_bounds(keys)]
    if not len(keys):
        return 0
    slots = voxel_map.slots_for(keys)
    voxel_map._log_odds[slots] = voxel_map.params.l_max
    voxel_map._observed[slots] = True
    return len(keys)


def dump_map(voxel_map: VoxelMap, path: str) -> None:
    with open(path, "w") as map_file:
        map_file.write(f"{MAP_HEADER} {voxel_map.resolution!r}\n")
        for key, cell in voxel_map.cells():
            map_file.write(
                f"{key.ix} {key.iy} {key.iz} {cell.log_odds!r} {int(cell.observed)}\n"
            )


def load_map(path: str, params: Optional[OccupancyParams] = None) -> VoxelMap:
    with open(path, "r") as map_file:
        header = map_file.readline().split()
        if len(header) != 3 or " ".join(header[:2]) != MAP_HEADER:
            raise ValidationError(f"{path}: not a '{MAP_HEADER}' map dump")
        voxel_map = VoxelMap(float(header[2]), params)
        rows = [line.split() for line in map_file if line.strip()]
    if not rows:
        return voxel_map
    if any(len(row) != 5 for row in rows):
        raise ValidationError(f"{path}: every voxel line needs 5 fields")
    keys = np.array([[int(value) for value in row[:3]] for row in rows], dtype=np.int64)
    slots = voxel_map.slots_for(keys)
    voxel_map._log_odds[slots] = [float(row[3]) for row in rows]
    voxel_map._observed[slots] = [row[4] == "1" for row in rows]
    return voxel_map


def load_cloud(path: str) -> np.ndarray:
    return as_points(np.loadtxt(path, ndmin=2), path)


def save_cloud(path: str, points: np.ndarray) -> None:
    np.savetxt(path, np.asarray(points).reshape(-1, 3), fmt="%.9g")
