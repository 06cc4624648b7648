import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence

from nbt_planner.ig_engine import InformationDistribution
from nbt_planner.planner import plan_log_header
from nbt_planner.utils import MetricsError
from nbt_planner.voxelmap import VoxelMap, dump_map

logger = logging.getLogger("nbt_planner")

MANIFEST_FILE = "manifest.json"
PLAN_LOG_FILE = "plan_log.csv"
MAP_FILE = "map.txt"
REFERENCE_MAP_FILE = "reference_map.txt"
RUN_LOG_FILE = "run.log"
CLOUDS_DIR = "clouds"


def config_digest(config: Dict, seed: int) -> str:
    """short sha1 of the resolved config and seed, stable across machines"""
    content = json.dumps({"config": config, "seed": seed}, sort_keys=True, default=str)
    return hashlib.sha1(content.encode("utf-8")).hexdigest()[:12]


def timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def unique_directory(out_dir: str, name: str) -> str:
    base = os.path.join(out_dir, name)
    path, num = base, 1
    while os.path.exists(path):
        path = f"{base}-{num}"
        num += 1
    os.makedirs(path)
    return path


def dump_json(path: str, data) -> None:
    with open(path, "w") as json_file:
        json.dump(data, json_file, indent=1, default=str)


@dataclass
class RunManifest:
    run_id: str
    command: str
    config_paths: List[str]
    seed: int
    output_dir: str
    overrides: List[str] = field(default_factory=list)
    started: str = field(default_factory=timestamp)
    finished: Optional[str] = None
    status: str = "running"
    config: Dict = field(default_factory=dict)

    def write(self) -> None:
        dump_json(os.path.join(self.output_dir, MANIFEST_FILE), asdict(self))

    def finish(self, status: str) -> None:
        self.status = status
        self.finished = timestamp()
        self.write()

    @classmethod
    def read(cls, run_dir: str) -> "RunManifest":
        path = os.path.join(run_dir, MANIFEST_FILE)
        if not os.path.isfile(path):
            raise MetricsError(f"no run manifest in {run_dir}")
        with open(path) as manifest_file:
            return cls(**json.load(manifest_file))


def new_run(
    out_dir: str,
    command: str,
    name: str,
    config: Dict,
    config_paths: Sequence[str],
    seed: int,
    overrides: Sequence[str] = (),
) -> RunManifest:
    """create the unique run directory and write its manifest"""
    run_id = config_digest(config, seed)
    run_dir = unique_directory(out_dir, f"{name}-{run_id}")
    manifest = RunManifest(
        run_id=run_id,
        command=command,
        config_paths=[os.path.abspath(path) for path in config_paths],
        seed=seed,
        output_dir=run_dir,
        overrides=list(overrides),
        config=config,
    )
    manifest.write()
    logger.info(f"run {run_id} writes to {run_dir}")
    return manifest


class RunArtifacts:
    """files of one scenario run inside its output directory"""

    def __init__(self, run_dir: str, n_dof: int, export_clouds: bool = True) -> None:
        self.run_dir = run_dir
        self.n_dof = n_dof
        self.export_clouds = export_clouds
        self._plan_file = None
        self._plan_writer = None

    def path(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    def export_distribution(self, frame: int, distribution: InformationDistribution) -> None:
        if not self.export_clouds:
            return
        clouds = self.path(CLOUDS_DIR)
        os.makedirs(clouds, exist_ok=True)
        distribution.export(os.path.join(clouds, f"id_{frame:04d}.txt"))

    def append_plan(self, rows: List[list]) -> None:
        if self._plan_writer is None:
            self._plan_file = open(self.path(PLAN_LOG_FILE), "w", newline="")
            self._plan_writer = csv.writer(self._plan_file)
            self._plan_writer.writerow(plan_log_header(self.n_dof))
        self._plan_writer.writerows(rows)

    def write_maps(self, voxel_map: VoxelMap, reference_map: VoxelMap) -> None:
        dump_map(voxel_map, self.path(MAP_FILE))
        dump_map(reference_map, self.path(REFERENCE_MAP_FILE))

    def close(self) -> None:
        if self._plan_file is not None:
            self._plan_file.close()
            self._plan_file = None
            self._plan_writer = None
