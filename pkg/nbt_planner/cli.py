import argparse
import copy
import csv
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from nbt_planner.artifacts import (
    MANIFEST_FILE,
    RUN_LOG_FILE,
    RunArtifacts,
    RunManifest,
    new_run,
)
from nbt_planner.config_parser import ConfigParserError
from nbt_planner.ig_engine import (
    IgConfig,
    benchmark,
    reach_region,
    set_workers,
    write_benchmark_csv,
)
from nbt_planner.settings.core import (
    BenchSettings,
    MAP_SOURCES,
    Settings,
    apply_override,
    load_config,
    settings_from_config,
)
from nbt_planner.sim.metrics import recompute_summary, write_metrics
from nbt_planner.sim.runner import SENSOR_STREAM, new_map, run_scenario, sense, stream_seed
from nbt_planner.sim.scene import describe
from nbt_planner.utils import (
    NBTPlannerException,
    ValidationError,
    log_to_file,
    set_logging_config,
)
from nbt_planner.voxelmap import VoxelMap, count_states, fill_occupied, load_map

logger = logging.getLogger("nbt_planner")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

BENCHMARK_FILE = "benchmark.csv"
SWEEP_FILE = "sweep.csv"
SWEEP_SUMMARY_FILE = "sweep_summary.csv"
SWEEP_HEADER = ["w_i", "seed", "auc", "travel_time", "remaining_ig", "final_v_r"]
SWEEP_SUMMARY_HEADER = ["w_i", "auc_mean", "auc_std", "travel_time_mean", "travel_time_std"]
METRICS_PRINTED = ("auc", "travel_time", "remaining_ig", "final_v_r")
# random stream of the extra occupied voxels of a benchmark map
RANDOM_MAP_STREAM = 4

# config key that --seed sets for every command
SEED_KEYS = {
    "run": "task.seed",
    "validate": "task.seed",
    "bench": "bench.seed",
    "sweep": "sweep.first_seed",
}


def cli():
    nbt_cli = argparse.ArgumentParser(
        description="Next-Best-Trajectory planner: information distribution raycasting "
        "and moving-horizon planning in a simulated scene"
    )
    nbt_cli.add_argument("-v", action="store_true", default=False, help="Verbose mode")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Seed of the random streams")
    common.add_argument(
        "--workers",
        type=int,
        default=None,
        help="Threads of the parallel raycasting engine, 0 = all cores",
    )
    common.add_argument(
        "--out", type=str, default="runs", help="Folder that gets the run directories"
    )
    common.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config value by its dotted path, e.g. planner.w_i=25. Repeatable.",
    )

    commands = nbt_cli.add_subparsers(dest="command", required=True)
    run = commands.add_parser(
        "run", parents=[common], help="Run one scenario in the closed loop"
    )
    run.add_argument(
        "config_path",
        type=str,
        help="Scenario config, or the manifest.json (or directory) of a previous run to replay",
    )
    bench = commands.add_parser(
        "bench", parents=[common], help="Time the information distribution engine"
    )
    bench.add_argument("config_path", type=str, help="Benchmark config")
    sweep = commands.add_parser(
        "sweep", parents=[common], help="Run a scenario for every w_I and seed of the sweep block"
    )
    sweep.add_argument("config_path", type=str, help="Scenario config with a sweep block")
    validate = commands.add_parser(
        "validate", parents=[common], help="Check a config and print the resolved settings"
    )
    validate.add_argument("config_path", type=str, help="Scenario or benchmark config")
    metrics = commands.add_parser(
        "metrics", help="Recompute and print the metrics of a finished run"
    )
    metrics.add_argument("run_dir", type=str, help="Run directory")
    return nbt_cli


def overrides_for(args) -> List[str]:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"{SEED_KEYS[args.command]}={args.seed}")
    if args.workers is not None:
        overrides.append(f"ig.workers={args.workers}")
    return overrides


def manifest_dir(path: str) -> Optional[str]:
    """run directory if path names a manifest or a directory holding one"""
    if os.path.isdir(path) and os.path.isfile(os.path.join(path, MANIFEST_FILE)):
        return path
    if os.path.basename(path) == MANIFEST_FILE and os.path.isfile(path):
        return os.path.dirname(path) or "."
    return None


def load_run_config(args) -> Dict:
    replay = manifest_dir(args.config_path)
    if replay is None:
        return load_config(args.config_path, overrides_for(args))
    manifest = RunManifest.read(replay)
    logger.info(f"replaying run {manifest.run_id} from {replay}")
    config = manifest.config
    for override in overrides_for(args):
        apply_override(config, override)
    return config


def print_result(data: Dict) -> None:
    for key, value in data.items():
        print(f"{key}: {value}")


def execute_run(manifest: RunManifest, settings: Settings) -> Dict:
    """run one scenario into the manifest folder, the manifest ends 'failed' on any error"""
    artifacts = RunArtifacts(manifest.output_dir, settings.robot.n_dof, settings.ig.export_clouds)
    status = "failed"
    try:
        result = run_scenario(settings, artifacts)
        summary = write_metrics(manifest.output_dir, result.metrics)
        status = "finished"
    finally:
        artifacts.close()
        manifest.finish(status)
    return summary


def run_for_file(args) -> int:
    config = load_run_config(args)
    settings = settings_from_config(config, os.path.abspath(args.config_path))
    manifest = new_run(
        args.out,
        "run",
        settings.task.name,
        config,
        [args.config_path],
        settings.task.seed,
        overrides_for(args),
    )
    run_dir = manifest.output_dir
    with log_to_file(os.path.join(run_dir, RUN_LOG_FILE)):
        summary = execute_run(manifest, settings)
    logger.info(f"File with result was saved to >> {run_dir} folder")
    print_result({"run_dir": run_dir, **{key: summary[key] for key in METRICS_PRINTED}})
    return EXIT_OK


def bench_map(settings: Settings, bench: BenchSettings, poi: Sequence[float]) -> VoxelMap:
    if bench.map == "scene":
        if settings.scene is None:
            raise ValidationError("bench.map = scene needs a 'scene' block")
        voxel_map = new_map(settings)
        for frame in range(bench.frames):
            rng = np.random.default_rng(stream_seed(bench.seed, SENSOR_STREAM, frame))
            sense(
                voxel_map,
                settings.scene,
                settings.robot,
                np.asarray(settings.task.start, dtype=float),
                settings.camera.sim_camera(),
                0.0,
                settings.map.leaf_size,
                rng,
            )
    elif bench.map == "empty":
        voxel_map = new_map(settings)
    else:
        voxel_map = load_map(bench.map, settings.map.occupancy_params())
    if bench.random_occupied:
        # occupied voxels scattered over the region the rays can reach
        region = reach_region(settings.ig.ig_config(poi, bench.seed), settings.camera.model())
        rng = np.random.default_rng(stream_seed(bench.seed, RANDOM_MAP_STREAM, 0))
        lower = np.floor(np.asarray(region.lower) / voxel_map.resolution)
        upper = np.floor(np.asarray(region.upper) / voxel_map.resolution)
        keys = rng.integers(
            lower.astype(np.int64), upper.astype(np.int64) + 1, size=(bench.random_occupied, 3)
        )
        fill_occupied(voxel_map, keys)
    logger.info(f"benchmark map: {count_states(voxel_map)}")
    return voxel_map


def bench_for_file(args) -> int:
    config = load_config(args.config_path, overrides_for(args))
    settings = settings_from_config(config, os.path.abspath(args.config_path))
    bench = settings.bench or BenchSettings()
    poi = settings.scene.poi if settings.scene is not None else IgConfig().poi
    manifest = new_run(
        args.out, "bench", "bench", config, [args.config_path], bench.seed, overrides_for(args)
    )
    run_dir = manifest.output_dir
    with log_to_file(os.path.join(run_dir, RUN_LOG_FILE)):
        threads = set_workers(settings.ig.workers)
        logger.info(f"benchmark on {threads} threads, map source '{bench.map}'")
        snapshot = bench_map(settings, bench, poi).snapshot()
        rows = benchmark(
            snapshot,
            settings.camera.model(),
            bench.grid(),
            bench.iterations,
            base_cfg=settings.ig.ig_config(poi, bench.seed),
            modes=bench.modes,
        )
        path = os.path.join(run_dir, BENCHMARK_FILE)
        write_benchmark_csv(rows, path)
        manifest.finish("finished")
    logger.info(f"File with result was saved to >> {path}")
    print_result({"run_dir": run_dir, "rows": len(rows)})
    return EXIT_OK


def sweep_summary(rows: List[Dict]) -> List[list]:
    summary = []
    for w_i in sorted({row["w_i"] for row in rows}):
        auc = np.array([row["auc"] for row in rows if row["w_i"] == w_i])
        travel = np.array([row["travel_time"] for row in rows if row["w_i"] == w_i])
        summary.append([w_i, auc.mean(), auc.std(), travel.mean(), travel.std()])
    return summary


def write_rows(path: str, header: List[str], rows: List[list]) -> None:
    with open(path, "w", newline="") as csv_file:
        writer = csv.writer(csv_file)
        writer.writerow(header)
        writer.writerows(rows)


def sweep_for_file(args) -> int:
    base = load_config(args.config_path, overrides_for(args))
    settings = settings_from_config(base, os.path.abspath(args.config_path))
    sweep = settings.sweep
    manifest = new_run(
        args.out,
        "sweep",
        f"{settings.task.name}-sweep",
        base,
        [args.config_path],
        sweep.first_seed,
        overrides_for(args),
    )
    sweep_dir = manifest.output_dir
    rows = []
    failed = 0
    with log_to_file(os.path.join(sweep_dir, RUN_LOG_FILE)):
        for w_i in sweep.w_i:
            for seed in range(sweep.first_seed, sweep.first_seed + sweep.seeds):
                config = copy.deepcopy(base)
                apply_override(config, f"planner.w_i={w_i!r}")
                apply_override(config, f"task.seed={seed}")
                settings = settings_from_config(config, os.path.abspath(args.config_path))
                child = new_run(
                    sweep_dir,
                    "run",
                    f"{settings.task.name}-w{w_i:g}-s{seed}",
                    config,
                    [args.config_path],
                    seed,
                )
                try:
                    summary = execute_run(child, settings)
                except Exception as error:
                    logger.error(f"sweep run w_i={w_i:g} seed={seed} failed: {error}")
                    failed += 1
                    continue
                rows.append({"w_i": w_i, "seed": seed, **summary})
        write_rows(
            os.path.join(sweep_dir, SWEEP_FILE),
            SWEEP_HEADER,
            [[row[key] for key in SWEEP_HEADER] for row in rows],
        )
        summary_rows = sweep_summary(rows)
        write_rows(os.path.join(sweep_dir, SWEEP_SUMMARY_FILE), SWEEP_SUMMARY_HEADER, summary_rows)
        manifest.finish("failed" if failed else "finished")
    for row in summary_rows:
        print(
            f"w_i={row[0]:g}: auc {row[1]:.4f} +- {row[2]:.4f}, "
            f"travel time {row[3]:.2f} +- {row[4]:.2f} s"
        )
    print_result({"run_dir": sweep_dir})
    if failed:
        print(f"error: {failed} sweep runs failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def validate_file(args) -> int:
    config = load_config(args.config_path, overrides_for(args))
    settings = settings_from_config(config, os.path.abspath(args.config_path))
    settings.horizon_config()
    logger.info(
        f"robot '{settings.robot.name}' with {settings.robot.n_dof} joints"
        + (f", scene: {describe(settings.scene)}" if settings.scene is not None else "")
    )
    if settings.bench is not None and settings.bench.map not in MAP_SOURCES:
        load_map(settings.bench.map)
    print(json.dumps(settings.raw, indent=1, default=str))
    return EXIT_OK


def metrics_for_dir(args) -> int:
    recomputed = recompute_summary(args.run_dir)
    print_result({key: recomputed[key] for key in METRICS_PRINTED})
    return EXIT_OK


COMMANDS = {
    "run": run_for_file,
    "bench": bench_for_file,
    "sweep": sweep_for_file,
    "validate": validate_file,
    "metrics": metrics_for_dir,
}


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    nbt_cli = cli()
    args = nbt_cli.parse_args(argv)
    set_logging_config(logging.DEBUG if args.v else logging.INFO)
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ConfigParserError, FileNotFoundError) as error:
        logger.error(str(error))
        print(f"error: {error}", file=sys.stderr)
        return EXIT_VALIDATION
    except NBTPlannerException as error:
        logger.error(str(error))
        print(f"error: {error}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run_cli())
