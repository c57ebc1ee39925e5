"""Command line front end: run a scenario (or replay logs) under one or all
weight modes and write metrics, snapshots, logs and a manifest.

    dualgrid simple_road --mode all --seed 3 --out runs/sr3
    dualgrid --replay runs/sr3/detections.log runs/sr3/truth.log --seed 3 --out runs/replay
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import yaml

from .evaluation import write_metrics_csv, write_per_object_csv
from .grid import GridSpec, render_snapshot, write_ppm
from .logs import (LogFormatError, read_detection_log, read_truth_log, write_detection_log,
                   write_truth_log)
from .measurement import ConfigurationError, FreeModelParams, StaticModelParams
from .particles import WEIGHT_MODES, FilterParams
from .runner import RecordedFrame, record, run_mode, stream_digest
from .simulator import UsageError, builtin_scenario, load_scenario, scenario_from_dict

log = logging.getLogger("dualgrid")

BUILTINS = ("simple_road", "highway")
CONFIG_SECTIONS = {"grid", "filter", "measurement", "scenario"}


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0.0.0"


def load_config(path):
    """Parse a YAML run configuration into grid/filter/measurement objects."""
    if path is None:
        data = {}
    else:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigurationError(f"{path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping")
    for key in data:
        if key not in CONFIG_SECTIONS:
            raise ConfigurationError(f"unknown config key {key!r}")

    def section(name, allowed):
        sec = data.get(name) or {}
        if not isinstance(sec, dict):
            raise ConfigurationError(f"config section {name!r} must be a mapping")
        for key in sec:
            if key not in allowed:
                raise ConfigurationError(f"unknown config key {name}.{key}")
        return sec

    g = section("grid", {"length_m", "width_m", "resolution_m"})
    f = section("filter", set(FilterParams.__dataclass_fields__) - {"weight_mode"})
    m = section("measurement", {"sigma_f", "sigma_s"})
    try:
        grid = GridSpec(**{k: float(v) for k, v in g.items()})
        if "particle_count" in f:
            f = {**f, "particle_count": int(f["particle_count"])}
        params = FilterParams(**f)
        free = FreeModelParams(sigma_f=float(m.get("sigma_f", grid.resolution_m)))
        static = StaticModelParams(m.get("sigma_s"))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"config: {exc}") from None
    return data, grid, params, free, static


def _scenario(name, seed, config_data):
    if "scenario" in config_data:
        return replace(scenario_from_dict(config_data["scenario"]), seed=seed)
    if name in BUILTINS:
        return builtin_scenario(name, seed=seed)
    if name is None:
        raise UsageError("a scenario name, scenario file or --replay is required")
    if not os.path.exists(name):
        raise UsageError(f"unknown scenario {name!r} (built-ins: {', '.join(BUILTINS)})")
    return replace(load_scenario(name), seed=seed)


def _prepare_out(out: Path):
    try:
        (out / "snapshots").mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {str(out)!r} is not writable: {exc.strerror}") from None


def _snapshot_writer(out: Path, mode: str, every: int, trace_every: int):
    snap_dir = out / "snapshots" / mode
    trace_dir = out / "particles" / mode
    if every > 0:
        snap_dir.mkdir(parents=True, exist_ok=True)
    if trace_every > 0:
        trace_dir.mkdir(parents=True, exist_ok=True)

    def on_frame(k, res):
        if every > 0 and k % every == 0:
            img = render_snapshot(res.grid, res.cell_mean_velocity())
            write_ppm(snap_dir / f"frame_{k:06d}.ppm", img)
        if trace_every > 0 and k % trace_every == 0:
            res.particles.write_csv(trace_dir / f"frame_{k:06d}.csv")
    return on_frame


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualgrid", description=__doc__.splitlines()[0])
    p.add_argument("scenario", nargs="?",
                   help="built-in scenario (simple_road, highway) or a scenario YAML file")
    p.add_argument("--mode", default="all", choices=WEIGHT_MODES + ("all",))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="YAML with grid/filter/measurement/scenario sections")
    p.add_argument("--out", default="dualgrid_out", help="output directory")
    p.add_argument("--snapshot-every", type=int, default=10, metavar="N",
                   help="write a grid snapshot every N frames (0 disables)")
    p.add_argument("--replay", nargs="+", metavar=("DET_LOG", "TRUTH_LOG"),
                   help="run on recorded logs instead of the simulator")
    p.add_argument("--threads", type=int, default=1, help="weight modes run in parallel")
    p.add_argument("--trace-every", type=int, default=0, metavar="N",
                   help="dump the particle population every N frames (0 disables)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(args) -> int:
    out = Path(args.out)
    modes = list(WEIGHT_MODES) if args.mode == "all" else [args.mode]
    if args.snapshot_every < 0 or args.trace_every < 0 or args.threads < 1:
        raise UsageError("--snapshot-every/--trace-every must be >= 0 and --threads >= 1")
    config_data, grid, params, free, static = load_config(args.config)

    manifest = {"version": _version(), "seed": args.seed, "modes": modes,
                "config": config_data, "grid": asdict(grid),
                "filter": {k: v for k, v in asdict(params).items() if k != "weight_mode"},
                "measurement": {"sigma_f": free.sigma_f, "sigma_s": static.sigma_s.tolist()}}
    if args.replay:
        if len(args.replay) > 2:
            raise UsageError("--replay takes DET_LOG [TRUTH_LOG]")
        sensors, det_frames = read_detection_log(args.replay[0])
        if not det_frames:
            raise UsageError(f"{args.replay[0]}: no frames")
        mounts = {s.id: s.mount for s in sensors}
        truths = read_truth_log(args.replay[1], det_frames) if len(args.replay) == 2 else None
        frames = [RecordedFrame(f.timestamp, f.ego, f.detections,
                                truths[k] if truths is not None else None)
                  for k, f in enumerate(det_frames)]
        manifest["source"] = {"replay": [str(Path(a).resolve()) for a in args.replay]}
        _prepare_out(out)
    else:
        scenario = _scenario(args.scenario, args.seed, config_data)
        _prepare_out(out)
        frames = record(scenario)
        mounts = scenario.mounts
        write_detection_log(out / "detections.log", scenario.sensors,
                            [(f.timestamp, f.ego, f.detections) for f in frames])
        write_truth_log(out / "truth.log", [f.truth for f in frames])
        manifest["source"] = {"scenario": args.scenario, "name": scenario.name,
                              "frames": len(frames), "dt": scenario.dt,
                              "logs": ["detections.log", "truth.log"]}

    def one(mode):
        on_frame = _snapshot_writer(out, mode, args.snapshot_every, args.trace_every)
        log.info("running %s over %d frames", mode, len(frames))
        return run_mode(frames, mounts, mode, args.seed, grid, params, free, static,
                        on_frame=on_frame)

    if args.threads > 1 and len(modes) > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            runs = dict(zip(modes, pool.map(one, modes)))
    else:
        runs = {m: one(m) for m in modes}

    manifest["stream_digest"] = {m: r.digest for m, r in runs.items()}
    manifest["filter_resets"] = {m: r.resets for m, r in runs.items()}
    digests = set(manifest["stream_digest"].values())
    if len(digests) != 1 or digests != {stream_digest(frames)}:
        raise RuntimeError("weight modes saw different detection streams")

    reports = {m: r.metrics for m, r in runs.items() if r.metrics is not None}
    if reports:
        write_metrics_csv(out / "metrics.csv", reports)
        write_per_object_csv(out / "per_object_duration.csv", reports)
        for m, r in reports.items():
            log.info("%s: dx=%.3f dv=%.3f t_d=%.2f D=%.3f", m, r.delta_x, r.delta_v, r.t_d, r.D)
    else:
        log.info("no ground truth: metrics skipped")
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigurationError, UsageError, LogFormatError) as exc:
        print(f"dualgrid: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"dualgrid: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
