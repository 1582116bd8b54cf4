"""Command-line harness: train, rollout, metrics, render, validate-config.

Exit codes: 0 success, 2 configuration error, 3 runtime error.  All
randomness flows from the scenario seed; single-worker runs reproduce
bit-exactly from the emitted manifest.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import json
import os
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import logs, metrics as met, optim, policy as pol, render
from .config import ConfigError, ScenarioConfig
from .sensing import accel_obs_dim, spline_obs_dim
from .world import SimulationError

OUTPUT_ROOT_ENV = "DRIVELAB_OUTPUT_ROOT"
WORKERS_ENV = "DRIVELAB_WORKERS"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _package_version() -> str:
    try:
        return metadata.version("drivelab")
    except metadata.PackageNotFoundError:
        return "unknown"


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------

_OVERRIDE_FIELDS = {
    "map": str, "model": str, "n_agents": int, "goal_mode": str,
    "continuous_spawn": bool, "lidar_rays": int, "lidar_noise_pct": float,
    "comm_enabled": bool, "pedestrians": bool, "ratings_enabled": bool,
    "signals_enabled": bool, "horizon": int, "seed": int, "output_dir": str,
}
_HYPER_OVERRIDES = {
    "iterations": int, "episodes_per_round": int, "k1": int, "k2": int,
    "learning_rate": float, "checkpoint_every": int, "minibatch_size": int,
    "epochs": int,
}


def add_config_args(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="scenario config JSON file")
    parser.add_argument("--print-config", action="store_true",
                        help="print the fully resolved config")
    for name, typ in _OVERRIDE_FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if typ is bool:
            parser.add_argument(flag, action=argparse.BooleanOptionalAction,
                                default=None)
        else:
            parser.add_argument(flag, type=typ, default=None)
    for name, typ in _HYPER_OVERRIDES.items():
        parser.add_argument("--" + name.replace("_", "-"), type=typ,
                            default=None)


def resolve_config(args) -> ScenarioConfig:
    """File fields, overridden by CLI flags, validated once at the end."""
    data = {}
    if args.config:
        with open(args.config) as f:
            data = json.load(f)
        data.pop("schema_version", None)
    hyper = data.setdefault("hyper", {})
    for name in _OVERRIDE_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    for name in _HYPER_OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            hyper[name] = value
    cfg = ScenarioConfig.from_dict(data)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not Path(cfg.output_dir).is_absolute():
        cfg.output_dir = str(Path(root) / cfg.output_dir)
    if args.print_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return cfg


def write_manifest(cfg: ScenarioConfig, out_dir: Path, artifacts: dict):
    manifest = {
        "config": cfg.to_dict(),
        "code_version": _package_version(),
        "seed": cfg.seed,
        "workers": int(os.environ.get(WORKERS_ENV, "1")),
        "start_time": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "artifacts": {k: str(v) for k, v in artifacts.items()},
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = optim.make_params(cfg, np.random.default_rng(cfg.seed))
    every = cfg.hyper.checkpoint_every
    checkpoints = []

    def callback(i, p, row):
        if (i + 1) % every == 0:
            path = out_dir / f"ckpt_{i + 1:04d}.bin"
            pol.save_checkpoint(p, path)
            checkpoints.append(path)

    try:
        if cfg.model == "spline":
            curves = optim.bilevel_train(cfg, params, callback)
        else:
            curves = optim.train_fixed_track(cfg, params, callback)
    except FloatingPointError as exc:
        with open(out_dir / "diagnostic.txt", "w") as f:
            f.write(f"training aborted: {exc}\n")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    final = out_dir / "final.bin"
    pol.save_checkpoint(params, final)
    checkpoints.append(final)
    curves_path = out_dir / "curves.csv"
    with open(curves_path, "w") as f:
        f.write(optim.CurveRow.HEADER + "\n")
        for row in curves:
            f.write(row.csv() + "\n")
    write_manifest(cfg, out_dir, {
        "curves": curves_path,
        "checkpoints": [str(p) for p in checkpoints],
    })
    print(f"trained {len(curves)} iterations; "
          f"{len(checkpoints)} checkpoints in {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------


def _check_checkpoint(params: pol.PolicyParams, cfg: ScenarioConfig):
    expect = {
        "accel_obs_dim": accel_obs_dim(cfg.lidar_rays, cfg.lidar_stack),
        "spline_obs_dim": spline_obs_dim(cfg.lidar_rays),
        "n_actions": optim.accel_action_count(cfg),
    }
    for key, want in expect.items():
        got = params.meta.get(key, want)
        if got != want:
            raise SimulationError(
                f"checkpoint incompatible with config: {key} is {got}, "
                f"config requires {want}")


def cmd_rollout(args) -> int:
    cfg = resolve_config(args)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        params = pol.load_checkpoint(args.checkpoint)
        _check_checkpoint(params, cfg)
    else:
        params = optim.make_params(cfg, np.random.default_rng(cfg.seed))
    mode = (optim.MODE_ACCEL_TRAIN if cfg.model == "spline"
            else optim.MODE_FIXED_TRACK)
    log_path = out_dir / args.log_name
    with logs.LogWriter(log_path, cfg, full_obs=args.full_obs) as writer:
        for k in range(args.episodes):
            writer.episode = k
            rng = np.random.default_rng([cfg.seed, 7, k])
            optim.run_episode(cfg, params, mode, rng,
                              deterministic=args.deterministic,
                              log_sink=writer.sink, collect_values=False)
    write_manifest(cfg, out_dir, {"log": log_path,
                                  "checkpoint": args.checkpoint or "none"})
    print(f"wrote {args.episodes} episodes to {log_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _run_signal_compliance(episodes, a_max, out_dir):
    out = met.signal_compliance(episodes)
    _write_csv(out_dir / "signal_compliance_histogram.csv",
               ["bin_x", "bin_y", "green", "total", "fraction"],
               [[bx, by, g, t, g / t]
                for (bx, by), (g, t) in sorted(out.histogram.items())])
    return {"fraction": out.fraction, "entries": out.entries,
            "blind_entries": out.blind_entries}


def _run_lane_position(episodes, a_max, out_dir):
    out = met.lane_position_series(episodes)
    _write_csv(out_dir / "lane_position_samples.csv",
               ["episode", "agent", "tick", "value"],
               zip(out.episode, out.agent, out.tick, np.round(out.value, 6)))
    return {"mean": float(out.value.mean()) if len(out.value) else 0.0,
            "std": float(out.value.std()) if len(out.value) else 0.0,
            "samples": len(out.value), "offroad": out.offroad}


def _run_right_of_way(episodes, a_max, out_dir):
    out = met.right_of_way_score(episodes)
    return {"per_pair": out.per_pair, "per_episode_mean": out.per_episode_mean,
            "pairs": out.pairs, "no_pairs": out.no_pairs}


def _run_speaker_consistency(episodes, a_max, out_dir):
    out = met.speaker_consistency(episodes)
    return dataclasses.asdict(out)


def _run_safety_distance(episodes, a_max, out_dir):
    out = met.safety_distance_stats(episodes, a_max)
    _write_csv(out_dir / "safety_distance_samples.csv", ["gap", "required"],
               np.round(out.samples, 6))
    return {"fraction": out.fraction, "samples": len(out.samples)}


def _run_crosswalk(episodes, a_max, out_dir):
    out = met.crosswalk_stats(episodes, a_max)
    _write_csv(out_dir / "crosswalk_samples.csv", ["distance", "required"],
               np.round(out.samples, 6))
    _write_csv(out_dir / "crosswalk_min_distances.csv", ["min_distance"],
               [[v] for v in np.round(out.min_distances, 6)])
    return {"fraction_safe": out.fraction_safe,
            "median_min_distance": (float(np.median(out.min_distances))
                                    if len(out.min_distances) else 0.0)}


def _run_fast_lane(episodes, a_max, out_dir):
    out = met.fast_lane_segregation(episodes)
    return dataclasses.asdict(out)


METRIC_RUNNERS = {
    "signal_compliance": _run_signal_compliance,
    "lane_position": _run_lane_position,
    "right_of_way": _run_right_of_way,
    "speaker_consistency": _run_speaker_consistency,
    "safety_distance": _run_safety_distance,
    "crosswalk": _run_crosswalk,
    "fast_lane": _run_fast_lane,
}


def cmd_metrics(args) -> int:
    names = args.metrics or list(METRIC_RUNNERS)
    unknown = set(names) - set(METRIC_RUNNERS)
    if unknown:
        raise ConfigError(f"unknown metrics: {sorted(unknown)}")
    header, _ = logs.read_log(args.logs[0])
    a_max = args.a_max or header["config"]["a_max"]
    episodes = logs.load_episode_logs(args.logs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    for name in names:
        try:
            result = METRIC_RUNNERS[name](episodes, a_max, out_dir)
        except met.MetricError as exc:
            summary_rows.append([name, "skipped", str(exc)])
            print(f"{name}: skipped ({exc})")
            continue
        for key, value in result.items():
            summary_rows.append([name, key, value])
        print(f"{name}: " + ", ".join(f"{k}={v}" for k, v in result.items()))
    _write_csv(out_dir / "summary.csv", ["metric", "key", "value"],
               summary_rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# render / validate
# ---------------------------------------------------------------------------


def cmd_render(args) -> int:
    frames = render.render_log(args.log, args.out)
    print(f"wrote {len(frames)} frames to {args.out}")
    return EXIT_OK


def cmd_validate_config(args) -> int:
    cfg = resolve_config(args)
    if not args.print_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivelab",
        description="multi-agent driving laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy")
    add_config_args(p_train)
    p_train.set_defaults(func=cmd_train)

    p_roll = sub.add_parser("rollout", help="evaluate and log trajectories")
    add_config_args(p_roll)
    p_roll.add_argument("--checkpoint", help="policy checkpoint to load")
    p_roll.add_argument("--episodes", type=int, default=1)
    p_roll.add_argument("--deterministic", action="store_true",
                        help="argmax actions instead of sampling")
    p_roll.add_argument("--full-obs", action="store_true",
                        help="log full observation vectors, not digests")
    p_roll.add_argument("--log-name", default="rollout.jsonl")
    p_roll.set_defaults(func=cmd_rollout)

    p_met = sub.add_parser("metrics", help="compute emergence metrics")
    p_met.add_argument("--logs", nargs="+", required=True)
    p_met.add_argument("--metrics", nargs="*",
                       help=f"subset of {sorted(METRIC_RUNNERS)}")
    p_met.add_argument("--a-max", type=float, default=None)
    p_met.add_argument("--out", required=True)
    p_met.set_defaults(func=cmd_metrics)

    p_ren = sub.add_parser("render", help="rasterize a trajectory log")
    p_ren.add_argument("--log", required=True)
    p_ren.add_argument("--out", required=True)
    p_ren.set_defaults(func=cmd_render)

    p_val = sub.add_parser("validate-config", help="check a scenario config")
    add_config_args(p_val)
    p_val.set_defaults(func=cmd_validate_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, logs.LogError, render.RenderError,
            FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
