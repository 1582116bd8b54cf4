"""Trajectory logs: JSON Lines with a versioned header, one record per
(tick, agent), plus one pedestrian record per tick when pedestrians exist.

Observations are stored as short digests by default; the full vector goes in
behind a flag because stacked LiDAR dominates log size otherwise.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo

LOG_FORMAT = "drivelab-log"
LOG_SCHEMA_VERSION = 1


class LogError(ValueError):
    """Malformed or incompatible trajectory log files."""


def obs_digest(vector: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(
        vector, dtype="<f8").tobytes()).hexdigest()[:16]


def _placement_pair(world, placement) -> int:
    for p in world.map.spawn_pockets:
        if p.approach == placement.approach:
            return p.pair
    return 0


class LogWriter:
    """Streams step records for consecutive episodes to one JSONL file.

    Matches the `log_sink` callback contract of `optim.run_episode`; set
    `.episode` before each episode.
    """

    def __init__(self, path, config, full_obs: bool = False):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self._f = open(path, "w")
        self.full_obs = full_obs
        self.episode = 0
        self._frame_seen = set()
        header = {
            "format": LOG_FORMAT,
            "schema_version": LOG_SCHEMA_VERSION,
            "map": config.map,
            "config": config.to_dict(),
            "full_obs": full_obs,
        }
        self._f.write(json.dumps(header, sort_keys=True) + "\n")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self._f.close()

    def sink(self, world, vehicle, obs, accel_idx, message_bit, breakdown, tick):
        if (self.episode, tick) not in self._frame_seen:
            self._frame_seen.add((self.episode, tick))
            self._f.write(json.dumps({
                "type": "frame", "episode": self.episode, "tick": tick,
                "pedestrians": [[round(float(p.position[0]), 6),
                                 round(float(p.position[1]), 6)]
                                for p in world.pedestrians if p.active],
                "signals": [world.signals.phase(_placement_pair(world, pl))
                            for pl in world.map.signal_placements],
            }) + "\n")
        vec = obs.accel_vector()
        region = world.map.intersection_region
        inside = bool(region is not None and geo.convex_overlap(
            geo.rect_corners(vehicle.pose, vehicle.half_extents), region))
        record = {
            "type": "step",
            "episode": self.episode,
            "tick": tick,
            "agent": vehicle.agent_id,
            "x": round(float(vehicle.pose.position[0]), 6),
            "y": round(float(vehicle.pose.position[1]), 6),
            "heading": round(float(vehicle.pose.heading), 9),
            "speed": round(float(vehicle.speed), 9),
            "action": int(accel_idx),
            "message": int(message_bit),
            "signal": float(obs.signal_code),
            "status": vehicle.status,
            "rating": float(vehicle.rating),
            "road": int(vehicle.road),
            "in_intersection": inside,
            "reward": {
                "goal": breakdown.goal,
                "collision": breakdown.collision,
                "smoothness": breakdown.smoothness,
                "progress": breakdown.progress,
                "total": breakdown.total,
            },
            "obs": ([float(v) for v in vec] if self.full_obs
                    else obs_digest(vec)),
        }
        self._f.write(json.dumps(record) + "\n")


def read_log(path):
    """Parse a log file; returns (header dict, list of record dicts)."""
    records = []
    with open(path) as f:
        first = f.readline()
        if not first:
            raise LogError(f"empty log file: {path}")
        header = json.loads(first)
        if header.get("format") != LOG_FORMAT:
            raise LogError(f"not a trajectory log: {path}")
        if header.get("schema_version") != LOG_SCHEMA_VERSION:
            raise LogError(
                f"unsupported log schema version {header.get('schema_version')}")
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return header, records


# ---------------------------------------------------------------------------
# Structured view for metrics
# ---------------------------------------------------------------------------


@dataclass
class AgentSeries:
    agent_id: int
    rating: float = 1.0
    ticks: list = field(default_factory=list)
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    heading: list = field(default_factory=list)
    speed: list = field(default_factory=list)
    action: list = field(default_factory=list)
    message: list = field(default_factory=list)
    signal: list = field(default_factory=list)
    status: list = field(default_factory=list)
    road: list = field(default_factory=list)
    in_intersection: list = field(default_factory=list)

    def positions(self) -> np.ndarray:
        return np.stack([self.x, self.y], axis=1)


@dataclass
class EpisodeLog:
    index: int
    map_name: str
    agents: dict = field(default_factory=dict)  # agent_id -> AgentSeries
    pedestrians: dict = field(default_factory=dict)  # tick -> positions array
    signal_phases: dict = field(default_factory=dict)  # tick -> phase per placement

    def arrival_departure(self, agent_id: int):
        """First tick inside the intersection and first tick back outside;
        None where the event never happens."""
        s = self.agents[agent_id]
        arrival = departure = None
        for tick, inside in zip(s.ticks, s.in_intersection):
            if inside and arrival is None:
                arrival = tick
            if not inside and arrival is not None:
                departure = tick
                break
        return arrival, departure


def load_episode_logs(paths) -> list[EpisodeLog]:
    """Read one or more log files into per-episode structured series.

    Ticks are checked monotone per agent; violations raise LogError.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    episodes: list[EpisodeLog] = []
    for file_no, path in enumerate(paths):
        header, records = read_log(path)
        by_episode: dict = {}
        for rec in records:
            key = (file_no, rec["episode"])
            if key not in by_episode:
                by_episode[key] = EpisodeLog(index=len(episodes) + len(by_episode),
                                             map_name=header["map"])
            ep = by_episode[key]
            if rec.get("type") == "frame":
                if rec["pedestrians"]:
                    ep.pedestrians[rec["tick"]] = np.asarray(
                        rec["pedestrians"], dtype=np.float64)
                ep.signal_phases[rec["tick"]] = rec.get("signals", [])
                continue
            if rec.get("type") != "step":
                continue
            aid = rec["agent"]
            if aid not in ep.agents:
                ep.agents[aid] = AgentSeries(agent_id=aid,
                                             rating=rec.get("rating", 1.0))
            s = ep.agents[aid]
            if s.ticks and rec["tick"] <= s.ticks[-1]:
                raise LogError(f"non-monotone ticks for agent {aid} in {path}")
            s.ticks.append(rec["tick"])
            s.x.append(rec["x"])
            s.y.append(rec["y"])
            s.heading.append(rec["heading"])
            s.speed.append(rec["speed"])
            s.action.append(rec["action"])
            s.message.append(rec["message"])
            s.signal.append(rec["signal"])
            s.status.append(rec["status"])
            s.road.append(rec.get("road", 0))
            s.in_intersection.append(rec["in_intersection"])
        episodes.extend(by_episode.values())
    return episodes
