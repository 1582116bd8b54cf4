"""Emergence statistics computed from trajectory logs: signal compliance,
normalized lane position, right of way, speaker consistency, safety distance,
fast-lane segregation, and crosswalk stopping.

Everything here is read-only over parsed logs; results reduce
deterministically regardless of episode order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .logs import EpisodeLog
from .sensing import NO_SIGNAL_CODE
from .world import load_map

SPATIAL_BIN = 2.0  # meters, spatial histogram granularity
LEADER_CONE = math.radians(15.0)  # half-angle for leader identification
LEADER_RANGE = 50.0
VEHICLE_LENGTH = 4.5

GREEN_CODE = 1.0


class MetricError(ValueError):
    """Metric inapplicable to the given logs."""


_MAP_CACHE: dict = {}


def _map_for(episode: EpisodeLog):
    if episode.map_name not in _MAP_CACHE:
        _MAP_CACHE[episode.map_name] = load_map(episode.map_name)
    return _MAP_CACHE[episode.map_name]


# ---------------------------------------------------------------------------
# Signal compliance
# ---------------------------------------------------------------------------


@dataclass
class SignalComplianceResult:
    fraction: float
    entries: int
    blind_entries: int  # traversals with no pre-entry signal observation
    histogram: dict  # (bx, by) -> [green_count, total_count]


def signal_compliance(episodes) -> SignalComplianceResult:
    """Fraction of intersection entries whose last observed pre-entry signal
    was green, plus a 2 m spatial histogram over pre-entry positions."""
    if not episodes:
        raise MetricError("no episodes")
    if _map_for(episodes[0]).intersection_region is None:
        raise MetricError("map has no intersection region")
    green_entries = entries = blind = 0
    histogram: dict = {}
    for ep in episodes:
        for aid, s in ep.agents.items():
            arrival, _ = ep.arrival_departure(aid)
            if arrival is None:
                continue
            pre = [k for k, t in enumerate(s.ticks) if t < arrival]
            seen = [s.signal[k] for k in pre if s.signal[k] != NO_SIGNAL_CODE]
            if not seen:
                blind += 1
                continue
            on_green = seen[-1] == GREEN_CODE
            entries += 1
            green_entries += on_green
            for k in pre:
                key = (math.floor(s.x[k] / SPATIAL_BIN),
                       math.floor(s.y[k] / SPATIAL_BIN))
                cell = histogram.setdefault(key, [0, 0])
                cell[0] += on_green
                cell[1] += 1
    fraction = green_entries / entries if entries else 0.0
    return SignalComplianceResult(fraction, entries, blind, histogram)


# ---------------------------------------------------------------------------
# Lane position
# ---------------------------------------------------------------------------


@dataclass
class LanePositionResult:
    episode: np.ndarray
    agent: np.ndarray
    tick: np.ndarray
    value: np.ndarray  # signed normalized offsets, ego-right positive
    offroad: int  # |offset| > 1 samples, excluded from `value`


def lane_offset(map_spec, position, heading) -> float:
    """Signed lateral offset from the nearest road axis, normalized by the
    half width; positive to the right in the direction of travel."""
    position = np.asarray(position, dtype=np.float64)
    axis = map_spec.road_axes[map_spec.nearest_axis(position)]
    a, b = axis.polyline[0], axis.polyline[-1]
    u = (b - a) / np.linalg.norm(b - a)
    if u[0] * math.cos(heading) + u[1] * math.sin(heading) < 0:
        u = -u
    rel = position - a
    perp = rel - np.dot(rel, u) * u
    right = np.array([u[1], -u[0]])
    return float(np.dot(perp, right) / (axis.width / 2))


def lane_position_series(episodes) -> LanePositionResult:
    eps, agents, ticks, values = [], [], [], []
    offroad = 0
    for ei, ep in enumerate(episodes):
        map_spec = _map_for(ep)
        for aid, s in ep.agents.items():
            for k, t in enumerate(s.ticks):
                v = lane_offset(map_spec, (s.x[k], s.y[k]), s.heading[k])
                if abs(v) > 1.0:
                    offroad += 1
                    continue
                eps.append(ei)
                agents.append(aid)
                ticks.append(t)
                values.append(v)
    return LanePositionResult(np.asarray(eps), np.asarray(agents),
                              np.asarray(ticks), np.asarray(values), offroad)


# ---------------------------------------------------------------------------
# Right of way
# ---------------------------------------------------------------------------


@dataclass
class RightOfWayResult:
    per_pair: float  # fraction over all ordered pairs, all episodes pooled
    per_episode_mean: float  # mean of per-episode pair fractions
    pairs: int
    no_pairs: bool


def right_of_way_score(episodes) -> RightOfWayResult:
    """First-in-first-out at the intersection: over ordered pairs with
    strictly earlier arrival, the fraction that also depart no later.
    Agents that never depart (collided inside) are excluded."""
    respected = total = 0
    episode_scores = []
    for ep in episodes:
        times = []
        for aid in ep.agents:
            arrival, departure = ep.arrival_departure(aid)
            if arrival is not None and departure is not None:
                times.append((arrival, departure))
        ep_respected = ep_total = 0
        for i in range(len(times)):
            for j in range(len(times)):
                if i != j and times[i][0] < times[j][0]:
                    ep_total += 1
                    ep_respected += times[i][1] <= times[j][1]
        if ep_total:
            episode_scores.append(ep_respected / ep_total)
        respected += ep_respected
        total += ep_total
    if total == 0:
        return RightOfWayResult(0.0, 0.0, 0, True)
    return RightOfWayResult(respected / total,
                            float(np.mean(episode_scores)), total, False)


# ---------------------------------------------------------------------------
# Speaker consistency
# ---------------------------------------------------------------------------


def mutual_information_from_joint(joint: np.ndarray) -> float:
    """Plug-in MI in bits from a joint probability (or count) table."""
    joint = np.asarray(joint, dtype=np.float64)
    total = joint.sum()
    if total <= 0:
        return 0.0
    p = joint / total
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    mask = p > 0
    return float((p[mask] * np.log2(p[mask] / (px @ py)[mask])).sum())


def mutual_information(x, y, nx: int, ny: int) -> float:
    joint = np.zeros((nx, ny))
    np.add.at(joint, (np.asarray(x, dtype=int), np.asarray(y, dtype=int)), 1.0)
    return mutual_information_from_joint(joint)


@dataclass
class SpeakerConsistencyResult:
    mi_action: float  # bits, message vs next-tick acceleration category
    mi_heading: float  # bits, message vs next-tick heading bin
    pearson_heading: float
    pearson_heading_change: float
    samples: int
    constant_message: bool


def _pearson(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if len(a) < 2 or a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def speaker_consistency(episodes, heading_bins: int = 8,
                        n_actions: int = 5) -> SpeakerConsistencyResult:
    msgs, next_actions, next_headings, headings, changes = [], [], [], [], []
    for ep in episodes:
        for s in ep.agents.values():
            for k in range(len(s.ticks) - 1):
                if s.ticks[k + 1] != s.ticks[k] + 1:
                    continue
                msgs.append(s.message[k])
                next_actions.append(s.action[k + 1])
                h = s.heading[k + 1] % (2 * math.pi)
                next_headings.append(int(h / (2 * math.pi) * heading_bins)
                                     % heading_bins)
                headings.append(s.heading[k])
                changes.append(geo.normalize_angle(s.heading[k + 1] - s.heading[k]))
    if not msgs:
        raise MetricError("no consecutive-tick samples in logs")
    constant = len(set(msgs)) < 2
    if constant:
        return SpeakerConsistencyResult(0.0, 0.0, 0.0, 0.0, len(msgs), True)
    return SpeakerConsistencyResult(
        mi_action=mutual_information(msgs, next_actions, 2, n_actions),
        mi_heading=mutual_information(msgs, next_headings, 2, heading_bins),
        pearson_heading=_pearson(headings, msgs),
        pearson_heading_change=_pearson(changes, msgs),
        samples=len(msgs),
        constant_message=False)


# ---------------------------------------------------------------------------
# Safety distance
# ---------------------------------------------------------------------------


def required_safety_distance(delta_speed: float, a_max: float) -> float:
    """Minimum gap letting the follower shed the speed surplus: Δs²/(2a_max)."""
    return max(delta_speed, 0.0) ** 2 / (2.0 * a_max)


@dataclass
class SafetyDistanceResult:
    fraction: float
    samples: np.ndarray  # (n, 2) columns (gap, required)


def _per_tick_states(ep: EpisodeLog):
    by_tick: dict = {}
    for s in ep.agents.values():
        for k, t in enumerate(s.ticks):
            by_tick.setdefault(t, []).append(
                (s.agent_id, np.array([s.x[k], s.y[k]]), s.heading[k],
                 s.speed[k], s.road[k]))
    return by_tick


def safety_distance_stats(episodes, a_max: float) -> SafetyDistanceResult:
    """Adherence to the kinematic safety distance against the leading vehicle
    (nearest same-road vehicle within a +/-15 degree forward cone, 50 m)."""
    samples = []
    adherent = 0
    for ep in episodes:
        for states in _per_tick_states(ep).values():
            for aid, pos, heading, speed, road in states:
                leader = None
                for oid, opos, _, ospeed, oroad in states:
                    if oid == aid or oroad != road:
                        continue
                    rel = opos - pos
                    dist = float(np.linalg.norm(rel))
                    if dist > LEADER_RANGE:
                        continue
                    bearing = geo.normalize_angle(
                        math.atan2(rel[1], rel[0]) - heading)
                    if abs(bearing) > LEADER_CONE:
                        continue
                    if leader is None or dist < leader[0]:
                        leader = (dist, ospeed)
                if leader is None:
                    continue
                gap = leader[0] - VEHICLE_LENGTH
                required = required_safety_distance(speed - leader[1], a_max)
                samples.append((gap, required))
                adherent += gap >= required
    arr = (np.asarray(samples, dtype=np.float64)
           if samples else np.zeros((0, 2)))
    fraction = adherent / len(samples) if samples else 1.0
    return SafetyDistanceResult(fraction, arr)


# ---------------------------------------------------------------------------
# Crosswalk
# ---------------------------------------------------------------------------


@dataclass
class CrosswalkResult:
    fraction_safe: float
    samples: np.ndarray  # (n, 2) columns (distance to nearest pedestrian, required stop)
    min_distances: np.ndarray  # per (episode, agent) closest approach


def crosswalk_stats(episodes, a_max: float) -> CrosswalkResult:
    """Distance kept from pedestrians versus the stopping distance s²/(2a_max)."""
    if not any(ep.pedestrians for ep in episodes):
        raise MetricError("logs contain no pedestrian records")
    samples, mins = [], []
    safe = 0
    for ep in episodes:
        closest: dict = {}
        for s in ep.agents.values():
            for k, t in enumerate(s.ticks):
                peds = ep.pedestrians.get(t)
                if peds is None or len(peds) == 0:
                    continue
                pos = np.array([s.x[k], s.y[k]])
                d = float(np.linalg.norm(peds - pos, axis=1).min())
                required = s.speed[k] ** 2 / (2.0 * a_max)
                samples.append((d, required))
                safe += d >= required
                closest[s.agent_id] = min(closest.get(s.agent_id, math.inf), d)
        mins.extend(closest.values())
    arr = (np.asarray(samples, dtype=np.float64)
           if samples else np.zeros((0, 2)))
    fraction = safe / len(samples) if samples else 1.0
    return CrosswalkResult(fraction, arr, np.asarray(mins, dtype=np.float64))


# ---------------------------------------------------------------------------
# Fast lanes
# ---------------------------------------------------------------------------


@dataclass
class FastLaneResult:
    correlation: float  # Pearson between rating and steady-state lane position
    n: int
    constant_rating: bool


def fast_lane_segregation(episodes) -> FastLaneResult:
    """Correlation between the acceleration rating and the mean lane position
    over the final quarter of each agent's trajectory."""
    ratings, positions = [], []
    for ep in episodes:
        map_spec = _map_for(ep)
        for s in ep.agents.values():
            n = len(s.ticks)
            if n < 4:
                continue
            tail = range(3 * n // 4, n)
            offs = [lane_offset(map_spec, (s.x[k], s.y[k]), s.heading[k])
                    for k in tail]
            ratings.append(s.rating)
            positions.append(float(np.mean(offs)))
    if not ratings:
        raise MetricError("no trajectories long enough for steady state")
    if len(set(ratings)) < 2:
        return FastLaneResult(0.0, len(ratings), True)
    return FastLaneResult(_pearson(ratings, positions), len(ratings), False)
