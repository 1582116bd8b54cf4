"""Per-agent observations: noisy stacked LiDAR, satnav dashboard, ternary
signal code, and the optional one-bit communication channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .config import LIDAR_RANGE
from .world import GREEN, RED, WorldState, YELLOW

SIGNAL_SENSE_DISTANCE = 35.0  # meters
SIGNAL_FACING_CONE = math.radians(60.0)  # half-angle
COMM_CONE = math.radians(30.0)  # half-angle of the receive cone

SIGNAL_CODES = {RED: 0.0, YELLOW: 0.5, GREEN: 1.0}
NO_SIGNAL_CODE = 0.75


@dataclass
class LidarFrame:
    ranges: np.ndarray  # (n_rays,), meters in [0, 50]; dropped rays read 0


@dataclass
class Observation:
    lidar_stack: np.ndarray  # (stack, n_rays), oldest first, meters
    goal_distance: float  # remaining / initial, clamped to [0, 1]
    goal_bearing: float  # radians relative to heading, in (-pi, pi]
    speed: float  # normalized by rating * v_max
    signal_code: float
    received_message: int
    rating: float = 1.0

    def accel_vector(self) -> np.ndarray:
        """Flat input for the acceleration subpolicy and critic encoder."""
        return np.concatenate([
            self.lidar_stack.ravel() / LIDAR_RANGE,
            [self.goal_distance, self.goal_bearing / math.pi, self.speed,
             self.signal_code, float(self.received_message)],
        ])

    def spline_vector(self) -> np.ndarray:
        """Flat input for the single-step spline subpolicy: the latest LiDAR
        frame plus dashboard plus the acceleration rating."""
        return np.concatenate([
            self.lidar_stack[-1] / LIDAR_RANGE,
            [self.goal_distance, self.goal_bearing / math.pi, self.speed,
             self.rating],
        ])


def accel_obs_dim(n_rays: int, stack: int) -> int:
    return n_rays * stack + 5


def spline_obs_dim(n_rays: int) -> int:
    return n_rays + 4


@dataclass
class SensorHistory:
    """Per-agent rolling buffer of post-dropout LiDAR frames, owned by the
    rollout worker."""

    n_rays: int
    stack: int
    frames: list = field(default_factory=list)

    def push(self, frame: LidarFrame):
        self.frames.append(frame)
        if len(self.frames) > self.stack:
            self.frames.pop(0)

    def stacked(self) -> np.ndarray:
        pad = self.stack - len(self.frames)
        rows = [np.zeros(self.n_rays)] * pad + [f.ranges for f in self.frames]
        return np.stack(rows)


def lidar_scan(world: WorldState, agent_id: int, n_rays: int) -> LidarFrame:
    """Cast n equi-angular rays (ray 0 along the heading) against all other
    vehicle footprints, pedestrian discs, and the map boundary."""
    me = world.vehicle(agent_id)
    if not me.active:
        raise ValueError(f"agent {agent_id} is not active")
    angles = me.pose.heading + 2.0 * math.pi * np.arange(n_rays) / n_rays
    segments = [world.map.boundary_segments]
    for v in world.obstacle_vehicles(exclude_id=agent_id):
        segments.append(geo.rect_edges(v.pose, v.half_extents))
    segs = np.concatenate(segments, axis=0)
    ranges = geo.ray_cast_multi(me.pose.position, angles, segs, LIDAR_RANGE)
    peds = [p for p in world.pedestrians if p.active]
    if peds:
        centers = np.stack([p.position for p in peds])
        radii = np.array([p.radius for p in peds])
        ranges = np.minimum(ranges, geo.ray_cast_circles(
            me.pose.position, angles, centers, radii, LIDAR_RANGE))
    return LidarFrame(ranges=ranges)


def apply_dropout(frame: LidarFrame, noise_pct: float, rng) -> LidarFrame:
    """Zero out exactly round(x% * n_rays) rays, chosen uniformly without
    replacement; a fresh choice is made every call."""
    if not (0.0 <= noise_pct <= 100.0):
        raise ValueError("noise_pct must lie in [0, 100]")
    n = len(frame.ranges)
    k = int(round(noise_pct * n / 100.0))
    if k == 0:
        return LidarFrame(ranges=frame.ranges.copy())
    dropped = rng.choice(n, size=k, replace=False)
    ranges = frame.ranges.copy()
    ranges[dropped] = 0.0
    return LidarFrame(ranges=ranges)


def sense_signal(world: WorldState, agent_id: int) -> float:
    """Ternary signal code for the agent's approach, or 0.75 when no signal
    is in range and inside the facing cone."""
    me = world.vehicle(agent_id)
    if not world.signals.enabled:
        return NO_SIGNAL_CODE
    for placement in world.map.signal_placements:
        if placement.approach != me.approach:
            continue
        rel = placement.position - me.pose.position
        dist = float(np.linalg.norm(rel))
        if dist > SIGNAL_SENSE_DISTANCE:
            continue
        bearing = geo.normalize_angle(math.atan2(rel[1], rel[0]) - me.pose.heading)
        if abs(bearing) > SIGNAL_FACING_CONE:
            continue
        pair = _approach_pair(world, placement.approach)
        return SIGNAL_CODES[world.signals.phase(pair)]
    return NO_SIGNAL_CODE


def _approach_pair(world: WorldState, approach: int) -> int:
    for p in world.map.spawn_pockets:
        if p.approach == approach:
            return p.pair
    return 0


def receive_message(world: WorldState, agent_id: int) -> int:
    """Message bit of the nearest active vehicle within the +/-30 degree
    forward cone; 0 when none, or when the channel is disabled."""
    if not world.config.comm_enabled:
        return 0
    me = world.vehicle(agent_id)
    best = None
    for v in world.active_vehicles():
        if v.agent_id == agent_id:
            continue
        rel = v.pose.position - me.pose.position
        bearing = geo.normalize_angle(math.atan2(rel[1], rel[0]) - me.pose.heading)
        if abs(bearing) > COMM_CONE:
            continue
        dist = float(np.linalg.norm(rel))
        key = (dist, v.agent_id)
        if best is None or key < best[0]:
            best = (key, v.message_bit)
    return int(best[1]) if best else 0


def build_observation(world: WorldState, agent_id: int,
                      history: SensorHistory, rng) -> Observation:
    """Assemble the agent's observation for the current tick, pushing a fresh
    post-dropout LiDAR frame into `history`."""
    cfg = world.config
    me = world.vehicle(agent_id)
    frame = lidar_scan(world, agent_id, cfg.lidar_rays)
    frame = apply_dropout(frame, cfg.lidar_noise_pct, rng)
    history.push(frame)
    goal_dist = min(me.remaining() / me.goal_dist_init, 1.0)
    rel = me.goal - me.pose.position
    if np.linalg.norm(rel) < 1e-9:
        bearing = 0.0
    else:
        bearing = geo.normalize_angle(math.atan2(rel[1], rel[0]) - me.pose.heading)
    return Observation(
        lidar_stack=history.stacked(),
        goal_distance=goal_dist,
        goal_bearing=bearing,
        speed=me.speed / (me.rating * cfg.v_max),
        signal_code=sense_signal(world, agent_id),
        received_message=receive_message(world, agent_id),
        rating=me.rating,
    )
