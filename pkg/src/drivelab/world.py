"""Simulation dynamics: maps, traffic signals, vehicles, pedestrians.

A world instance is confined to one rollout worker; concurrency comes from
running many independent instances with independently seeded RNG streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon
from shapely.ops import unary_union

from . import geometry as geo
from .config import (ACCEL_SET, PEDESTRIAN_RADIUS, PEDESTRIAN_SPEED,
                     RATING_CHOICES, VEHICLE_HALF_EXTENTS, ConfigError,
                     ScenarioConfig)

MAP_SCHEMA_VERSION = 1

GOAL_TOLERANCE = 0.5  # meters of remaining path length that counts as arrival
SPAWN_MARGIN = 0.5  # lateral clearance kept from the road edge at spawn

GREEN_DURATION = 15.0
YELLOW_DURATION = 3.0
CYCLE = 2 * (GREEN_DURATION + YELLOW_DURATION)

ACTIVE = "active"
REACHED = "reached"
COLLIDED = "collided"
OFF_ROAD = "off_road"


class SimulationError(RuntimeError):
    """Contract violations inside the simulator (CLI exit code 3)."""


# ---------------------------------------------------------------------------
# Maps
# ---------------------------------------------------------------------------


@dataclass
class RoadAxis:
    polyline: np.ndarray  # (K, 2)
    width: float

    @property
    def direction(self) -> np.ndarray:
        d = self.polyline[-1] - self.polyline[0]
        return d / np.linalg.norm(d)


@dataclass
class Pocket:
    region: np.ndarray  # (4, 2) polygon
    heading: float
    road: int
    approach: int
    pair: int = 0

    @property
    def center(self) -> np.ndarray:
        return self.region.mean(axis=0)


@dataclass
class SignalPlacement:
    position: np.ndarray
    facing: float
    road: int
    approach: int


@dataclass
class MapSpec:
    name: str
    drivable_polygons: list[np.ndarray]
    road_axes: list[RoadAxis]
    intersection_region: np.ndarray | None
    crosswalk: dict | None
    signal_placements: list[SignalPlacement]
    spawn_pockets: list[Pocket]
    goal_pockets: list[Pocket]
    boundary_segments: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_dict(cls, data: dict) -> "MapSpec":
        if data.get("schema_version") != MAP_SCHEMA_VERSION:
            raise ConfigError(f"unsupported map schema version {data.get('schema_version')}")
        spec = cls(
            name=data["name"],
            drivable_polygons=[np.asarray(p, dtype=np.float64)
                               for p in data["drivable_polygons"]],
            road_axes=[RoadAxis(np.asarray(r["polyline"], dtype=np.float64), r["width"])
                       for r in data["road_axes"]],
            intersection_region=(np.asarray(data["intersection_region"], dtype=np.float64)
                                 if data.get("intersection_region") else None),
            crosswalk=data.get("crosswalk"),
            signal_placements=[SignalPlacement(np.asarray(s["position"], dtype=np.float64),
                                               s["facing"], s["road"], s["approach"])
                               for s in data["signal_placements"]],
            spawn_pockets=[Pocket(np.asarray(p["region"], dtype=np.float64),
                                  p["heading"], p["road"], p["approach"], p.get("pair", 0))
                           for p in data["spawn_pockets"]],
            goal_pockets=[Pocket(np.asarray(p["region"], dtype=np.float64),
                                 0.0, p["road"], p["approach"])
                          for p in data["goal_pockets"]],
        )
        spec.boundary_segments = spec._compute_boundary()
        return spec

    def _compute_boundary(self) -> np.ndarray:
        union = unary_union([Polygon(p) for p in self.drivable_polygons])
        coords = np.asarray(union.exterior.coords)
        segs = np.stack([coords[:-1], coords[1:]], axis=1)
        return segs

    def contains(self, points: np.ndarray) -> np.ndarray:
        """True for points inside the union of drivable polygons."""
        inside = np.zeros(len(np.atleast_2d(points)), dtype=bool)
        for poly in self.drivable_polygons:
            inside |= geo.points_in_polygon(points, poly)
        return inside

    def nearest_axis(self, point: np.ndarray) -> int:
        dists = [_point_polyline_distance(point, axis.polyline)
                 for axis in self.road_axes]
        return int(np.argmin(dists))


def _point_polyline_distance(point: np.ndarray, polyline: np.ndarray) -> float:
    best = math.inf
    for a, b in zip(polyline[:-1], polyline[1:]):
        ab = b - a
        t = np.clip(np.dot(point - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(point - (a + t * ab))))
    return best


def load_map(name_or_path: str) -> MapSpec:
    """Load a bundled map by name, or any map JSON by path."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        data = json.loads(path.read_text())
    else:
        ref = resources.files("drivelab.maps").joinpath(f"{name_or_path}.json")
        try:
            data = json.loads(ref.read_text())
        except FileNotFoundError:
            raise ConfigError(f"unknown map '{name_or_path}'")
    return MapSpec.from_dict(data)


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------

RED, YELLOW, GREEN = "red", "yellow", "green"


@dataclass
class SignalState:
    """Fixed two-pair cycle with a per-episode random phase offset.

    Pair 0 runs green -> yellow -> red; pair 1 is offset by half the cycle so
    exactly one pair is non-red at any instant.
    """

    offset: float = 0.0
    clock: float = 0.0
    enabled: bool = True

    def phase(self, pair: int) -> str:
        if not self.enabled:
            return RED
        tau = (self.offset + self.clock + pair * (CYCLE / 2)) % CYCLE
        if tau < GREEN_DURATION:
            return GREEN
        if tau < GREEN_DURATION + YELLOW_DURATION:
            return YELLOW
        return RED

    def phase_clock(self, pair: int) -> float:
        tau = (self.offset + self.clock + pair * (CYCLE / 2)) % CYCLE
        if tau < GREEN_DURATION:
            return tau
        if tau < GREEN_DURATION + YELLOW_DURATION:
            return tau - GREEN_DURATION
        return tau - GREEN_DURATION - YELLOW_DURATION


def advance_signals(signals: SignalState, dt: float) -> SignalState:
    return SignalState(signals.offset, signals.clock + dt, signals.enabled)


# ---------------------------------------------------------------------------
# Bodies
# ---------------------------------------------------------------------------


@dataclass
class VehicleState:
    agent_id: int
    half_extents: tuple
    path: geo.Spline
    s: float  # progress along path, meters
    speed: float
    rating: float
    goal: np.ndarray
    goal_dist_init: float
    pose: geo.Pose
    status: str = ACTIVE
    approach: int = 0
    road: int = 0
    spawn_pocket: int = 0
    goal_pocket: int = 0
    lateral: float = 0.0
    last_action: int = 2  # index into ACCEL_SET; 2 is "coast"
    message_bit: int = 0
    first_collision_done: bool = False
    arrival_tick: int | None = None
    departure_tick: int | None = None

    @property
    def active(self) -> bool:
        return self.status == ACTIVE

    def remaining(self) -> float:
        return max(self.path.length - self.s, 0.0)


@dataclass
class PedestrianState:
    position: np.ndarray
    velocity: np.ndarray
    radius: float = PEDESTRIAN_RADIUS
    active: bool = True


@dataclass
class StepEvents:
    reached: set = field(default_factory=set)
    collided_vehicle: dict = field(default_factory=dict)  # agent_id -> partner ids
    collided_pedestrian: set = field(default_factory=set)
    off_road: set = field(default_factory=set)


@dataclass
class WorldState:
    tick: int
    map: MapSpec
    config: ScenarioConfig
    vehicles: list[VehicleState]
    pedestrians: list[PedestrianState]
    signals: SignalState
    next_agent_id: int = 0

    def vehicle(self, agent_id: int) -> VehicleState:
        for v in self.vehicles:
            if v.agent_id == agent_id:
                return v
        raise KeyError(agent_id)

    def active_vehicles(self) -> list[VehicleState]:
        return [v for v in self.vehicles if v.active]

    def obstacle_vehicles(self, exclude_id: int | None = None) -> list[VehicleState]:
        """Bodies that physically occupy the road: active plus halted-on-road."""
        return [v for v in self.vehicles
                if v.status in (ACTIVE, COLLIDED, OFF_ROAD)
                and v.agent_id != exclude_id]

    def all_done(self) -> bool:
        return not self.active_vehicles()


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------


def ego_right_offset(heading: float, lateral: float) -> np.ndarray:
    """Offset vector `lateral` meters to the right of a heading."""
    return lateral * np.array([math.sin(heading), -math.cos(heading)])


def _project_to_axis(map_spec: MapSpec, road: int, point: np.ndarray) -> np.ndarray:
    poly = map_spec.road_axes[road].polyline
    a, b = poly[0], poly[-1]
    ab = b - a
    t = np.dot(point - a, ab) / np.dot(ab, ab)
    return a + t * ab


def _road_is_bidirectional(map_spec: MapSpec, road: int) -> bool:
    headings = {round(p.heading, 3) for p in map_spec.spawn_pockets if p.road == road}
    return len(headings) > 1


def _pocket_lateral(map_spec: MapSpec, pocket: Pocket) -> float:
    """Signed ego-right lateral of a pocket center relative to its road axis."""
    axis_pt = _project_to_axis(map_spec, pocket.road, pocket.center)
    rel = pocket.center - axis_pt
    right = ego_right_offset(pocket.heading, 1.0)
    return float(np.dot(rel, right))


def route_waypoints(map_spec: MapSpec, spawn_idx: int, goal_idx: int,
                    lateral: float, stations: int = 6) -> np.ndarray:
    """Waypoints from a spawn pocket to a goal pocket, laid `lateral` meters
    to the ego-right of the road centerline.  Same-road goals give a straight
    route; cross-road goals turn through the intersection."""
    spawn = map_spec.spawn_pockets[spawn_idx]
    goal = map_spec.goal_pockets[goal_idx]
    off1 = ego_right_offset(spawn.heading, lateral)
    start = _project_to_axis(map_spec, spawn.road, spawn.center) + off1
    if goal.road == spawn.road:
        end = _project_to_axis(map_spec, goal.road, goal.center) + off1
        return np.linspace(start, end, stations)
    if map_spec.intersection_region is None:
        raise ConfigError("cross-road route requires an intersection region")
    center = map_spec.intersection_region.mean(axis=0)
    half = float(np.max(np.abs(map_spec.intersection_region - center)))
    exit_dir = goal.center - center
    exit_dir = exit_dir / np.linalg.norm(exit_dir)
    exit_heading = math.atan2(exit_dir[1], exit_dir[0])
    off2 = ego_right_offset(exit_heading, lateral)
    d1 = np.array([math.cos(spawn.heading), math.sin(spawn.heading)])
    # corner: intersection of the two offset lines
    a1 = start
    a2 = _project_to_axis(map_spec, goal.road, goal.center) + off2
    denom = d1[0] * (-exit_dir[1]) - d1[1] * (-exit_dir[0])
    t = ((a2 - a1)[0] * (-exit_dir[1]) - (a2 - a1)[1] * (-exit_dir[0])) / denom
    corner = a1 + t * d1
    entry = corner - d1 * (half + 3.0)
    exit_pt = corner + exit_dir * (half + 3.0)
    pts = [start]
    for p in (entry, corner, exit_pt, a2):
        if np.linalg.norm(p - pts[-1]) > 1.0:
            pts.append(p)
    return np.asarray(pts)


SPLINE_EDGE_MARGIN = 1.5  # keeps decoded control points inside the road


def deviation_offsets(road_width: float, bins: int) -> np.ndarray:
    """Lateral offsets (ego-right positive) encoded by the spline action bins."""
    extent = road_width / 2 - SPLINE_EDGE_MARGIN
    return np.linspace(-extent, extent, bins)


def apply_spline_action(world: WorldState, agent_id: int,
                        bin_indices, bins: int) -> geo.Spline:
    """Replace the agent's path with the spline decoded from per-station
    deviation bins laid perpendicular to the centerline route.  Call once per
    agent per episode, before the first step."""
    v = world.vehicle(agent_id)
    if v.s != 0.0:
        raise SimulationError("spline action must be applied before the first step")
    centerline = geo.build_spline(route_waypoints(
        world.map, v.spawn_pocket, v.goal_pocket, 0.0))
    width = world.map.road_axes[v.road].width
    offsets = deviation_offsets(width, bins)
    n_stations = len(bin_indices)
    pts = [v.pose.position]
    for i, bin_idx in enumerate(bin_indices):
        d = centerline.length * (i + 1) / (n_stations + 1)
        point, heading, _ = geo.spline_point_at_arclength(centerline, d)
        pts.append(point + ego_right_offset(heading, float(offsets[int(bin_idx)])))
    end, _, _ = geo.spline_point_at_arclength(centerline, centerline.length)
    pts.append(end)
    path = geo.build_spline(np.asarray(pts))
    v.path = path
    v.goal = path.control_points[-2].copy()
    v.goal_dist_init = path.length
    pos, heading, _ = geo.spline_point_at_arclength(path, 0.0)
    v.pose = geo.Pose(pos, heading)
    return path


# ---------------------------------------------------------------------------
# Spawning
# ---------------------------------------------------------------------------


def _opposite_goal(map_spec: MapSpec, spawn: Pocket) -> int:
    candidates = [i for i, g in enumerate(map_spec.goal_pockets)
                  if g.road == spawn.road and g.approach != spawn.approach]
    if not candidates:
        # single-goal maps (highway): everyone shares the one pocket
        return 0
    return candidates[0]


def _cross_goal(map_spec: MapSpec, spawn: Pocket, rng) -> int:
    candidates = [i for i, g in enumerate(map_spec.goal_pockets)
                  if g.road != spawn.road]
    if not candidates:
        return _opposite_goal(map_spec, spawn)
    return int(rng.choice(candidates))


def _spawn_clearance_ok(world: WorldState, pose: geo.Pose) -> bool:
    """Reject spawn positions with same-lane traffic close behind or ahead."""
    heading = pose.heading
    fwd = np.array([math.cos(heading), math.sin(heading)])
    right = ego_right_offset(heading, 1.0)
    for v in world.obstacle_vehicles():
        rel = v.pose.position - pose.position
        lon = float(np.dot(rel, fwd))
        lat = float(np.dot(rel, right))
        if abs(lat) < 2.5 and -25.0 <= lon <= 8.0:
            return False
    return True


def _try_spawn_vehicle(world: WorldState, pocket_idx: int, rng,
                       require_clearance: bool = False) -> VehicleState | None:
    cfg = world.config
    map_spec = world.map
    pocket = map_spec.spawn_pockets[pocket_idx]
    rating = float(rng.choice(RATING_CHOICES)) if cfg.ratings_enabled else 1.0
    if cfg.goal_mode == "cross" and map_spec.intersection_region is not None:
        goal_idx = _cross_goal(map_spec, pocket, rng)
    else:
        goal_idx = _opposite_goal(map_spec, pocket)
    road_half = map_spec.road_axes[pocket.road].width / 2
    lat_max = road_half - VEHICLE_HALF_EXTENTS[1] - SPAWN_MARGIN
    if _road_is_bidirectional(map_spec, pocket.road):
        # keep-right at spawn: fixed tracks live on the agent's own half
        lat_lo, lat_hi = SPAWN_MARGIN, lat_max
    else:
        center = _pocket_lateral(map_spec, pocket)
        lat_lo = max(center - 1.5, -lat_max)
        lat_hi = min(center + 1.5, lat_max)
    for _ in range(20):
        lateral = float(rng.uniform(lat_lo, lat_hi))
        waypoints = route_waypoints(map_spec, pocket_idx, goal_idx, lateral)
        path = geo.build_spline(waypoints)
        pos, heading, _ = geo.spline_point_at_arclength(path, 0.0)
        pose = geo.Pose(pos, heading)
        clear = all(not geo.rect_overlap(pose, VEHICLE_HALF_EXTENTS, v.pose, v.half_extents)
                    for v in world.obstacle_vehicles())
        if clear and require_clearance:
            clear = _spawn_clearance_ok(world, pose)
        if clear:
            goal = path.control_points[-2].copy()
            vehicle = VehicleState(
                agent_id=world.next_agent_id,
                half_extents=VEHICLE_HALF_EXTENTS,
                path=path, s=0.0, speed=0.0, rating=rating,
                goal=goal, goal_dist_init=path.length,
                pose=pose, approach=pocket.approach, road=pocket.road,
                spawn_pocket=pocket_idx, goal_pocket=goal_idx, lateral=lateral,
            )
            world.next_agent_id += 1
            return vehicle
    return None


def spawn_world(config: ScenarioConfig, rng) -> WorldState:
    """Initial Dec-POMDP state: up to n agents in distinct spawn pockets with
    non-overlapping footprints, goals sampled per the scenario's goal mode."""
    map_spec = load_map(config.map)
    signals = SignalState(offset=float(rng.uniform(0, CYCLE)),
                          enabled=config.signals_enabled and
                          bool(map_spec.signal_placements))
    world = WorldState(tick=0, map=map_spec, config=config,
                       vehicles=[], pedestrians=[], signals=signals)
    shuffled = list(rng.permutation(len(map_spec.spawn_pockets)))
    # spread agents across approaches before doubling up on any arm
    seen, first, rest = set(), [], []
    for idx in shuffled:
        approach = map_spec.spawn_pockets[int(idx)].approach
        (rest if approach in seen else first).append(idx)
        seen.add(approach)
    order = first + rest
    spawned = 0
    for pocket_idx in order:
        if spawned >= config.n_agents:
            break
        vehicle = _try_spawn_vehicle(world, int(pocket_idx), rng)
        if vehicle is not None:
            world.vehicles.append(vehicle)
            spawned += 1
    if spawned < config.n_agents and not config.continuous_spawn:
        raise ConfigError(
            f"could not place {config.n_agents} non-overlapping agents "
            f"({spawned} placed) on map '{config.map}'")
    world.vehicles.sort(key=lambda v: v.agent_id)
    if config.pedestrians and map_spec.crosswalk is not None:
        _spawn_pedestrians(world, rng)
    return world


def _spawn_pedestrians(world: WorldState, rng):
    cw = world.map.crosswalk
    a = np.asarray(cw["segment"][0], dtype=np.float64)
    b = np.asarray(cw["segment"][1], dtype=np.float64)
    along = (b - a) / np.linalg.norm(b - a)  # crossing direction
    lateral = np.array([-along[1], along[0]])  # across the crosswalk band
    count = int(rng.integers(1, world.config.max_pedestrians + 1))
    for _ in range(count):
        side = 1 if rng.random() < 0.5 else -1
        band = float(rng.uniform(-cw["width"] / 2 + PEDESTRIAN_RADIUS,
                                 cw["width"] / 2 - PEDESTRIAN_RADIUS))
        start_frac = float(rng.uniform(-0.15, 0.15))
        base = a if side > 0 else b
        pos = base + lateral * band + along * start_frac * side
        vel = along * PEDESTRIAN_SPEED * side
        world.pedestrians.append(PedestrianState(position=pos, velocity=vel))


def respawn_policy(world: WorldState, rng) -> WorldState:
    """Maintain the target active-agent count by spawning into free pockets
    (continuous-spawn scenarios only).  Mutates and returns `world`."""
    cfg = world.config
    if not cfg.continuous_spawn:
        return world
    deficit = cfg.n_agents - len(world.active_vehicles())
    if deficit <= 0:
        return world
    order = rng.permutation(len(world.map.spawn_pockets))
    for pocket_idx in order:
        if deficit <= 0:
            break
        pocket = world.map.spawn_pockets[int(pocket_idx)]
        blocked = any(geo.convex_overlap(geo.rect_corners(v.pose, v.half_extents),
                                         pocket.region)
                      for v in world.obstacle_vehicles())
        if blocked:
            continue
        vehicle = _try_spawn_vehicle(world, int(pocket_idx), rng,
                                     require_clearance=True)
        if vehicle is not None:
            world.vehicles.append(vehicle)
            deficit -= 1
    world.vehicles.sort(key=lambda v: v.agent_id)
    return world


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


def integrate_motion(v: float, a: float, dt: float, v_cap: float):
    """Advance speed/longitudinal distance with no-reverse and cap clamps.

    Returns (v_next, delta_s).  Braking never carries the vehicle backwards;
    acceleration saturates at v_cap mid-step (two-phase integration).
    """
    v_next = v + a * dt
    if a < 0 and v_next < 0.0:
        # stops inside the step: only the distance to the stopping point
        return 0.0, v * v / (2.0 * -a)
    if a > 0 and v_next > v_cap:
        t1 = (v_cap - v) / a if a > 0 else 0.0
        t1 = min(max(t1, 0.0), dt)
        ds = v * t1 + 0.5 * a * t1 * t1 + v_cap * (dt - t1)
        return v_cap, ds
    v_next = min(max(v_next, 0.0), v_cap)
    return v_next, v * dt + 0.5 * a * dt * dt


def step(world: WorldState, joint_actions: dict, rng) -> tuple[WorldState, StepEvents]:
    """Advance the simulation one tick under the given per-agent acceleration
    indices.  Mutates `world` in place and returns (world, events)."""
    cfg = world.config
    active_ids = {v.agent_id for v in world.active_vehicles()}
    if set(joint_actions) != active_ids:
        raise SimulationError(
            f"actions must cover exactly the active agents {sorted(active_ids)}, "
            f"got {sorted(joint_actions)}")

    events = StepEvents()
    dt = cfg.dt

    for v in world.vehicles:
        if not v.active:
            continue
        idx = int(joint_actions[v.agent_id])
        accel = ACCEL_SET[idx] * v.rating * (cfg.a_max / ACCEL_SET[-1])
        v_cap = v.rating * cfg.v_max
        v.speed, ds = integrate_motion(v.speed, accel, dt, v_cap)
        v.s = min(v.s + ds, v.path.length)
        pos, heading, _ = geo.spline_point_at_arclength(v.path, v.s)
        v.pose = geo.Pose(pos, heading)
        v.last_action = idx

    for p in world.pedestrians:
        if not p.active:
            continue
        p.position = p.position + p.velocity * dt
        if not world.map.contains(p.position[None, :])[0]:
            # past the curb on the far side: done crossing
            cw = world.map.crosswalk
            if cw is not None:
                a = np.asarray(cw["segment"][0])
                b = np.asarray(cw["segment"][1])
                span = np.linalg.norm(b - a)
                t = np.dot(p.position - a, (b - a) / span)
                if t < -1.0 or t > span + 1.0:
                    p.active = False

    world.signals = advance_signals(world.signals, dt)
    world.tick += 1

    _resolve_events(world, events)
    return world, events


def _resolve_events(world: WorldState, events: StepEvents):
    cfg = world.config
    bodies = world.obstacle_vehicles()
    corners = {v.agent_id: geo.rect_corners(v.pose, v.half_extents) for v in bodies}

    # vehicle-vehicle collisions (both parties penalized equally)
    for i in range(len(bodies)):
        for j in range(i + 1, len(bodies)):
            a, b = bodies[i], bodies[j]
            if not (a.active or b.active):
                continue
            if geo.convex_overlap(corners[a.agent_id], corners[b.agent_id]):
                events.collided_vehicle.setdefault(a.agent_id, []).append(b.agent_id)
                events.collided_vehicle.setdefault(b.agent_id, []).append(a.agent_id)

    for v in world.active_vehicles():
        # pedestrians
        for p in world.pedestrians:
            if p.active and geo.rect_circle_overlap(v.pose, v.half_extents,
                                                    p.position, p.radius):
                events.collided_pedestrian.add(v.agent_id)
                break
        # off-road: all four footprint corners must stay on drivable area
        if not world.map.contains(corners[v.agent_id]).all():
            events.off_road.add(v.agent_id)
        # goal arrival
        if v.remaining() <= GOAL_TOLERANCE:
            events.reached.add(v.agent_id)

    for v in world.vehicles:
        if not v.active:
            continue
        if v.agent_id in events.collided_vehicle or v.agent_id in events.collided_pedestrian:
            v.status = COLLIDED
        elif v.agent_id in events.off_road:
            v.status = OFF_ROAD
        elif v.agent_id in events.reached:
            v.status = REACHED

    # intersection arrival/departure bookkeeping
    region = world.map.intersection_region
    if region is not None:
        for v in world.vehicles:
            if v.status == REACHED:
                continue
            inside = geo.convex_overlap(
                geo.rect_corners(v.pose, v.half_extents), region)
            if inside and v.arrival_tick is None:
                v.arrival_tick = world.tick
            if not inside and v.arrival_tick is not None and v.departure_tick is None:
                v.departure_tick = world.tick
