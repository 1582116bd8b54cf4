import math

import numpy as np
import pytest

from drivelab import geometry as geo
from drivelab import sensing, world as w
from drivelab.config import ScenarioConfig


def single_agent_world(map_name="highway", **kwargs):
    cfg = ScenarioConfig(map=map_name, n_agents=1, signals_enabled=False, **kwargs)
    return w.spawn_world(cfg, np.random.default_rng(0)), cfg


def test_lone_agent_sees_walls_only():
    world, _ = single_agent_world()
    frame = sensing.lidar_scan(world, world.vehicles[0].agent_id, 64)
    assert len(frame.ranges) == 64
    assert np.all((frame.ranges >= 0) & (frame.ranges <= 50.0))
    # down the road, nothing within 50 m
    assert frame.ranges[0] == 50.0


def test_forward_ray_hits_vehicle_ahead():
    world, _ = single_agent_world()
    me = world.vehicles[0]
    # park a second vehicle 20 m dead ahead
    other = w.VehicleState(
        agent_id=99, half_extents=(2.25, 1.0), path=me.path, s=0.0, speed=0.0,
        rating=1.0, goal=me.goal, goal_dist_init=me.goal_dist_init,
        pose=geo.Pose(me.pose.position + np.array([20.0, 0.0]), 0.0))
    world.vehicles.append(other)
    frame = sensing.lidar_scan(world, me.agent_id, 64)
    assert frame.ranges[0] == pytest.approx(20.0 - 2.25, abs=1e-9)


def test_ray_pedestrian_disc():
    world, _ = single_agent_world(map_name="crosswalk")
    me = world.vehicles[0]
    world.pedestrians.append(w.PedestrianState(
        position=me.pose.position + np.array([10.0, 0.0]),
        velocity=np.zeros(2)))
    frame = sensing.lidar_scan(world, me.agent_id, 64)
    assert frame.ranges[0] == pytest.approx(10.0 - 0.4, abs=1e-9)


def test_dropout_identity_and_total():
    frame = sensing.LidarFrame(ranges=np.full(64, 30.0))
    rng = np.random.default_rng(0)
    same = sensing.apply_dropout(frame, 0.0, rng)
    assert np.array_equal(same.ranges, frame.ranges)
    gone = sensing.apply_dropout(frame, 100.0, rng)
    assert np.all(gone.ranges == 0.0)


def test_dropout_exact_count_and_frequency():
    frame = sensing.LidarFrame(ranges=np.full(64, 30.0))
    rng = np.random.default_rng(1)
    hits = np.zeros(64)
    n_frames = 10_000
    for _ in range(n_frames):
        noisy = sensing.apply_dropout(frame, 50.0, rng)
        zeros = noisy.ranges == 0.0
        assert zeros.sum() == 32
        hits += zeros
    freq = hits / n_frames
    assert np.all(np.abs(freq - 0.5) < 0.02)


def make_signal_world(clock=0.0, offset=0.0):
    cfg = ScenarioConfig(map="intersection4", n_agents=4)
    world = w.spawn_world(cfg, np.random.default_rng(3))
    world.signals = w.SignalState(offset=offset, clock=clock, enabled=True)
    return world


def test_sense_signal_codes():
    world = make_signal_world(offset=0.0)
    # approach 0 (east-bound) is pair 0: green at offset 0
    agent = next(v for v in world.vehicles if v.approach == 0)
    code = sensing.sense_signal(world, agent.agent_id)
    # agent spawns ~45-55 m from the signal: out of the 35 m range
    assert code == sensing.NO_SIGNAL_CODE
    # move it to 20 m before the signal
    agent.pose = geo.Pose(np.array([-27.0, -2.0]), 0.0)
    assert sensing.sense_signal(world, agent.agent_id) == 1.0
    world.signals = w.SignalState(offset=w.GREEN_DURATION, enabled=True)
    assert sensing.sense_signal(world, agent.agent_id) == 0.5
    world.signals = w.SignalState(offset=w.GREEN_DURATION + w.YELLOW_DURATION,
                                  enabled=True)
    assert sensing.sense_signal(world, agent.agent_id) == 0.0


def test_sense_signal_behind_gives_no_signal():
    world = make_signal_world()
    agent = next(v for v in world.vehicles if v.approach == 0)
    agent.pose = geo.Pose(np.array([15.0, -2.0]), 0.0)  # past the intersection
    assert sensing.sense_signal(world, agent.agent_id) == sensing.NO_SIGNAL_CODE


def test_receive_message_cone_and_nearest():
    cfg = ScenarioConfig(map="intersection4", n_agents=4, comm_enabled=True)
    world = w.spawn_world(cfg, np.random.default_rng(3))
    me = next(v for v in world.vehicles if v.approach == 0)
    me.pose = geo.Pose(np.array([-30.0, -2.0]), 0.0)
    others = [v for v in world.vehicles if v.agent_id != me.agent_id]
    # leader dead ahead broadcasting 1
    others[0].pose = geo.Pose(np.array([-20.0, -2.0]), 0.0)
    others[0].message_bit = 1
    # nearer car but at 45 degrees: outside the cone
    others[1].pose = geo.Pose(np.array([-25.0, 3.0]), 0.0)
    others[1].message_bit = 0
    others[2].pose = geo.Pose(np.array([-5.0, -2.0]), 0.0)
    others[2].message_bit = 0
    assert sensing.receive_message(world, me.agent_id) == 1
    # disabled channel reads constant zero
    world.config = ScenarioConfig(map="intersection4", n_agents=4, comm_enabled=False)
    assert sensing.receive_message(world, me.agent_id) == 0


def test_observation_stack_padding_and_fields():
    world, cfg = single_agent_world()
    me = world.vehicles[0]
    rng = np.random.default_rng(0)
    hist = sensing.SensorHistory(cfg.lidar_rays, cfg.lidar_stack)
    obs = sensing.build_observation(world, me.agent_id, hist, rng)
    assert obs.lidar_stack.shape == (5, 64)
    assert np.all(obs.lidar_stack[:4] == 0.0)  # zero-padded before t=5
    assert obs.goal_distance == pytest.approx(1.0)
    assert abs(obs.goal_bearing) < 0.1
    assert obs.speed == 0.0
    vec = obs.accel_vector()
    assert len(vec) == sensing.accel_obs_dim(64, 5)
    svec = obs.spline_vector()
    assert len(svec) == sensing.spline_obs_dim(64)


def test_observation_stack_reuses_frames_exactly():
    world, cfg = single_agent_world()
    me = world.vehicles[0]
    rng = np.random.default_rng(0)
    hist = sensing.SensorHistory(cfg.lidar_rays, cfg.lidar_stack)
    frames = []
    for _ in range(7):
        obs = sensing.build_observation(world, me.agent_id, hist, rng)
        frames.append(hist.frames[-1].ranges.copy())
        w.step(world, {me.agent_id: 3}, rng)
    stack = obs.lidar_stack
    for k in range(5):
        assert np.array_equal(stack[4 - k], frames[6 - k])


def test_goal_bearing_behind():
    world, _ = single_agent_world()
    me = world.vehicles[0]
    me.goal = me.pose.position - np.array([10.0, 0.0])
    rng = np.random.default_rng(0)
    hist = sensing.SensorHistory(64, 5)
    obs = sensing.build_observation(world, me.agent_id, hist, rng)
    assert abs(obs.goal_bearing) == pytest.approx(math.pi, abs=1e-9)


def test_disabled_channel_invariant_to_sender_bits():
    cfg = ScenarioConfig(map="intersection4", n_agents=4, comm_enabled=False)
    world = w.spawn_world(cfg, np.random.default_rng(3))
    me = world.vehicles[0]
    hist1 = sensing.SensorHistory(64, 5)
    obs1 = sensing.build_observation(world, me.agent_id, hist1, np.random.default_rng(9))
    for v in world.vehicles:
        v.message_bit = 1
    hist2 = sensing.SensorHistory(64, 5)
    obs2 = sensing.build_observation(world, me.agent_id, hist2, np.random.default_rng(9))
    assert np.array_equal(obs1.accel_vector(), obs2.accel_vector())
