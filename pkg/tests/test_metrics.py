import math

import numpy as np
import pytest

from drivelab import metrics
from drivelab.logs import AgentSeries, EpisodeLog
from drivelab.sensing import NO_SIGNAL_CODE
from drivelab.world import load_map


def make_agent(agent_id, ticks, xs=None, ys=None, headings=None, speeds=None,
               actions=None, messages=None, signals=None, roads=None,
               inside=None, rating=1.0):
    n = len(ticks)
    s = AgentSeries(agent_id=agent_id, rating=rating)
    s.ticks = list(ticks)
    s.x = list(xs) if xs is not None else [0.0] * n
    s.y = list(ys) if ys is not None else [0.0] * n
    s.heading = list(headings) if headings is not None else [0.0] * n
    s.speed = list(speeds) if speeds is not None else [0.0] * n
    s.action = list(actions) if actions is not None else [2] * n
    s.message = list(messages) if messages is not None else [0] * n
    s.signal = list(signals) if signals is not None else [NO_SIGNAL_CODE] * n
    s.status = ["active"] * n
    s.road = list(roads) if roads is not None else [0] * n
    s.in_intersection = list(inside) if inside is not None else [False] * n
    return s


def make_episode(agents, map_name="intersection4", index=0):
    ep = EpisodeLog(index=index, map_name=map_name)
    for s in agents:
        ep.agents[s.agent_id] = s
    return ep


def intersection_agent(agent_id, arrival, departure, horizon=30, **kwargs):
    ticks = list(range(horizon))
    inside = [arrival <= t < departure for t in ticks]
    return make_agent(agent_id, ticks, inside=inside, **kwargs)


# --- mutual information ------------------------------------------------------

def test_mi_closed_form_oracle():
    # joint [[0.4, 0.1], [0.1, 0.4]]: uniform marginals, so
    # MI = 0.8*log2(1.6) + 0.2*log2(0.4)
    expect = 0.8 * math.log2(1.6) + 0.2 * math.log2(0.4)
    got = metrics.mutual_information_from_joint([[0.4, 0.1], [0.1, 0.4]])
    assert got == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(0.2780719051, abs=1e-9)


def test_mi_identity_channel_is_one_bit():
    assert metrics.mutual_information_from_joint(
        [[0.5, 0.0], [0.0, 0.5]]) == pytest.approx(1.0)


def test_mi_independent_near_zero_at_1e4_samples():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 2, size=10_000)
    y = rng.integers(0, 5, size=10_000)
    assert metrics.mutual_information(x, y, 2, 5) < 0.02


def test_mi_sampled_joint_within_plugin_bias():
    rng = np.random.default_rng(1)
    joint = np.array([[0.4, 0.1], [0.1, 0.4]])
    flat = joint.ravel()
    draws = rng.choice(4, size=10_000, p=flat)
    x, y = draws // 2, draws % 2
    expect = metrics.mutual_information_from_joint(joint)
    assert abs(metrics.mutual_information(x, y, 2, 2) - expect) < 0.02


def test_mi_bounds():
    rng = np.random.default_rng(2)
    for _ in range(20):
        joint = rng.random((2, 5))
        p = joint / joint.sum()
        mi = metrics.mutual_information_from_joint(p)
        px, py = p.sum(axis=1), p.sum(axis=0)
        hx = -(px[px > 0] * np.log2(px[px > 0])).sum()
        hy = -(py[py > 0] * np.log2(py[py > 0])).sum()
        assert -1e-12 <= mi <= min(hx, hy) + 1e-12


# --- right of way ------------------------------------------------------------

def test_right_of_way_violated_pair():
    ep = make_episode([intersection_agent(0, 1, 5),
                       intersection_agent(1, 2, 4)])
    out = metrics.right_of_way_score([ep])
    assert out.per_pair == 0.0
    assert out.pairs == 1


def test_right_of_way_respected_pair():
    ep = make_episode([intersection_agent(0, 1, 4),
                       intersection_agent(1, 2, 5)])
    out = metrics.right_of_way_score([ep])
    assert out.per_pair == 1.0
    assert out.per_episode_mean == 1.0


def test_right_of_way_excludes_non_departers():
    stuck = make_agent(2, range(30), inside=[t >= 3 for t in range(30)])
    ep = make_episode([intersection_agent(0, 1, 4),
                       intersection_agent(1, 2, 5), stuck])
    out = metrics.right_of_way_score([ep])
    assert out.pairs == 1  # the stuck agent contributes no pairs


def test_right_of_way_id_permutation_invariant():
    a = [intersection_agent(i, arr, dep) for i, (arr, dep) in
         enumerate([(1, 6), (2, 4), (3, 8), (5, 7)])]
    b = [intersection_agent(9 - s.agent_id, 0, 1) for s in a]
    for s_old, s_new in zip(a, b):
        s_new.in_intersection = s_old.in_intersection
    s1 = metrics.right_of_way_score([make_episode(a)])
    s2 = metrics.right_of_way_score([make_episode(b)])
    assert s1.per_pair == s2.per_pair and s1.pairs == s2.pairs
    assert 0.0 <= s1.per_pair <= 1.0


def test_right_of_way_no_pairs_flagged():
    ep = make_episode([intersection_agent(0, 1, 4)])
    out = metrics.right_of_way_score([ep])
    assert out.no_pairs and out.per_pair == 0.0


# --- lane position -----------------------------------------------------------

def test_lane_offset_centerline_zero():
    hw = load_map("highway")
    assert metrics.lane_offset(hw, (70.0, 0.0), 0.0) == pytest.approx(0.0)


def test_lane_offset_right_edge_plus_one():
    hw = load_map("highway")
    # travelling +x: right is -y
    assert metrics.lane_offset(hw, (70.0, -6.0), 0.0) == pytest.approx(1.0)


def test_lane_offset_sign_flips_with_travel_direction():
    hw = load_map("highway")
    v1 = metrics.lane_offset(hw, (70.0, -2.0), 0.0)
    v2 = metrics.lane_offset(hw, (70.0, -2.0), math.pi)
    assert v1 == pytest.approx(-v2)
    assert v1 > 0


def test_lane_position_series_excludes_offroad():
    ep = make_episode([make_agent(0, [0, 1], xs=[70.0, 70.0],
                                  ys=[-3.0, -40.0])], map_name="highway")
    out = metrics.lane_position_series([ep])
    assert out.offroad == 1
    assert len(out.value) == 1
    assert out.value[0] == pytest.approx(0.5)


# --- signal compliance -------------------------------------------------------

def entry_agent(agent_id, code):
    ticks = list(range(10))
    inside = [t >= 5 for t in ticks]
    signals = [code if t < 5 else NO_SIGNAL_CODE for t in ticks]
    xs = [-30.0 + 5 * t for t in ticks]
    return make_agent(agent_id, ticks, xs=xs, inside=inside, signals=signals)


def test_signal_compliance_all_green():
    ep = make_episode([entry_agent(0, 1.0), entry_agent(1, 1.0)])
    out = metrics.signal_compliance([ep])
    assert out.fraction == 1.0 and out.entries == 2


def test_signal_compliance_all_red():
    ep = make_episode([entry_agent(0, 0.0)])
    out = metrics.signal_compliance([ep])
    assert out.fraction == 0.0 and out.entries == 1
    assert sum(c[1] for c in out.histogram.values()) == 5  # pre-entry ticks


def test_signal_compliance_last_pre_entry_code_wins():
    a = entry_agent(0, 0.0)
    a.signal[4] = 1.0  # saw red early, green just before entering
    out = metrics.signal_compliance([make_episode([a])])
    assert out.fraction == 1.0


def test_signal_compliance_blind_entries_excluded():
    a = entry_agent(0, NO_SIGNAL_CODE)
    out = metrics.signal_compliance([make_episode([a])])
    assert out.entries == 0 and out.blind_entries == 1


def test_signal_compliance_requires_intersection():
    ep = make_episode([make_agent(0, [0])], map_name="highway")
    with pytest.raises(metrics.MetricError):
        metrics.signal_compliance([ep])


# --- speaker consistency -----------------------------------------------------

def test_speaker_consistency_copy_channel():
    rng = np.random.default_rng(3)
    actions = rng.integers(0, 2, size=2000)  # only actions 0/1, uniform
    # message at t equals the action taken at t+1: a perfect 1-bit channel
    s = make_agent(0, range(2000),
                   actions=list(actions),
                   messages=list(actions[1:]) + [0])
    out = metrics.speaker_consistency([make_episode([s])])
    assert out.mi_action == pytest.approx(1.0, abs=0.02)
    assert not out.constant_message


def test_speaker_consistency_constant_message_flagged():
    s = make_agent(0, range(50), messages=[1] * 50)
    out = metrics.speaker_consistency([make_episode([s])])
    assert out.constant_message
    assert out.mi_action == 0.0 and out.pearson_heading == 0.0


def test_speaker_consistency_pearson_heading():
    # message = 1 exactly when heading positive: perfect rank agreement
    headings = [0.5 if i % 2 == 0 else -0.5 for i in range(100)]
    msgs = [1 if h > 0 else 0 for h in headings]
    s = make_agent(0, range(100), headings=headings, messages=msgs)
    out = metrics.speaker_consistency([make_episode([s])])
    assert out.pearson_heading == pytest.approx(1.0)


def test_speaker_consistency_skips_tick_gaps():
    s = make_agent(0, [0, 2, 4, 6], messages=[0, 1, 0, 1])
    with pytest.raises(metrics.MetricError):
        metrics.speaker_consistency([make_episode([s])])


# --- safety distance ---------------------------------------------------------

def test_required_safety_distance_table():
    assert metrics.required_safety_distance(10.0, 5.0) == pytest.approx(10.0)
    assert metrics.required_safety_distance(0.0, 2.5) == 0.0
    assert metrics.required_safety_distance(5.0, 2.5) == pytest.approx(5.0)
    assert metrics.required_safety_distance(-3.0, 2.5) == 0.0


def follower_leader_episode(gap_centers, v_follow, v_lead):
    follower = make_agent(0, [0], xs=[0.0], speeds=[v_follow])
    leader = make_agent(1, [0], xs=[gap_centers], speeds=[v_lead])
    return make_episode([follower, leader], map_name="highway")


def test_safety_distance_adherent_and_violating():
    # center gap 20 m -> rear-to-front gap 15.5 m; required 10 m at ds=7.07..?
    ep = follower_leader_episode(20.0, 10.0, 0.0)
    out = metrics.safety_distance_stats([ep], a_max=2.5)
    # follower sample: gap 15.5 < required 20 -> violation;
    # leader has no vehicle ahead -> 1 sample total
    assert len(out.samples) == 1
    gap, required = out.samples[0]
    assert gap == pytest.approx(15.5)
    assert required == pytest.approx(100.0 / 5.0)
    assert out.fraction == 0.0
    safe = metrics.safety_distance_stats([ep], a_max=10.0)
    assert safe.fraction == 1.0  # required drops to 5 m


def test_safety_distance_slower_follower_always_adherent():
    ep = follower_leader_episode(6.0, 2.0, 8.0)
    out = metrics.safety_distance_stats([ep], a_max=2.5)
    assert out.fraction == 1.0
    assert out.samples[0][1] == 0.0


def test_safety_distance_monotone_in_inverse_a_max():
    rng = np.random.default_rng(4)
    eps = [follower_leader_episode(float(rng.uniform(6, 40)),
                                   float(rng.uniform(0, 12)),
                                   float(rng.uniform(0, 12)))
           for _ in range(30)]
    fracs = [metrics.safety_distance_stats(eps, a).fraction
             for a in (10.0, 5.0, 2.5, 1.25)]
    assert all(a >= b for a, b in zip(fracs, fracs[1:]))


def test_safety_distance_ignores_cross_road_vehicles():
    follower = make_agent(0, [0], xs=[0.0], speeds=[10.0], roads=[0])
    crossing = make_agent(1, [0], xs=[10.0], speeds=[0.0], roads=[1])
    ep = make_episode([follower, crossing])
    out = metrics.safety_distance_stats([ep], a_max=2.5)
    assert len(out.samples) == 0


# --- crosswalk ---------------------------------------------------------------

def test_crosswalk_stationary_always_safe():
    ep = make_episode([make_agent(0, [0, 1], xs=[60.0, 60.0])],
                      map_name="crosswalk")
    ep.pedestrians = {0: np.array([[70.0, 0.0]]), 1: np.array([[70.0, 1.0]])}
    out = metrics.crosswalk_stats([ep], a_max=2.5)
    assert out.fraction_safe == 1.0
    assert out.samples[0][1] == 0.0
    assert out.min_distances[0] == pytest.approx(10.0)


def test_crosswalk_required_stop_formula():
    ep = make_episode([make_agent(0, [0], xs=[66.0], speeds=[5.0])],
                      map_name="crosswalk")
    ep.pedestrians = {0: np.array([[70.0, 0.0]])}
    out = metrics.crosswalk_stats([ep], a_max=2.5)
    d, required = out.samples[0]
    assert required == pytest.approx(5.0)
    assert d == pytest.approx(4.0)
    assert out.fraction_safe == 0.0


def test_crosswalk_requires_pedestrian_records():
    ep = make_episode([make_agent(0, [0])], map_name="crosswalk")
    with pytest.raises(metrics.MetricError):
        metrics.crosswalk_stats([ep], a_max=2.5)


# --- fast lanes --------------------------------------------------------------

def highway_agent(agent_id, rating, lane_y, n=40):
    return make_agent(agent_id, range(n), xs=[2.0 * t for t in range(n)],
                      ys=[lane_y] * n, rating=rating)


def test_fast_lane_position_equals_rating():
    # lane position proportional to rating (travelling +x: right is -y)
    agents = [highway_agent(i, r, -3.0 * r)
              for i, r in enumerate((0.6, 0.8, 1.0, 1.2, 1.4))]
    out = metrics.fast_lane_segregation([make_episode(agents, map_name="highway")])
    assert out.correlation == pytest.approx(1.0)
    assert out.n == 5


def test_fast_lane_independent_near_zero():
    rng = np.random.default_rng(5)
    agents = [highway_agent(i, float(rng.choice((0.6, 1.0, 1.4))),
                            float(rng.uniform(-4, 4)))
              for i in range(200)]
    out = metrics.fast_lane_segregation([make_episode(agents, map_name="highway")])
    assert abs(out.correlation) < 0.2


def test_fast_lane_constant_rating_flagged():
    agents = [highway_agent(i, 1.0, -2.0) for i in range(4)]
    out = metrics.fast_lane_segregation([make_episode(agents, map_name="highway")])
    assert out.constant_rating and out.correlation == 0.0
