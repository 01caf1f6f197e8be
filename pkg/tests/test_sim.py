import math

import numpy as np
import pytest

from barrierdiff.diffusion import Route
from barrierdiff.dynamics import Control, EgoState, VehicleShape
from barrierdiff.planner import PlannerConfig
from barrierdiff.sim import (AgentSpec, Agent, BATTERIES, IdmParams, Scenario, ScenarioError, ScoreTerms, World,
                             battery, builtin, capsule_gaps, composite_score, detect_collision, idm_accel,
                             run_scenario, step_world, ttc_kernel)
from barrierdiff.sim.scenarios import CORE_FAMILIES
from barrierdiff.sim.trace import dumps

SHAPE = VehicleShape()
HOLD = Control(0.0, 0.0)


def lane_agent(aid, lane, s, v, behavior="idm_lane_follow", idm=IdmParams()):
    p, t = lane.position(s), lane.tangent(s)
    return Agent(aid, behavior, SHAPE, lane, float(p[0]), float(p[1]), math.atan2(t[1], t[0]), v, s, idm)


def far_ego():
    return EgoState(0.0, 500.0, 0.0)


def bumper_gap(follower, leader):
    return leader.s - follower.s - follower.front_extent - leader.rear_extent


def test_idm_free_flow_equilibrium():
    p = IdmParams(desired_speed=12.0)
    assert abs(idm_accel(12.0, None, 0.0, p)) <= 1e-6 * p.max_accel
    assert abs(idm_accel(12.0, 1e6, 12.0, p)) <= 1e-6 * p.max_accel


def test_idm_standstill_at_min_gap():
    p = IdmParams()
    assert idm_accel(0.0, p.min_gap, 0.0, p) <= 0.0


def test_idm_params_positive():
    with pytest.raises(ValueError):
        IdmParams(time_headway=0.0)


def test_platoon_equilibrium_gap():
    lane = Route(np.array([[0.0, 0.0], [5000.0, 0.0]]))
    fast = IdmParams(desired_speed=15.0)
    agents = [lane_agent("lead", lane, 100.0, 5.0, idm=IdmParams(desired_speed=5.0)),
              lane_agent("f1", lane, 80.0, 5.0, idm=fast),
              lane_agent("f2", lane, 60.0, 5.0, idm=fast)]
    world = World(0.0, far_ego(), SHAPE, agents)
    for _ in range(1500):
        world = step_world(world, HOLD)
    lead, f1, f2 = world.agents
    v = f2.v
    assert abs(v - 5.0) < 1e-3
    linear = fast.min_gap + v * fast.time_headway
    exact = linear / math.sqrt(1.0 - (v / fast.desired_speed) ** fast.exponent)
    for gap in (bumper_gap(f1, lead), bumper_gap(f2, f1)):
        assert abs(gap - linear) <= 0.02 * linear
        assert abs(gap - exact) <= 1e-3 * exact


def desired_gap(v, v_lead, p):
    return p.min_gap + max(0.0, v * p.time_headway + v * (v - v_lead) / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel)))


@pytest.mark.parametrize("leader", ["stopped", "hard_brake"])
def test_idm_followers_never_rear_end(leader):
    # followers start no closer than their IDM desired gap
    lane = Route(np.array([[0.0, 0.0], [3000.0, 0.0]]))
    rng = np.random.default_rng(3)
    p = IdmParams()
    for _ in range(5):
        v_lead = 0.0 if leader == "stopped" else rng.uniform(8.0, 12.0)
        head = lane_agent("lead", lane, 300.0, v_lead, behavior=leader)
        head.brake_time, head.brake_decel = rng.uniform(0.5, 3.0), rng.uniform(4.0, 8.0)
        agents = [head]
        for i in range(4):
            v = rng.uniform(0.0, 12.0)
            gap = desired_gap(v, agents[-1].v, p) * rng.uniform(1.0, 2.0)
            s = agents[-1].s - agents[-1].rear_extent - gap - head.front_extent
            agents.append(lane_agent(f"f{i}", lane, s, v))
        world = World(0.0, far_ego(), SHAPE, agents)
        for _ in range(600):
            world = step_world(world, HOLD)
            for lead, fol in zip(world.agents, world.agents[1:]):
                assert bumper_gap(fol, lead) > 0.0


def test_ego_counts_as_leader():
    # the agent starts 20 m behind a stopped ego sitting on its lane
    lane = Route(np.array([[-100.0, 0.0], [500.0, 0.0]]))
    world = World(0.0, EgoState(0.0, 0.0, 0.0), SHAPE, [lane_agent("f", lane, 80.0, 10.0)])
    for _ in range(300):
        world = step_world(world, HOLD)
        assert capsule_gaps(world)["f"] > 0.0
    assert world.agents[0].v < 0.1


def ego_world(agent_pose):
    x, y, theta = agent_pose
    a = Agent("a", "stopped", SHAPE, None, x, y, theta, 0.0)
    return World(0.0, EgoState(0.0, 0.0, 0.0), SHAPE, [a])


def test_collision_far_apart():
    assert detect_collision(ego_world((20.0, 0.0, 0.0))) is None


def test_collision_overlap_penetration():
    aid, pen = detect_collision(ego_world((0.0, 1.5, 0.0)))
    assert aid == "a"
    assert pen == pytest.approx(0.5, abs=1e-12)


def test_collision_grazing_is_not_contact():
    w = ego_world((0.0, 2.0 * SHAPE.half_width + 0.01, 0.0))
    assert capsule_gaps(w)["a"] == pytest.approx(0.01, abs=1e-12)
    assert detect_collision(w) is None


def test_composite_examples():
    perfect = ScoreTerms(False, True, 1.0, 1.0, 1.0, 1.0)
    assert composite_score(perfect) == 1.0
    assert composite_score(ScoreTerms(False, True, 0.5, 1.0, 1.0, 1.0)) == pytest.approx(0.84375, abs=1e-12)
    assert composite_score(ScoreTerms(True, True, 1.0, 1.0, 1.0, 1.0)) == 0.0
    assert composite_score(ScoreTerms(False, False, 1.0, 1.0, 1.0, 1.0)) == 0.0
    low = ScoreTerms(False, True, 0.1, 1.0, 1.0, 1.0)
    assert composite_score(low) == pytest.approx(0.5 * (5 + 0.5 + 4 + 2) / 16)


def test_ttc_kernel():
    ego = np.array([0.0, 0.0, 0.0, 10.0])
    shape = SHAPE.as_array()
    # rear-axle references 30 m apart, capsules 30 - 4.6 - 2 = 23.4 m apart
    agents = np.array([[30.0, 0.0, 0.0, 0.0]])
    ttc = ttc_kernel(ego, shape, agents, shape[None, :], 0.1, 10.0)
    assert 2.34 <= ttc <= 2.45
    assert ttc_kernel(ego, shape, np.array([[30.0, 10.0, 0.0, 0.0]]), shape[None, :], 0.1, 10.0) == 10.0


def test_scenario_validation():
    with pytest.raises(ScenarioError):
        Scenario("x", "x", EgoState(0, 0, 0), ((0.0, 0.0), (10.0, 0.0)), duration=0.0)
    with pytest.raises(ScenarioError):
        Scenario("x", "x", EgoState(0, 0, 0), ((0.0, 0.0), (0.0, 0.0)))
    with pytest.raises(ScenarioError):
        AgentSpec("a", "teleport", ((0.0, 0.0), (1.0, 0.0)))


def test_scenario_json_round_trip(tmp_path):
    for family in CORE_FAMILIES:
        sc = builtin(f"{family}-3")
        assert Scenario.from_json(sc.to_json()) == sc
        path = tmp_path / f"{family}.json"
        sc.save(path)
        assert Scenario.load(path) == sc
    bad = builtin("headon").to_dict()
    bad["schema_version"] = 99
    with pytest.raises(ScenarioError):
        Scenario.from_dict(bad)


def test_battery_coverage():
    for family in CORE_FAMILIES:
        scenarios = battery(family, 30)
        assert len(scenarios) == 30
        assert len({s.to_json() for s in scenarios}) == 30
    assert set(BATTERIES["full"]) == set(CORE_FAMILIES)
    with pytest.raises(ScenarioError):
        battery("nope")


def test_empty_road_full_mode():
    res = run_scenario(builtin("empty_road"), PlannerConfig(mode="full"))
    assert not res.collided
    assert res.composite >= 0.9
    assert res.progress >= 0.0


def test_headon_unfiltered_vs_full():
    sc = builtin("headon")
    base = run_scenario(sc, PlannerConfig(mode="unfiltered"), record_trace=False)
    assert base.collided
    assert base.composite == 0.0
    full = run_scenario(sc, PlannerConfig(mode="full"))
    assert not full.collided
    assert full.min_h >= -0.05
    assert 0.0 <= full.composite <= 1.0
    record = full.traces[0]
    for key in ("t", "ego", "control", "agents", "critical", "h", "final_slack_rate", "slack_profile"):
        assert key in record


def test_run_scenario_determinism():
    sc = builtin("crossing-2")
    a = run_scenario(sc, PlannerConfig(mode="full"))
    b = run_scenario(sc, PlannerConfig(mode="full"))
    assert a.summary() == b.summary()
    assert [dumps(r) for r in a.traces] == [dumps(r) for r in b.traces]
