"""World state, neighbor behaviors and the closed-loop step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..diffusion import Route
from ..dynamics import DT, Control, EgoState, VehicleShape, step
from ..geometry import pose_axis, segment_closest

BEHAVIORS = ("idm_lane_follow", "constant_velocity", "stopped", "hard_brake")
LANE_HALF_WIDTH = 1.75
LEAD_HORIZON = 100.0
# physical braking floor applied to the IDM output
IDM_MAX_BRAKE = 9.0


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 10.0
    time_headway: float = 1.5
    min_gap: float = 2.0
    max_accel: float = 1.5
    comfortable_decel: float = 2.0
    exponent: float = 4.0

    def __post_init__(self):
        if min(self.desired_speed, self.time_headway, self.min_gap, self.max_accel,
               self.comfortable_decel, self.exponent) <= 0:
            raise ValueError("IDM parameters must be positive")


def idm_accel(v: float, gap: float | None, v_lead: float, p: IdmParams) -> float:
    """Standard IDM acceleration; ``gap=None`` means free road."""
    free = 1.0 - (v / p.desired_speed) ** p.exponent
    if gap is None:
        return p.max_accel * free
    dv = v - v_lead
    s_star = p.min_gap + max(0.0, v * p.time_headway + v * dv / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel)))
    gap = max(gap, 0.1)
    return p.max_accel * (free - (s_star / gap) ** 2)


@dataclass
class Agent:
    id: str
    behavior: str
    shape: VehicleShape
    lane: Route | None
    x: float
    y: float
    theta: float
    v: float
    s: float = 0.0
    idm: IdmParams = field(default_factory=IdmParams)
    brake_time: float = math.inf
    brake_decel: float = 0.0

    @property
    def rear_extent(self) -> float:
        """Distance from the reference point back to the capsule's rear edge."""
        return 0.5 * (self.shape.axis_length - self.shape.wheelbase) + self.shape.half_width

    @property
    def front_extent(self) -> float:
        return self.shape.axis_length - 0.5 * (self.shape.axis_length - self.shape.wheelbase) + self.shape.half_width

    def axis(self):
        return pose_axis(self.x, self.y, self.theta, self.shape.axis_length, self.shape.wheelbase)

    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v])


@dataclass
class World:
    time: float
    ego: EgoState
    ego_shape: VehicleShape
    agents: list

    def copy(self) -> "World":
        return World(self.time, self.ego, self.ego_shape, [replace(a) for a in self.agents])


def _capsule_gap(ax, bx, hw_a, hw_b) -> float:
    _, _, d, _ = segment_closest(*ax, *bx)
    return d - hw_a - hw_b


def _ego_on_lane(world: World, agent: Agent):
    """(arc position, speed along lane) of the ego if it occupies the lane ahead."""
    lane = agent.lane
    ax = pose_axis(world.ego.x, world.ego.y, world.ego.theta, world.ego_shape.axis_length,
                   world.ego_shape.wheelbase)
    best = None
    for px, py in ((ax[0], ax[1]), (0.5 * (ax[0] + ax[2]), 0.5 * (ax[1] + ax[3])), (ax[2], ax[3])):
        s, lat = lane.project((px, py))
        if abs(lat) <= LANE_HALF_WIDTH + world.ego_shape.half_width and s > agent.s:
            if best is None or s < best:
                best = s
    if best is None:
        return None
    tan = lane.tangent(best)
    v_along = world.ego.v * (math.cos(world.ego.theta) * tan[0] + math.sin(world.ego.theta) * tan[1])
    return best, v_along


def leader_gap(world: World, agent: Agent):
    """(bumper gap, leader speed) of the nearest leader on the agent's lane, or None."""
    best = None
    for other in world.agents:
        if other is agent or other.lane is not agent.lane:
            continue
        ds = other.s - agent.s
        if 0.0 < ds <= LEAD_HORIZON:
            gap = ds - agent.front_extent - other.rear_extent
            if best is None or gap < best[0]:
                best = (gap, other.v)
    ego = _ego_on_lane(world, agent)
    if ego is not None:
        s_e, v_e = ego
        ds = s_e - agent.s
        if ds <= LEAD_HORIZON:
            gap = ds - agent.front_extent - world.ego_shape.half_width
            if best is None or gap < best[0]:
                best = (gap, v_e)
    return best


def _place_on_lane(agent: Agent) -> None:
    p = agent.lane.position(agent.s)
    t = agent.lane.tangent(agent.s)
    agent.x, agent.y = float(p[0]), float(p[1])
    agent.theta = math.atan2(t[1], t[0])


def step_world(world: World, ego_control: Control, dt: float = DT) -> World:
    """Advance ego and agents by one step (agents see the pre-step world)."""
    new = world.copy()
    new.time = world.time + dt
    new.ego = step(world.ego, ego_control, dt, world.ego_shape.wheelbase)
    for old, a in zip(world.agents, new.agents):
        if a.behavior == "stopped":
            a.v = 0.0
        elif a.behavior == "constant_velocity":
            a.x += a.v * math.cos(a.theta) * dt
            a.y += a.v * math.sin(a.theta) * dt
        elif a.behavior == "hard_brake":
            a.s += a.v * dt
            if world.time >= a.brake_time:
                a.v = max(0.0, a.v - a.brake_decel * dt)
            _place_on_lane(a)
        else:
            lead = leader_gap(world, old)
            acc = idm_accel(old.v, None if lead is None else lead[0], 0.0 if lead is None else lead[1], a.idm)
            acc = max(acc, -IDM_MAX_BRAKE)
            a.s += old.v * dt
            a.v = max(0.0, old.v + acc * dt)
            _place_on_lane(a)
    return new


def ego_axis(world: World):
    return pose_axis(world.ego.x, world.ego.y, world.ego.theta, world.ego_shape.axis_length,
                     world.ego_shape.wheelbase)


def capsule_gaps(world: World) -> dict:
    """Physical capsule distance from the ego to every agent."""
    ex = ego_axis(world)
    return {a.id: _capsule_gap(ex, a.axis(), world.ego_shape.half_width, a.shape.half_width)
            for a in world.agents}


def detect_collision(world: World):
    """First agent whose capsule overlaps the ego's, as (id, penetration)."""
    ex = ego_axis(world)
    for a in world.agents:
        d = _capsule_gap(ex, a.axis(), world.ego_shape.half_width, a.shape.half_width)
        if d < 0.0:
            return a.id, -d
    return None


def predict_constant_velocity(agent: Agent, K: int, dt: float = DT) -> np.ndarray:
    """K x 4 straight-line extrapolation of the agent's current pose."""
    k = np.arange(K) * dt * agent.v
    c, s = math.cos(agent.theta), math.sin(agent.theta)
    return np.column_stack([agent.x + c * k, agent.y + s * k, np.full(K, c), np.full(K, s)])
