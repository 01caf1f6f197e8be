"""Scenario definitions, JSON (de)serialization and seeded battery generators."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..diffusion import DegenerateRoute, Route, SceneContext, nominal_plan
from ..dynamics import DT, EgoState, VehicleShape
from .world import BEHAVIORS, Agent, IdmParams, World

SCHEMA_VERSION = 1
LANE_WIDTH = 3.5
N_VARIANTS = 30


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    """Neighbor start state: arc position ``s0`` and speed ``v0`` on ``lane``."""

    id: str
    behavior: str
    lane: tuple
    s0: float = 0.0
    v0: float = 0.0
    shape: VehicleShape = field(default_factory=VehicleShape)
    idm: IdmParams = field(default_factory=IdmParams)
    brake_time: float = math.inf
    brake_decel: float = 0.0

    def __post_init__(self):
        if self.behavior not in BEHAVIORS:
            raise ScenarioError(f"agent {self.id!r}: unknown behavior {self.behavior!r}")
        if len(self.lane) < 2:
            raise ScenarioError(f"agent {self.id!r}: lane needs at least two points")
        if self.v0 < 0:
            raise ScenarioError(f"agent {self.id!r}: negative speed")


@dataclass(frozen=True)
class Scenario:
    name: str
    family: str
    ego_start: EgoState
    route: tuple
    agents: tuple = ()
    duration: float = 15.0
    seed: int = 0
    cruise_speed: float = 10.0
    speed_limit: float = 15.0
    corridor_half_width: float = 2.5
    dt: float = DT

    def __post_init__(self):
        if not self.duration > 0:
            raise ScenarioError("duration must be positive")
        try:
            length = Route(np.asarray(self.route, dtype=float)).length
        except DegenerateRoute as exc:
            raise ScenarioError(f"invalid route: {exc}") from exc
        if length <= 0:
            raise ScenarioError("route length must be positive")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate agent ids")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def initial_world(self) -> World:
        lanes: dict = {}
        agents = []
        for spec in self.agents:
            key = tuple(map(tuple, spec.lane))
            lane = lanes.setdefault(key, Route(np.asarray(spec.lane, dtype=float)))
            p, t = lane.position(spec.s0), lane.tangent(spec.s0)
            agents.append(Agent(spec.id, spec.behavior, spec.shape, lane, float(p[0]), float(p[1]),
                                math.atan2(t[1], t[0]), 0.0 if spec.behavior == "stopped" else spec.v0,
                                spec.s0, spec.idm, spec.brake_time, spec.brake_decel))
        return World(0.0, self.ego_start, VehicleShape(), agents)

    # serialization

    def to_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION, "name": self.name, "family": self.family,
             "seed": self.seed, "duration": self.duration, "dt": self.dt,
             "cruise_speed": self.cruise_speed, "speed_limit": self.speed_limit,
             "corridor_half_width": self.corridor_half_width,
             "ego_start": asdict(self.ego_start), "route": [list(p) for p in self.route], "agents": []}
        for a in self.agents:
            ad = {"id": a.id, "behavior": a.behavior, "lane": [list(p) for p in a.lane],
                  "s0": a.s0, "v0": a.v0, "shape": asdict(a.shape), "idm": asdict(a.idm)}
            if math.isfinite(a.brake_time):
                ad["brake_time"] = a.brake_time
                ad["brake_decel"] = a.brake_decel
            d["agents"].append(ad)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        try:
            agents = tuple(
                AgentSpec(str(a["id"]), a["behavior"], _points(a["lane"]), float(a.get("s0", 0.0)),
                          float(a.get("v0", 0.0)), VehicleShape(**a.get("shape", {})),
                          IdmParams(**a.get("idm", {})), float(a.get("brake_time", math.inf)),
                          float(a.get("brake_decel", 0.0)))
                for a in d.get("agents", []))
            return cls(name=d["name"], family=d.get("family", "custom"), ego_start=EgoState(**d["ego_start"]),
                       route=_points(d["route"]), agents=agents, duration=float(d.get("duration", 15.0)),
                       seed=int(d.get("seed", 0)), cruise_speed=float(d.get("cruise_speed", 10.0)),
                       speed_limit=float(d.get("speed_limit", 15.0)),
                       corridor_half_width=float(d.get("corridor_half_width", 2.5)),
                       dt=float(d.get("dt", DT)))
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
        return cls.from_json(text)


def _points(seq) -> tuple:
    return tuple((float(p[0]), float(p[1])) for p in seq)


def _line(x0, y0, x1, y1, n=2) -> tuple:
    return _points(np.column_stack([np.linspace(x0, x1, n), np.linspace(y0, y1, n)]))


def _arrival_time(ego: EgoState, route, cruise: float, predicate, horizon: int = 200) -> float:
    """Time at which the ego's nominal plan first satisfies ``predicate(x, y)``."""
    ctx = SceneContext(ego, np.asarray(route), cruise_speed=cruise, horizon=horizon)
    wp = nominal_plan(ctx)
    for k in range(len(wp)):
        if predicate(wp[k, 0], wp[k, 1]):
            return k * ctx.dt
    return horizon * ctx.dt


# Agent reference points sit on the rear axle; the body center is this far ahead.
_CENTER = 0.5 * VehicleShape().wheelbase


def empty_road(seed: int) -> Scenario:
    rng = np.random.default_rng([0, seed])
    v0 = float(rng.uniform(6.0, 10.0))
    cruise = float(rng.uniform(8.0, 12.0))
    bend = float(rng.uniform(-0.004, 0.004))
    xs = np.linspace(0.0, 400.0, 81)
    route = _points(np.column_stack([xs, bend * 0.5 * np.maximum(xs - 60.0, 0.0) ** 2 / 10.0]))
    return Scenario(f"empty_road-{seed:03d}", "empty_road", EgoState(0.0, 0.0, 0.0, 0.0, v0), route,
                    seed=seed, cruise_speed=cruise)


def _oncoming(rng, x_start: float, y: float, speed: float, aid: str = "oncoming") -> AgentSpec:
    lane = _line(400.0, y, -200.0, y)
    return AgentSpec(aid, "idm_lane_follow", lane, s0=400.0 - x_start, v0=speed,
                     idm=IdmParams(desired_speed=speed))


def headon(seed: int) -> Scenario:
    """Stopped vehicle blocking the ego lane; optional oncoming traffic one lane over."""
    rng = np.random.default_rng([1, seed])
    v0 = float(rng.uniform(7.0, 10.0))
    x_obs = float(rng.uniform(28.0, 45.0))
    y_obs = float(rng.uniform(-0.3, 0.3))
    yaw = float(rng.uniform(-0.15, 0.15)) + (math.pi if rng.random() < 0.5 else 0.0)
    c, s = math.cos(yaw), math.sin(yaw)
    # place the obstacle's body center at (x_obs, y_obs)
    rx, ry = x_obs - _CENTER * c, y_obs - _CENTER * s
    agents = [AgentSpec("obstacle", "stopped", _points([(rx, ry), (rx + c, ry + s)]))]
    if rng.random() < 0.5:
        agents.append(_oncoming(rng, float(rng.uniform(60.0, 120.0)), LANE_WIDTH + float(rng.uniform(0.0, 0.3)),
                                float(rng.uniform(7.0, 10.0))))
    route = _line(0.0, 0.0, 300.0, 0.0)
    return Scenario(f"headon-{seed:03d}", "headon", EgoState(0.0, 0.0, 0.0, 0.0, v0), route,
                    tuple(agents), seed=seed, cruise_speed=v0)


def crossing(seed: int, lag: float | None = None) -> Scenario:
    """Perpendicular IDM traffic that enters the conflict area just ahead of the ego.

    ``lag`` is the time (s) by which the crosser's body center passes the ego's
    lane center after the ego's nominal plan would reach the crossing line;
    negative means the crosser goes first.
    """
    rng = np.random.default_rng([2, seed])
    v0 = float(rng.uniform(7.0, 10.0))
    X = float(rng.uniform(35.0, 50.0))
    u = float(rng.uniform(6.0, 10.0))
    side = 1.0 if rng.random() < 0.5 else -1.0
    route = _line(0.0, 0.0, 300.0, 0.0)
    ego = EgoState(0.0, 0.0, 0.0, 0.0, v0)
    t_arr = _arrival_time(ego, route, v0, lambda x, y: x + _CENTER >= X)
    lag_draw = float(rng.uniform(-0.82, -0.55))
    lag = lag_draw if lag is None else lag
    # body center reaches y = 0 at t_arr + lag; lane runs toward -side*y ... +side*y
    y_start = -side * 150.0
    lane = _line(X, y_start, X, -y_start)
    s_center = 150.0 - u * (t_arr + lag)
    agents = [AgentSpec("crosser", "idm_lane_follow", lane, s0=s_center - _CENTER, v0=u,
                        idm=IdmParams(desired_speed=u))]
    return Scenario(f"crossing-{seed:03d}", "crossing", ego, route, tuple(agents), seed=seed, cruise_speed=v0)


def crossing_late(seed: int) -> Scenario:
    """Crossing variant where the crosser arrives second and drives into the ego's path."""
    rng = np.random.default_rng([6, seed])
    sc = crossing(seed, float(rng.uniform(-0.4, 0.3)))
    return replace(sc, name=f"crossing_late-{seed:03d}", family="crossing_late")


def left_turn(seed: int, lag: float | None = None) -> Scenario:
    """Unprotected left turn across an oncoming lane."""
    rng = np.random.default_rng([3, seed])
    v0 = float(rng.uniform(6.0, 9.0))
    X0 = float(rng.uniform(25.0, 35.0))
    R = float(rng.uniform(9.0, 12.0))
    ang = np.linspace(-math.pi / 2, 0.0, 16)
    arc = np.column_stack([X0 + R * np.cos(ang), R + R * np.sin(ang)])
    pts = np.vstack([[0.0, 0.0], arc, [X0 + R, R + 150.0]])
    route = _points(pts)
    ego = EgoState(0.0, 0.0, 0.0, 0.0, v0)
    y_conf = LANE_WIDTH
    t_arr = _arrival_time(ego, route, v0, lambda x, y: y >= y_conf - 1.0)
    wp = nominal_plan(SceneContext(ego, np.asarray(route), cruise_speed=v0, horizon=200))
    k = min(int(round(t_arr / DT)), len(wp) - 1)
    x_conf = float(wp[k, 0])
    u = float(rng.uniform(7.0, 10.0))
    lag_draw = float(rng.uniform(-1.4, 0.6))
    lag = lag_draw if lag is None else lag
    x_center = x_conf + u * (t_arr + lag)
    agents = [_oncoming(rng, x_center + _CENTER, LANE_WIDTH, u)]
    if rng.random() < 0.5:
        gap = float(rng.uniform(25.0, 40.0))
        agents.append(_oncoming(rng, x_center + _CENTER + gap, LANE_WIDTH, u, "oncoming2"))
    return Scenario(f"left_turn-{seed:03d}", "left_turn", ego, route, tuple(agents), seed=seed,
                    cruise_speed=v0)


def merging(seed: int) -> Scenario:
    """Slower vehicle merging from an on-ramp into the ego lane just ahead."""
    rng = np.random.default_rng([4, seed])
    v0 = float(rng.uniform(8.0, 11.0))
    u = v0 - float(rng.uniform(2.0, 4.0))
    lead = float(rng.uniform(14.0, 20.0))
    x_merge = float(rng.uniform(20.0, 35.0))
    taper = 30.0
    xs = np.linspace(-50.0, x_merge + taper, 40)
    ys = np.where(xs < x_merge, -LANE_WIDTH,
                  -LANE_WIDTH * 0.5 * (1.0 + np.cos(np.pi * np.clip((xs - x_merge) / taper, 0.0, 1.0))))
    ramp = np.vstack([np.column_stack([xs, ys]), [[400.0, 0.0]]])
    route = _line(0.0, 0.0, 400.0, 0.0)
    r = Route(ramp)
    s0 = float(r.project((lead, -LANE_WIDTH))[0])
    agents = [AgentSpec("merger", "idm_lane_follow", _points(ramp), s0=s0, v0=u, idm=IdmParams(desired_speed=u))]
    return Scenario(f"merging-{seed:03d}", "merging", EgoState(0.0, 0.0, 0.0, 0.0, v0), route, tuple(agents),
                    seed=seed, cruise_speed=v0)


def lead_brake(seed: int) -> Scenario:
    """Lead vehicle in the ego lane brakes hard to a stop."""
    rng = np.random.default_rng([5, seed])
    v0 = float(rng.uniform(7.0, 10.0))
    gap = float(rng.uniform(15.0, 25.0))
    lane = _line(-50.0, 0.0, 400.0, 0.0)
    agents = [AgentSpec("lead", "hard_brake", lane, s0=50.0 + gap, v0=v0, idm=IdmParams(desired_speed=v0),
                        brake_time=float(rng.uniform(1.5, 4.0)), brake_decel=float(rng.uniform(4.0, 7.0)))]
    return Scenario(f"lead_brake-{seed:03d}", "lead_brake", EgoState(0.0, 0.0, 0.0, 0.0, v0),
                    _line(0.0, 0.0, 400.0, 0.0), tuple(agents), seed=seed, cruise_speed=v0)


GENERATORS = {
    "empty_road": empty_road,
    "headon": headon,
    "crossing": crossing,
    "left_turn": left_turn,
    "merging": merging,
    "lead_brake": lead_brake,
    "crossing_late": crossing_late,
}

CORE_FAMILIES = ("empty_road", "headon", "crossing", "left_turn", "merging", "lead_brake")

BATTERIES = {
    **{name: (name,) for name in GENERATORS},
    "benign": ("empty_road",),
    "conflict": ("headon", "crossing"),
    "full": CORE_FAMILIES,
}


def battery(name: str, seeds: int = N_VARIANTS) -> list:
    """Scenario variants of a named battery, ordered by family then seed."""
    if name not in BATTERIES:
        raise ScenarioError(f"unknown battery {name!r}; known: {sorted(BATTERIES)}")
    if seeds < 1:
        raise ScenarioError("seeds must be at least 1")
    return [GENERATORS[fam](i) for fam in BATTERIES[name] for i in range(seeds)]


def builtin(name: str) -> Scenario:
    """Resolve ``family`` or ``family-<seed>`` to a generated scenario."""
    fam, _, idx = name.partition("-")
    if fam not in GENERATORS:
        raise ScenarioError(f"unknown builtin scenario {name!r}")
    try:
        return GENERATORS[fam](int(idx) if idx else 0)
    except ValueError as exc:
        raise ScenarioError(f"bad seed in {name!r}") from exc
