"""Closed-loop scenario runs and the parallel battery runner."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..diffusion import Route, SceneContext
from ..planner import DenoiserFactory, PlannerConfig, default_denoiser, replan_cycle
from .metrics import (TTC_CAP, TTC_THRESHOLD, ScoreTerms, comfort_fraction, comfort_series,
                      composite_score, ttc_kernel)
from .scenarios import Scenario
from .world import capsule_gaps, detect_collision, predict_constant_velocity, step_world


def cycle_seed(scenario_seed: int, cycle: int) -> int:
    """Independent sampler seed for one replanning cycle."""
    return int(np.random.SeedSequence([scenario_seed, cycle]).generate_state(1)[0])


@dataclass
class SimResult:
    scenario: str
    family: str
    mode: str
    seed: int
    collided: bool
    collision: tuple | None
    """(agent id, penetration m, time s) of the first contact."""
    min_h: float
    """Minimum over the run of the barrier value to any agent."""
    min_h_critical: float
    """Minimum barrier value to agents that were critical in that cycle."""
    composite: float
    terms: ScoreTerms
    progress: float
    comfort_peaks: tuple
    """(max |a|, max |jerk|) of the executed motion."""
    final_slack_rates: np.ndarray
    slack_profiles: np.ndarray
    """cycles x T per-denoising-step slack activation rates."""
    critical_history: list
    infeasible_cycles: int
    traces: list = field(default_factory=list)

    @property
    def zero_final_slack(self) -> bool:
        return bool(np.all(self.final_slack_rates == 0.0))

    @property
    def mean_final_slack(self) -> float:
        return float(np.mean(self.final_slack_rates)) if len(self.final_slack_rates) else 0.0

    def summary(self) -> dict:
        return {
            "scenario": self.scenario, "family": self.family, "mode": self.mode, "seed": self.seed,
            "collided": self.collided,
            "collision": None if self.collision is None else list(self.collision),
            "min_h": _finite(self.min_h), "min_h_critical": _finite(self.min_h_critical),
            "composite": self.composite, "terms": self.terms.as_dict(), "progress": self.progress,
            "comfort_peaks": list(self.comfort_peaks), "cycles": len(self.final_slack_rates),
            "mean_final_slack_rate": self.mean_final_slack, "zero_final_slack": self.zero_final_slack,
            "infeasible_cycles": self.infeasible_cycles,
        }


def _finite(x: float):
    return float(x) if math.isfinite(x) else None


def _ego_row(ego):
    return [ego.x, ego.y, ego.theta, ego.delta, ego.v]


def run_scenario(scenario: Scenario, config: PlannerConfig = PlannerConfig(), *, record_trace: bool = True,
                 make_denoiser: DenoiserFactory = default_denoiser, on_plan=None) -> SimResult:
    """Replan at every step, apply the first control, advance the world.

    ``on_plan(context, record)`` is called after every replanning cycle.
    """
    dt = scenario.dt
    world = scenario.initial_world()
    route = np.asarray(scenario.route, dtype=float)
    route_obj = Route(route)
    s_start, _ = route_obj.project((world.ego.x, world.ego.y))
    d_safe = config.barrier.d_safe
    shape = world.ego_shape
    ego_shape_arr = shape.as_array()
    agent_shapes = {a.id: a.shape for a in world.agents}
    shapes_arr = np.array([a.shape.as_array() for a in world.agents]).reshape(-1, 3)
    K = 80

    speeds = [world.ego.v]
    ttc_ok, speed_ok, in_corridor = [], [], True
    min_h = math.inf
    min_h_crit = math.inf
    final_rates, profiles, crit_hist, traces = [], [], [], []
    infeasible = 0
    collision = None

    for i in range(scenario.n_steps):
        gaps = capsule_gaps(world)
        h_now = {k: g - d_safe for k, g in gaps.items()}
        if h_now:
            min_h = min(min_h, min(h_now.values()))
        poses = np.array([a.pose() for a in world.agents]).reshape(-1, 4)
        ego_pose = np.array([world.ego.x, world.ego.y, world.ego.theta, world.ego.v])
        ttc = ttc_kernel(ego_pose, ego_shape_arr, poses, shapes_arr, dt, TTC_CAP)
        ttc_ok.append(ttc >= TTC_THRESHOLD)
        speed_ok.append(world.ego.v <= scenario.speed_limit + 1e-9)
        _, lat = route_obj.project((world.ego.x, world.ego.y))
        in_corridor &= abs(lat) <= scenario.corridor_half_width

        ctx = SceneContext(world.ego, route,
                           {a.id: predict_constant_velocity(a, K, dt) for a in world.agents}, agent_shapes,
                           rng_seed=cycle_seed(scenario.seed, i), cruise_speed=scenario.cruise_speed,
                           horizon=K, dt=dt)
        control, rec = replan_cycle(ctx, config, make_denoiser)
        if on_plan is not None:
            on_plan(ctx, rec)
        crit = sorted(rec.critical)
        crit_hist.append(crit)
        final_rates.append(rec.final_slack_rate)
        profiles.append(rec.per_step_slack_rate)
        infeasible += rec.infeasible_start

        prev = world
        world = step_world(world, control, dt)
        speeds.append(world.ego.v)
        gaps_next = capsule_gaps(world)
        for a in crit:
            min_h_crit = min(min_h_crit, h_now[a], gaps_next[a] - d_safe)
        if record_trace:
            traces.append({
                "t": round(prev.time, 10), "ego": _ego_row(prev.ego), "control": [control.accel, control.delta_cmd],
                "agents": {a.id: a.pose().tolist() for a in prev.agents},
                "critical": crit, "h": {a: h_now[a] for a in crit},
                "final_slack_rate": rec.final_slack_rate, "slack_profile": rec.per_step_slack_rate.tolist(),
                "saturated_steps": int(np.sum(rec.result.saturated)), "ttc": ttc,
            })
        hit = detect_collision(world)
        if hit is not None:
            collision = (hit[0], float(hit[1]), round(world.time, 10))
            break

    gaps = capsule_gaps(world)
    if gaps:
        min_h = min(min_h, min(gaps.values()) - d_safe)
    s_end, lat = route_obj.project((world.ego.x, world.ego.y))
    in_corridor &= abs(lat) <= scenario.corridor_half_width
    progress = max(0.0, s_end - s_start)
    target = max(1e-9, min(route_obj.length - s_start, scenario.cruise_speed * scenario.duration))
    acc, jerk = comfort_series(np.asarray(speeds), dt)
    terms = ScoreTerms(collided=collision is not None, in_corridor=bool(in_corridor),
                       progress_ratio=min(1.0, progress / target), ttc=float(np.mean(ttc_ok)),
                       speed=float(np.mean(speed_ok)), comfort=comfort_fraction(acc, jerk))
    peaks = (float(np.max(np.abs(acc), initial=0.0)), float(np.max(np.abs(jerk), initial=0.0)))
    return SimResult(scenario.name, scenario.family, config.mode, scenario.seed, collision is not None, collision,
                     min_h, min_h_crit, composite_score(terms), terms, progress, peaks,
                     np.asarray(final_rates), np.asarray(profiles).reshape(len(profiles), -1), crit_hist,
                     infeasible, traces)


def _run_job(job):
    scenario, config = job
    return run_scenario(scenario, config, record_trace=False)


def run_battery(scenarios, configs, workers: int = 1) -> list:
    """Run every (config, scenario) pair; results ordered config-major, then by scenario."""
    jobs = [(s, c) for c in configs for s in scenarios]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs, chunksize=1))
