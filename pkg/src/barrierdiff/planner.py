"""Safety-filtered denoising planner.

At every reverse-diffusion step the clean estimate is checked against the
neighbor predictions, agents predicted to come within ``eta`` of the ego
join a critical set (which never shrinks during one planning call), the
estimate is replaced by its safety-filtered rollout and re-noised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ._accel import jit
from .diffusion import DenoiseSchedule, Denoiser, SceneContext, ddpm_sample, synthetic_denoiser
from .dynamics import Control, DynamicsParams, Trajectory
from .geometry import pose_axis, segment_closest
from .safety import BarrierParams, FilterResult, Neighbors, arc_reparam, pc_cbf

MODES = ("full", "post_hoc_only", "no_selective_filter", "arc_reparam", "unfiltered")


@jit
def min_barrier_kernel(plan, nb_tracks, nb_shapes, ego_axis, ego_hw, wheelbase, d_safe):
    """Per-neighbor minimum over the horizon of the capsule barrier."""
    K = plan.shape[0]
    N = nb_tracks.shape[0]
    out = np.full(N, np.inf)
    for k in range(K):
        th = math.atan2(plan[k, 3], plan[k, 2])
        ex, ey, fx, fy = pose_axis(plan[k, 0], plan[k, 1], th, ego_axis, wheelbase)
        for j in range(N):
            px, py, qx, qy = pose_axis(nb_tracks[j, k, 0], nb_tracks[j, k, 1],
                                       math.atan2(nb_tracks[j, k, 3], nb_tracks[j, k, 2]),
                                       nb_shapes[j, 0], nb_shapes[j, 2])
            _, _, d, _ = segment_closest(ex, ey, fx, fy, px, py, qx, qy)
            h = d - ego_hw - nb_shapes[j, 1] - d_safe
            if h < out[j]:
                out[j] = h
    return out


@dataclass
class CriticalSet:
    eta: float = 1.0
    ids: set = field(default_factory=set)

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")

    def update(self, new) -> None:
        self.ids |= set(new)

    def snapshot(self) -> frozenset:
        return frozenset(self.ids)


@dataclass(frozen=True)
class PlannerConfig:
    mode: str = "full"
    eta: float = 1.0
    barrier: BarrierParams = field(default_factory=BarrierParams)
    schedule: DenoiseSchedule = field(default_factory=DenoiseSchedule.cosine)
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    perturbation: float = 0.2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown planner mode {self.mode!r}; expected one of {MODES}")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")


@dataclass
class PlanRecord:
    final: Trajectory
    controls: list
    per_step_slack_rate: np.ndarray
    """T rates in denoising order (first entry is step t = T)."""
    critical_history: list
    result: FilterResult
    infeasible_start: bool = False

    @property
    def critical(self) -> frozenset:
        return self.critical_history[-1] if self.critical_history else frozenset()

    @property
    def final_slack_rate(self) -> float:
        return float(self.per_step_slack_rate[-1])


def proximity_filter(plan_estimate, neighbors: Neighbors, ego_shape, params: BarrierParams,
                     eta: float) -> set:
    """Ids whose minimum predicted barrier over the horizon is at most eta."""
    if len(neighbors) == 0:
        return set()
    wp = plan_estimate.waypoints if isinstance(plan_estimate, Trajectory) else np.asarray(plan_estimate)
    K = min(wp.shape[0], neighbors.tracks.shape[1])
    hmin = min_barrier_kernel(wp[:K], neighbors.tracks[:, :K], neighbors.shapes, ego_shape.axis_length,
                              ego_shape.half_width, ego_shape.wheelbase, params.d_safe)
    return {i for i, h in zip(neighbors.ids, hmin) if h <= eta}


def neighbors_from_context(context: SceneContext) -> Neighbors:
    shapes = getattr(context, "neighbor_shapes", None) or {}
    from .dynamics import VehicleShape
    if not context.neighbor_tracks:
        return Neighbors.empty(context.horizon)
    return Neighbors.from_mapping(context.neighbor_tracks,
                                  {i: shapes.get(i, VehicleShape()) for i in context.neighbor_tracks})


def plan(context: SceneContext, denoiser: Denoiser, config: PlannerConfig = PlannerConfig()) -> PlanRecord:
    mode = config.mode
    dyn = config.dynamics
    shape = dyn.shape
    nbrs = neighbors_from_context(context)
    crit = CriticalSet(config.eta)
    rates: list[float] = []
    history: list[frozenset] = []
    last: list[FilterResult] = []
    filt = arc_reparam if mode == "arc_reparam" else pc_cbf

    def correct(estimate: np.ndarray, t: int):
        if mode == "no_selective_filter":
            crit.update(nbrs.ids)
        else:
            crit.update(proximity_filter(estimate, nbrs, shape, config.barrier, crit.eta))
        history.append(crit.snapshot())
        if not crit.ids:
            rates.append(0.0)
            last.clear()
            return None
        res = filt(Trajectory(estimate, context.dt), context.ego0, nbrs, config.barrier, dyn, crit.ids)
        rates.append(res.slack_rate())
        last[:] = [res]
        return res.corrected.waypoints

    iterative = mode in ("full", "no_selective_filter", "arc_reparam")
    tau0 = ddpm_sample(denoiser, context, config.schedule, correct if iterative else None)
    traj0 = Trajectory(tau0, context.dt)

    if iterative:
        result = last[0] if last else filt(traj0, context.ego0, nbrs, config.barrier, dyn, frozenset())
    else:
        T = config.schedule.T
        rates = [0.0] * T
        history = [frozenset()] * T
        if mode == "post_hoc_only":
            crit.update(proximity_filter(traj0, nbrs, shape, config.barrier, crit.eta))
            history[-1] = crit.snapshot()
        result = pc_cbf(traj0, context.ego0, nbrs, config.barrier, dyn, crit.ids)
        rates[-1] = result.slack_rate() if crit.ids else 0.0

    h0 = result.h_log[0]
    infeasible = bool(np.any(h0[np.isfinite(h0)] < 0.0))
    return PlanRecord(result.corrected, result.controls, np.asarray(rates, dtype=float), history,
                      result, infeasible)


DenoiserFactory = Callable[[SceneContext, PlannerConfig], Denoiser]


def default_denoiser(context: SceneContext, config: PlannerConfig) -> Denoiser:
    return synthetic_denoiser(context, config.schedule, config.perturbation)


def replan_cycle(context: SceneContext, config: PlannerConfig = PlannerConfig(),
                 make_denoiser: DenoiserFactory = default_denoiser) -> tuple[Control, PlanRecord]:
    """Plan from scratch (fresh critical set) and return the first control."""
    record = plan(context, make_denoiser(context, config), config)
    return record.controls[0], record
