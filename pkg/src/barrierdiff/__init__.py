"""Capsule-barrier safety filtering inside diffusion trajectory denoising."""

from .diffusion import DenoiseSchedule, SceneContext, ddpm_sample, synthetic_denoiser
from .dynamics import Control, DynamicsParams, EgoState, Trajectory, VehicleShape, rollout, step, track
from .geometry import Capsule, Segment, capsule_distance, distance_gradient, segment_distance
from .planner import MODES, PlannerConfig, PlanRecord, plan, replan_cycle
from .safety import BarrierParams, FilterResult, Neighbors, arc_reparam, pc_cbf, safe_speed

__version__ = "0.1.0"

__all__ = [
    "BarrierParams", "Capsule", "Control", "DenoiseSchedule", "DynamicsParams", "EgoState", "FilterResult",
    "MODES", "Neighbors", "PlanRecord", "PlannerConfig", "SceneContext", "Segment", "Trajectory",
    "VehicleShape", "arc_reparam", "capsule_distance", "ddpm_sample", "distance_gradient", "pc_cbf", "plan",
    "replan_cycle", "rollout", "safe_speed", "segment_distance", "step", "synthetic_denoiser", "track",
]
