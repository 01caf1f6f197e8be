"""Closed-loop micro-simulator."""

from .metrics import ScoreTerms, composite_score, ttc_kernel
from .runner import SimResult, cycle_seed, run_battery, run_scenario
from .scenarios import (BATTERIES, GENERATORS, AgentSpec, Scenario, ScenarioError, battery, builtin)
from .world import (Agent, IdmParams, World, capsule_gaps, detect_collision, idm_accel, leader_gap,
                    predict_constant_velocity, step_world)

__all__ = [
    "Agent", "AgentSpec", "BATTERIES", "GENERATORS", "IdmParams", "Scenario", "ScenarioError", "ScoreTerms",
    "SimResult", "World", "battery", "builtin", "capsule_gaps", "composite_score", "cycle_seed",
    "detect_collision", "idm_accel", "leader_gap", "predict_constant_velocity", "run_battery", "run_scenario",
    "step_world", "ttc_kernel",
]
