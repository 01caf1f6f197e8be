import json
import os
import subprocess
import sys

import numpy as np

from barrierdiff.dynamics import VehicleShape, rollout_kernel
from barrierdiff.geometry import pose_distance_grad, segment_closest
from barrierdiff.safety import safe_speed_kernel
from barrierdiff.sim.metrics import ttc_kernel

SHAPE = VehicleShape().as_array()


def test_segment_closest_parity():
    rng = np.random.default_rng(0)
    for _ in range(300):
        args = tuple(rng.uniform(-5, 5, 8))
        np.testing.assert_allclose(segment_closest(*args), segment_closest.py_func(*args), rtol=0, atol=1e-12)


def test_pose_distance_grad_parity():
    rng = np.random.default_rng(1)
    for _ in range(200):
        pose = (*rng.uniform(-5, 5, 2), rng.uniform(-3, 3), 4.6, 2.9)
        seg = tuple(rng.uniform(-8, 8, 4))
        np.testing.assert_allclose(pose_distance_grad(*pose, *seg), pose_distance_grad.py_func(*pose, *seg),
                                   rtol=0, atol=1e-10)


def test_rollout_parity():
    rng = np.random.default_rng(2)
    controls = np.column_stack([rng.uniform(-3, 2, 79), rng.uniform(-0.4, 0.4, 79)])
    state0 = np.array([0.0, 0.0, 0.1, 0.0, 8.0])
    np.testing.assert_allclose(rollout_kernel(state0, controls, 0.1, 2.9),
                               rollout_kernel.py_func(state0, controls, 0.1, 2.9), rtol=0, atol=1e-10)


def test_safe_speed_parity():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        h, a = rng.uniform(-1, 3, n), rng.uniform(-1, 1, n)
        s1, s2 = np.zeros(n), np.zeros(n)
        v1 = safe_speed_kernel(8.0, h, a, n, 1.0, 1e3, 15.0, s1)
        v2 = safe_speed_kernel.py_func(8.0, h, a, n, 1.0, 1e3, 15.0, s2)
        assert abs(v1 - v2) <= 1e-10
        np.testing.assert_allclose(s1, s2, rtol=0, atol=1e-10)


def test_ttc_parity():
    rng = np.random.default_rng(4)
    ego = np.array([0.0, 0.0, 0.0, 10.0])
    agents = np.column_stack([rng.uniform(10, 60, 5), rng.uniform(-10, 10, 5), rng.uniform(-3, 3, 5),
                              rng.uniform(0, 10, 5)])
    shapes = np.tile(SHAPE, (5, 1))
    assert ttc_kernel(ego, SHAPE, agents, shapes, 0.1, 10.0) == ttc_kernel.py_func(ego, SHAPE, agents, shapes,
                                                                                   0.1, 10.0)


PIPELINE = """
import json, numpy as np
from barrierdiff._accel import JIT_ENABLED
from barrierdiff.planner import PlannerConfig
from barrierdiff.sim import builtin, run_scenario
from dataclasses import replace
res = run_scenario(replace(builtin("headon-1"), duration=1.5), PlannerConfig(mode="full"))
print(json.dumps({"jit": JIT_ENABLED, "ego": [r["ego"] for r in res.traces], "min_h": res.min_h}))
"""


def _pipeline(disable: bool) -> dict:
    env = dict(os.environ)
    env.pop("BARRIERDIFF_DISABLE_JIT", None)
    if disable:
        env["BARRIERDIFF_DISABLE_JIT"] = "1"
    out = subprocess.run([sys.executable, "-c", PIPELINE], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_closed_loop_parity_with_pure_python():
    fast, slow = _pipeline(False), _pipeline(True)
    assert fast["jit"] and not slow["jit"]
    np.testing.assert_allclose(np.array(fast["ego"]), np.array(slow["ego"]), rtol=0, atol=1e-8)
    assert abs(fast["min_h"] - slow["min_h"]) <= 1e-8
