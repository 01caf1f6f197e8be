"""Capsule time-to-collision and the simplified composite score."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .._accel import jit
from ..geometry import pose_axis, segment_closest

TTC_CAP = 10.0
TTC_THRESHOLD = 3.0
COMFORT_ACCEL = 3.0
COMFORT_JERK = 5.0
PROGRESS_FLOOR = 0.2
WEIGHTS = {"ttc": 5.0, "progress": 5.0, "speed": 4.0, "comfort": 2.0}


@jit
def ttc_kernel(ego, ego_shape, agents, shapes, dt, cap):
    """Earliest time the constant-velocity projections of the capsules touch.

    ``ego`` and ``agents[j]`` are (x, y, theta, v) poses and shapes are
    (axis_length, half_width, wheelbase). Returns ``cap`` when no contact
    happens within the cap.
    """
    n = int(round(cap / dt))
    ce, se = math.cos(ego[2]), math.sin(ego[2])
    best = cap
    for j in range(agents.shape[0]):
        ca, sa = math.cos(agents[j, 2]), math.sin(agents[j, 2])
        for i in range(n + 1):
            tau = i * dt
            if tau >= best:
                break
            ex, ey, fx, fy = pose_axis(ego[0] + ego[3] * tau * ce, ego[1] + ego[3] * tau * se, ego[2],
                                       ego_shape[0], ego_shape[2])
            px, py, qx, qy = pose_axis(agents[j, 0] + agents[j, 3] * tau * ca,
                                       agents[j, 1] + agents[j, 3] * tau * sa, agents[j, 2],
                                       shapes[j, 0], shapes[j, 2])
            _, _, d, _ = segment_closest(ex, ey, fx, fy, px, py, qx, qy)
            if d - ego_shape[1] - shapes[j, 1] <= 0.0:
                best = tau
                break
    return best


@dataclass(frozen=True)
class ScoreTerms:
    """Hard multipliers and soft metrics (soft ones are fractions in [0, 1])."""

    collided: bool
    in_corridor: bool
    progress_ratio: float
    ttc: float
    speed: float
    comfort: float

    def multipliers(self) -> dict:
        return {"collision": 0.0 if self.collided else 1.0,
                "corridor": 1.0 if self.in_corridor else 0.0,
                "progress": 0.5 if self.progress_ratio < PROGRESS_FLOOR else 1.0}

    def soft(self) -> dict:
        return {"ttc": self.ttc, "progress": self.progress_ratio, "speed": self.speed, "comfort": self.comfort}

    def as_dict(self) -> dict:
        return asdict(self)


def composite_score(terms: ScoreTerms) -> float:
    """Product of multipliers times the weighted mean of the soft metrics."""
    mult = math.prod(terms.multipliers().values())
    soft = terms.soft()
    weighted = sum(WEIGHTS[k] * min(1.0, max(0.0, soft[k])) for k in WEIGHTS) / sum(WEIGHTS.values())
    return float(min(1.0, max(0.0, mult * weighted)))


def comfort_series(speeds: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Executed longitudinal acceleration and jerk from a speed trace."""
    acc = np.diff(speeds) / dt
    jerk = np.diff(acc) / dt if len(acc) > 1 else np.zeros(0)
    return acc, jerk


def comfort_fraction(acc: np.ndarray, jerk: np.ndarray) -> float:
    if len(acc) == 0:
        return 1.0
    ok = np.abs(acc) <= COMFORT_ACCEL
    ok[1:] &= np.abs(jerk) <= COMFORT_JERK
    return float(np.mean(ok))
