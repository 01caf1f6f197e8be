"""Kinematic bicycle model and the LQR waypoint tracker.

The kinematic reference point is the rear-axle center.  Steering is
commanded directly (the tracker applies the steering-rate limit), speed is
changed through acceleration, and integration is explicit Euler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from ._accel import jit

DT = 0.1
HORIZON = 80


class EmptyReference(ValueError):
    pass


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    theta: float
    delta: float = 0.0
    v: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.delta, self.v], dtype=float)

    @classmethod
    def from_array(cls, a) -> "EgoState":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]), float(a[4]))


@dataclass(frozen=True)
class Control:
    accel: float
    delta_cmd: float


@dataclass(frozen=True)
class VehicleShape:
    axis_length: float = 4.6
    half_width: float = 1.0
    wheelbase: float = 2.9

    def __post_init__(self):
        if min(self.axis_length, self.half_width, self.wheelbase) <= 0:
            raise ValueError("vehicle dimensions must be positive")
        if self.wheelbase > self.axis_length:
            raise ValueError("wheelbase cannot exceed the axis length")

    def as_array(self) -> np.ndarray:
        return np.array([self.axis_length, self.half_width, self.wheelbase])


@dataclass
class Trajectory:
    """K x 4 waypoints (x, y, cos theta, sin theta) sampled every ``dt``."""

    waypoints: np.ndarray
    dt: float = DT

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        if self.waypoints.ndim != 2 or self.waypoints.shape[1] != 4 or self.waypoints.shape[0] < 2:
            raise ValueError(f"waypoints must be K x 4 with K >= 2, got {self.waypoints.shape}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(self.waypoints)):
            raise ValueError("waypoints must be finite")

    @property
    def K(self) -> int:
        return self.waypoints.shape[0]

    @property
    def headings(self) -> np.ndarray:
        return np.arctan2(self.waypoints[:, 3], self.waypoints[:, 2])

    @classmethod
    def from_states(cls, states: np.ndarray, dt: float = DT) -> "Trajectory":
        states = np.asarray(states, dtype=float)
        wp = np.column_stack([states[:, 0], states[:, 1], np.cos(states[:, 2]), np.sin(states[:, 2])])
        return cls(wp, dt)


@dataclass(frozen=True)
class DynamicsParams:
    delta_max: float = 0.6
    a_min: float = -6.0
    a_max: float = 3.0
    steer_rate_max: float = 0.7
    """rad/s; a non-positive value disables the limit."""
    k_v: float = 1.5
    lqr_q: tuple = (1.0, 2.0)
    lqr_r: float = 8.0
    dt: float = DT
    shape: VehicleShape = field(default_factory=VehicleShape)


@jit
def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    if w == -math.pi:
        w = math.pi
    return w


@jit
def step_kernel(x, y, theta, delta, v, accel, delta_cmd, dt, wheelbase):
    nx = x + v * math.cos(theta) * dt
    ny = y + v * math.sin(theta) * dt
    nth = wrap_angle(theta + v * math.tan(delta) / wheelbase * dt)
    nv = v + accel * dt
    if nv < 0.0:
        nv = 0.0
    return nx, ny, nth, delta_cmd, nv


@jit
def rollout_kernel(state0, controls, dt, wheelbase):
    n = controls.shape[0]
    out = np.empty((n + 1, 5))
    out[0] = state0
    for i in range(n):
        s = out[i]
        r = step_kernel(s[0], s[1], s[2], s[3], s[4], controls[i, 0], controls[i, 1], dt, wheelbase)
        for j in range(5):
            out[i + 1, j] = r[j]
    return out


def riccati_gain(v: float, dt: float, wheelbase: float, q=(1.0, 2.0), r: float = 8.0,
                 tol: float = 1e-9, max_iter: int = 200000):
    """Discrete LQR gain for the lateral error model at speed ``v``.

    Error state (cross-track e_y, heading e_theta), input steering:
        e_y'     = e_y + v dt e_theta
        e_theta' = e_theta + v dt / L * delta
    The Riccati recursion is iterated to a fixed point; returns the gain and
    the final residual.
    """
    A = np.array([[1.0, v * dt], [0.0, 1.0]])
    B = np.array([[0.0], [v * dt / wheelbase]])
    Q = np.diag(q)
    R = np.array([[r]])
    P = Q.copy()
    resid = np.inf
    for _ in range(max_iter):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_new = Q + A.T @ P @ (A - B @ K)
        P_new = 0.5 * (P_new + P_new.T)
        resid = float(np.max(np.abs(P_new - P)))
        P = P_new
        if resid <= tol:
            break
    BtP = B.T @ P
    K = np.linalg.solve(R + BtP @ B, BtP @ A)
    return K.ravel(), P, resid


LQR_MIN_SPEED = 0.5
LQR_MAX_SPEED = 25.0


@lru_cache(maxsize=16)
def lqr_gain_table(dt: float, wheelbase: float, q=(1.0, 2.0), r: float = 8.0, step: float = 0.5):
    """Gains on a speed grid over [0.5, 25] m/s; read-only once built."""
    speeds = np.arange(LQR_MIN_SPEED, LQR_MAX_SPEED + 1e-9, step)
    gains = np.array([riccati_gain(v, dt, wheelbase, q, r)[0] for v in speeds])
    speeds.setflags(write=False)
    gains.setflags(write=False)
    return speeds, gains


@jit
def _interp_gain(v, speeds, gains):
    n = speeds.shape[0]
    if v <= speeds[0]:
        return gains[0, 0], gains[0, 1]
    if v >= speeds[n - 1]:
        return gains[n - 1, 0], gains[n - 1, 1]
    h = speeds[1] - speeds[0]
    i = int((v - speeds[0]) / h)
    if i > n - 2:
        i = n - 2
    w = (v - speeds[i]) / h
    return (1.0 - w) * gains[i, 0] + w * gains[i + 1, 0], (1.0 - w) * gains[i, 1] + w * gains[i + 1, 1]


@jit
def track_kernel(x, y, theta, delta, v, wp, start, dt, wheelbase, speeds, gains,
                 k_v, a_min, a_max, delta_max, steer_rate_max):
    """LQR steering and proportional speed command toward ``wp[start:]``."""
    m = wp.shape[0]
    best = np.inf
    j = start
    for i in range(start, m):
        dx = wp[i, 0] - x
        dy = wp[i, 1] - y
        d2 = dx * dx + dy * dy
        if d2 < best:
            best = d2
            j = i
    th_ref = math.atan2(wp[j, 3], wp[j, 2])
    if j + 1 < m:
        dx = wp[j + 1, 0] - wp[j, 0]
        dy = wp[j + 1, 1] - wp[j, 1]
        ds = math.sqrt(dx * dx + dy * dy)
        v_ref = ds / dt
        kappa = 0.0
        if ds > 1e-3:
            kappa = wrap_angle(math.atan2(wp[j + 1, 3], wp[j + 1, 2]) - th_ref) / ds
    elif j > start:
        dx = wp[j, 0] - wp[j - 1, 0]
        dy = wp[j, 1] - wp[j - 1, 1]
        v_ref = math.sqrt(dx * dx + dy * dy) / dt
        kappa = 0.0
    else:
        v_ref = math.sqrt(best) / dt
        kappa = 0.0
    c = math.cos(th_ref)
    sn = math.sin(th_ref)
    e_y = -sn * (x - wp[j, 0]) + c * (y - wp[j, 1])
    e_th = wrap_angle(theta - th_ref)
    k1, k2 = _interp_gain(v_ref, speeds, gains)
    d = math.atan(wheelbase * kappa) - (k1 * e_y + k2 * e_th)
    if steer_rate_max > 0.0:
        lim = steer_rate_max * dt
        if d > delta + lim:
            d = delta + lim
        elif d < delta - lim:
            d = delta - lim
    if d > delta_max:
        d = delta_max
    elif d < -delta_max:
        d = -delta_max
    a = k_v * (v_ref - v)
    if a > a_max:
        a = a_max
    elif a < a_min:
        a = a_min
    return a, d


def step(state: EgoState, control: Control, dt: float = DT, wheelbase: float = 2.9) -> EgoState:
    """One explicit-Euler step; steering is set to the command."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return EgoState(*step_kernel(state.x, state.y, state.theta, state.delta, state.v,
                                 control.accel, control.delta_cmd, dt, wheelbase))


def controls_array(controls: Sequence[Control]) -> np.ndarray:
    return np.array([[c.accel, c.delta_cmd] for c in controls], dtype=float).reshape(-1, 2)


def rollout(initial: EgoState, controls: Sequence[Control], dt: float = DT,
            wheelbase: float = 2.9) -> list[EgoState]:
    if len(controls) == 0:
        raise ValueError("need at least one control")
    arr = rollout_kernel(initial.as_array(), controls_array(controls), dt, wheelbase)
    return [EgoState.from_array(r) for r in arr]


def track(state: EgoState, remaining: Trajectory | np.ndarray,
          params: DynamicsParams = DynamicsParams()) -> Control:
    """Nominal (accel, steering) toward the remaining waypoints."""
    wp = remaining.waypoints if isinstance(remaining, Trajectory) else np.asarray(remaining, dtype=float)
    if wp.ndim != 2 or wp.shape[0] == 0:
        raise EmptyReference("no waypoints remain")
    sh = params.shape
    speeds, gains = lqr_gain_table(params.dt, sh.wheelbase, tuple(params.lqr_q), params.lqr_r)
    a, d = track_kernel(state.x, state.y, state.theta, state.delta, state.v, wp, 0, params.dt,
                        sh.wheelbase, speeds, gains, params.k_v, params.a_min, params.a_max,
                        params.delta_max, params.steer_rate_max)
    return Control(float(a), float(d))


def waypoints_to_states(traj: Trajectory, v0: float) -> np.ndarray:
    """K x 5 states; speeds from waypoint spacing, steering left at zero."""
    wp = traj.waypoints
    out = np.zeros((traj.K, 5))
    out[:, 0:2] = wp[:, 0:2]
    out[:, 2] = np.arctan2(wp[:, 3], wp[:, 2])
    out[0, 4] = v0
    out[1:, 4] = np.hypot(np.diff(wp[:, 0]), np.diff(wp[:, 1])) / traj.dt
    return out
