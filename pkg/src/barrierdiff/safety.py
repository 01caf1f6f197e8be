"""Capsule-barrier safety filter with fixed steering.

The filter tracks a planned trajectory with the LQR tracker, keeps the
tracker's steering untouched, and only adjusts speed: at every rollout step
the nominal next speed is projected onto the set allowed by the capsule
barrier constraints of the critical neighbors, then the bicycle model is
propagated with the recovered acceleration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from ._accel import jit
from .dynamics import (
    Control, DynamicsParams, EgoState, Trajectory, VehicleShape, lqr_gain_table,
    step_kernel, track_kernel, wrap_angle,
)
from .geometry import NON_UNIQUE, Capsule, NonUniqueMinimizer, pose_axis, pose_distance_grad, segment_closest

SLACK_ACTIVE = 1e-6


class FilterError(ValueError):
    pass


class EmptyPlan(FilterError):
    pass


class MismatchedHorizon(FilterError):
    pass


@dataclass(frozen=True)
class BarrierParams:
    d_safe: float = 0.3
    gamma: float = 1.0
    slack_penalty: float = 1e6
    v_max: float = 15.0

    def __post_init__(self):
        if min(self.d_safe, self.gamma, self.v_max) <= 0:
            raise ValueError("barrier parameters must be positive")
        if self.slack_penalty < 1e4:
            raise ValueError("slack_penalty must be at least 1e4")


@dataclass(frozen=True)
class BarrierEval:
    h: float
    dh_dv: float
    agent_id: Hashable = None
    non_unique: bool = False


@dataclass
class Neighbors:
    """Time-aligned predicted neighbor poses, packed for the kernels."""

    ids: tuple
    tracks: np.ndarray
    """N x K x 4 (x, y, cos, sin) rear-axle poses."""
    shapes: np.ndarray
    """N x 3 (axis_length, half_width, wheelbase)."""

    @classmethod
    def empty(cls, K: int) -> "Neighbors":
        return cls((), np.zeros((0, K, 4)), np.zeros((0, 3)))

    @classmethod
    def from_mapping(cls, tracks: Mapping[Hashable, Trajectory | np.ndarray],
                     shapes: Mapping[Hashable, VehicleShape]) -> "Neighbors":
        ids = tuple(tracks)
        if not ids:
            return cls.empty(0)
        arrs = [t.waypoints if isinstance(t, Trajectory) else np.asarray(t, dtype=float) for t in tracks.values()]
        K = min(a.shape[0] for a in arrs)
        return cls(ids, np.stack([a[:K] for a in arrs]), np.stack([shapes[i].as_array() for i in ids]))

    def __len__(self):
        return len(self.ids)

    def mask(self, critical) -> np.ndarray:
        return np.array([i in critical for i in self.ids], dtype=np.bool_)


@dataclass
class FilterResult:
    corrected: Trajectory
    states: np.ndarray
    controls_array: np.ndarray
    slack_used: np.ndarray
    """(K-1) x N slack per rollout step and neighbor (m/s)."""
    qp_active: np.ndarray
    """Per step: the QP moved the speed away from the nominal one."""
    h_log: np.ndarray
    """K x N barrier values along the rollout (NaN for non-critical)."""
    saturated: np.ndarray
    """Per step: the recovered acceleration hit a bound."""
    agent_ids: tuple = ()
    n_constrained: int = 0
    non_unique_steps: int = 0
    feasible_dynamics: bool = True

    @property
    def controls(self) -> list[Control]:
        return [Control(float(a), float(d)) for a, d in self.controls_array]

    def slack_rate(self) -> float:
        """Fraction of constrained QP solves with an activated slack."""
        if self.n_constrained == 0:
            return 0.0
        return float(np.count_nonzero(np.any(self.slack_used > SLACK_ACTIVE, axis=1))) / self.n_constrained

    def min_h(self) -> float:
        finite = self.h_log[np.isfinite(self.h_log)]
        return float(finite.min()) if finite.size else math.inf


@jit
def safe_speed_kernel(v_nom, h, a, n, gamma, rho, v_max, slack_out):
    """Exact minimizer of the relaxed velocity QP.

    Constraints with h >= 0 are hard (v = 0 always satisfies them); those
    with h < 0 get a nonnegative slack penalized by rho * slack^2.  The
    objective is a convex piecewise quadratic in v; every piece's stationary
    point is checked.
    """
    hi = v_max
    for j in range(n):
        if h[j] >= 0.0 and a[j] < 0.0:
            ub = gamma * h[j] / (-a[j])
            if ub < hi:
                hi = ub
    bps = np.empty(n + 2)
    nb = 0
    bps[nb] = 0.0
    nb += 1
    for j in range(n):
        if h[j] < 0.0 and a[j] > 0.0:
            b = -gamma * h[j] / a[j]
            if 0.0 < b < hi:
                bps[nb] = b
                nb += 1
    bps[nb] = hi
    nb += 1
    pts = np.sort(bps[:nb])
    best_v = 0.0
    best_f = np.inf
    for i in range(nb):
        # endpoint candidate and, for i < nb - 1, the piece [pts[i], pts[i+1]]
        for kind in range(2):
            if kind == 0:
                v = pts[i]
            else:
                if i == nb - 1:
                    continue
                lo = pts[i]
                up = pts[i + 1]
                mid = 0.5 * (lo + up)
                num = v_nom
                den = 1.0
                for j in range(n):
                    if h[j] < 0.0:
                        c = -gamma * h[j]
                        if c - a[j] * mid > 0.0:
                            num += rho * a[j] * c
                            den += rho * a[j] * a[j]
                v = num / den
                if v < lo:
                    v = lo
                elif v > up:
                    v = up
            f = (v - v_nom) * (v - v_nom)
            for j in range(n):
                if h[j] < 0.0:
                    r = -gamma * h[j] - a[j] * v
                    if r > 0.0:
                        f += rho * r * r
            if f < best_f:
                best_f = f
                best_v = v
    for j in range(n):
        slack_out[j] = 0.0
        if h[j] < 0.0:
            r = -gamma * h[j] - a[j] * best_v
            if r > 0.0:
                slack_out[j] = r
    return best_v


@jit
def barrier_eval_kernel(x, y, theta, delta_nom, ego_axis, ego_hw, wheelbase, ox, oy, oc, osn,
                        o_axis, o_hw, o_wb, d_safe):
    """(h, dh/dv, flag) of one neighbor for the ego pose and steering."""
    px, py, qx, qy = pose_axis(ox, oy, math.atan2(osn, oc), o_axis, o_wb)
    dist, gx, gy, gth, flag = pose_distance_grad(x, y, theta, ego_axis, wheelbase, px, py, qx, qy)
    h = dist - ego_hw - o_hw - d_safe
    if dist <= 0.0:
        # axes cross: push along the center-to-center direction instead
        ex, ey, fx, fy = pose_axis(x, y, theta, ego_axis, wheelbase)
        dx = 0.5 * (ex + fx - px - qx)
        dy = 0.5 * (ey + fy - py - qy)
        nrm = math.sqrt(dx * dx + dy * dy)
        if nrm > 0.0:
            gx = dx / nrm
            gy = dy / nrm
        else:
            gx = -math.cos(theta)
            gy = -math.sin(theta)
        gth = 0.0
        flag = NON_UNIQUE
    dhdv = gx * math.cos(theta) + gy * math.sin(theta) + gth * math.tan(delta_nom) / wheelbase
    return h, dhdv, flag


@jit
def pc_cbf_kernel(plan, state0, nb_tracks, nb_shapes, active, ego_axis, ego_hw, wheelbase, dt,
                  speeds, gains, k_v, a_min, a_max, delta_max, steer_rate_max,
                  d_safe, gamma, rho, v_max):
    K = plan.shape[0]
    N = nb_tracks.shape[0]
    states = np.empty((K, 5))
    controls = np.empty((K - 1, 2))
    slack = np.zeros((K - 1, N))
    h_log = np.full((K, N), np.nan)
    qp_active = np.zeros(K - 1, dtype=np.bool_)
    saturated = np.zeros(K - 1, dtype=np.bool_)
    hs = np.empty(N)
    ds = np.empty(N)
    sl = np.empty(N)
    n_active = 0
    for j in range(N):
        if active[j]:
            n_active += 1
    n_constrained = 0
    non_unique = 0
    for i in range(5):
        states[0, i] = state0[i]
    for k in range(K - 1):
        x = states[k, 0]
        y = states[k, 1]
        th = states[k, 2]
        dl = states[k, 3]
        v = states[k, 4]
        a_nom, d_nom = track_kernel(x, y, th, dl, v, plan, k + 1, dt, wheelbase, speeds, gains,
                                    k_v, a_min, a_max, delta_max, steer_rate_max)
        accel = a_nom
        if n_active > 0:
            n_constrained += 1
            m = 0
            for j in range(N):
                if active[j]:
                    h, dhdv, flag = barrier_eval_kernel(
                        x, y, th, d_nom, ego_axis, ego_hw, wheelbase,
                        nb_tracks[j, k, 0], nb_tracks[j, k, 1], nb_tracks[j, k, 2], nb_tracks[j, k, 3],
                        nb_shapes[j, 0], nb_shapes[j, 1], nb_shapes[j, 2], d_safe)
                    h_log[k, j] = h
                    hs[m] = h
                    ds[m] = dhdv
                    if flag == NON_UNIQUE:
                        non_unique += 1
                    m += 1
            v_nom = v + a_nom * dt
            if v_nom < 0.0:
                v_nom = 0.0
            v_star = safe_speed_kernel(v_nom, hs, ds, m, gamma, rho, v_max, sl)
            m = 0
            for j in range(N):
                if active[j]:
                    slack[k, j] = sl[m]
                    m += 1
            if v_star != v_nom:
                qp_active[k] = True
                accel = (v_star - v) / dt
                if accel < a_min:
                    accel = a_min
                    saturated[k] = True
                elif accel > a_max:
                    accel = a_max
                    saturated[k] = True
        controls[k, 0] = accel
        controls[k, 1] = d_nom
        r = step_kernel(x, y, th, dl, v, accel, d_nom, dt, wheelbase)
        for i in range(5):
            states[k + 1, i] = r[i]
    for j in range(N):
        if active[j]:
            h, dhdv, flag = barrier_eval_kernel(
                states[K - 1, 0], states[K - 1, 1], states[K - 1, 2], 0.0, ego_axis, ego_hw, wheelbase,
                nb_tracks[j, K - 1, 0], nb_tracks[j, K - 1, 1], nb_tracks[j, K - 1, 2], nb_tracks[j, K - 1, 3],
                nb_shapes[j, 0], nb_shapes[j, 1], nb_shapes[j, 2], d_safe)
            h_log[K - 1, j] = h
    return states, controls, slack, h_log, qp_active, saturated, n_constrained, non_unique


@jit
def _polyline_pose(pts, cum, seg_c, seg_s, s):
    """Position and segment index at arc length s along the polyline."""
    n = pts.shape[0]
    i = 0
    while i < n - 2 and cum[i + 1] <= s:
        i += 1
    seg = cum[i + 1] - cum[i]
    w = 0.0
    if seg > 0.0:
        w = (s - cum[i]) / seg
    if w < 0.0:
        w = 0.0
    elif w > 1.0:
        w = 1.0
    return pts[i, 0] + w * (pts[i + 1, 0] - pts[i, 0]), pts[i, 1] + w * (pts[i + 1, 1] - pts[i, 1]), i


@jit
def arc_reparam_kernel(plan, state0, nb_tracks, nb_shapes, active, ego_axis, ego_hw, wheelbase, dt,
                       delta_max, d_safe, gamma, rho, v_max):
    """Slide along the plan's polyline with barrier-limited speeds."""
    K = plan.shape[0]
    N = nb_tracks.shape[0]
    pts = np.empty((K, 2))
    pts[0, 0] = state0[0]
    pts[0, 1] = state0[1]
    for k in range(1, K):
        pts[k, 0] = plan[k, 0]
        pts[k, 1] = plan[k, 1]
    cum = np.zeros(K)
    seg_c = np.empty(K - 1)
    seg_s = np.empty(K - 1)
    seg_th = np.empty(K - 1)
    for k in range(K - 1):
        dx = pts[k + 1, 0] - pts[k, 0]
        dy = pts[k + 1, 1] - pts[k, 1]
        ln = math.sqrt(dx * dx + dy * dy)
        cum[k + 1] = cum[k] + ln
        if ln > 1e-9:
            seg_c[k] = dx / ln
            seg_s[k] = dy / ln
        elif k > 0:
            seg_c[k] = seg_c[k - 1]
            seg_s[k] = seg_s[k - 1]
        else:
            seg_c[k] = math.cos(state0[2])
            seg_s[k] = math.sin(state0[2])
        seg_th[k] = math.atan2(seg_s[k], seg_c[k])
    kappa = np.zeros(K - 1)
    for k in range(K - 1):
        ln = cum[k + 1] - cum[k]
        prev = state0[2] if k == 0 else seg_th[k - 1]
        if ln > 1e-3:
            kappa[k] = wrap_angle(seg_th[k] - prev) / ln
    out = np.empty((K, 4))
    out[0, 0] = state0[0]
    out[0, 1] = state0[1]
    out[0, 2] = math.cos(state0[2])
    out[0, 3] = math.sin(state0[2])
    speeds = np.empty(K)
    speeds[0] = state0[4]
    slack = np.zeros((K - 1, N))
    h_log = np.full((K, N), np.nan)
    qp_active = np.zeros(K - 1, dtype=np.bool_)
    hs = np.empty(N)
    ds = np.empty(N)
    sl = np.empty(N)
    n_active = 0
    for j in range(N):
        if active[j]:
            n_active += 1
    n_constrained = 0
    deficit = 0.0
    s_cur = 0.0
    seg_i = 0
    x = out[0, 0]
    y = out[0, 1]
    th = state0[2]
    for k in range(K - 1):
        v_nom = (cum[k + 1] - cum[k]) / dt
        v_star = v_nom
        if n_active > 0:
            n_constrained += 1
            tan_d = wheelbase * kappa[seg_i]
            m = 0
            for j in range(N):
                if active[j]:
                    h, dhdv, flag = barrier_eval_kernel(
                        x, y, th, math.atan(tan_d), ego_axis, ego_hw, wheelbase,
                        nb_tracks[j, k, 0], nb_tracks[j, k, 1], nb_tracks[j, k, 2], nb_tracks[j, k, 3],
                        nb_shapes[j, 0], nb_shapes[j, 1], nb_shapes[j, 2], d_safe)
                    h_log[k, j] = h
                    hs[m] = h
                    ds[m] = dhdv
                    m += 1
            v_star = safe_speed_kernel(v_nom, hs, ds, m, gamma, rho, v_max, sl)
            m = 0
            for j in range(N):
                if active[j]:
                    slack[k, j] = sl[m]
                    m += 1
            if v_star != v_nom:
                qp_active[k] = True
                deficit += (v_nom - v_star) * dt
        speeds[k + 1] = v_star
        if deficit == 0.0:
            s_cur = cum[k + 1]
            x = plan[k + 1, 0]
            y = plan[k + 1, 1]
            seg_i = k + 1 if k + 1 < K - 1 else K - 2
            out[k + 1, 0] = x
            out[k + 1, 1] = y
            out[k + 1, 2] = plan[k + 1, 2]
            out[k + 1, 3] = plan[k + 1, 3]
            th = math.atan2(plan[k + 1, 3], plan[k + 1, 2])
        else:
            s_cur = cum[k + 1] - deficit
            if s_cur < 0.0:
                s_cur = 0.0
            x, y, seg_i = _polyline_pose(pts, cum, seg_c, seg_s, s_cur)
            out[k + 1, 0] = x
            out[k + 1, 1] = y
            out[k + 1, 2] = seg_c[seg_i]
            out[k + 1, 3] = seg_s[seg_i]
            th = seg_th[seg_i]
    for j in range(N):
        if active[j]:
            h, dhdv, flag = barrier_eval_kernel(
                x, y, th, 0.0, ego_axis, ego_hw, wheelbase,
                nb_tracks[j, K - 1, 0], nb_tracks[j, K - 1, 1], nb_tracks[j, K - 1, 2], nb_tracks[j, K - 1, 3],
                nb_shapes[j, 0], nb_shapes[j, 1], nb_shapes[j, 2], d_safe)
            h_log[K - 1, j] = h
    return out, speeds, slack, h_log, qp_active, n_constrained


def _prepare(plan: Trajectory, neighbors: Neighbors | None) -> Neighbors:
    if plan is None or plan.K < 2:
        raise EmptyPlan("plan needs at least two waypoints")
    if neighbors is None:
        return Neighbors.empty(plan.K)
    if len(neighbors) and neighbors.tracks.shape[1] < plan.K:
        raise MismatchedHorizon(
            f"neighbor predictions cover {neighbors.tracks.shape[1]} steps, plan has {plan.K}")
    return neighbors


def _active(neighbors: Neighbors, critical) -> np.ndarray:
    if critical is None:
        return np.ones(len(neighbors), dtype=np.bool_)
    return neighbors.mask(critical)


def pc_cbf(plan: Trajectory, ego0: EgoState, neighbors: Neighbors | None = None,
           params: BarrierParams = BarrierParams(), dyn: DynamicsParams = DynamicsParams(),
           critical=None) -> FilterResult:
    """Path-consistent filter: LQR-tracked rollout with barrier-limited speed.

    ``critical`` restricts the constraints to a subset of neighbor ids
    (all neighbors when None).
    """
    neighbors = _prepare(plan, neighbors)
    sh = dyn.shape
    speeds, gains = lqr_gain_table(dyn.dt, sh.wheelbase, tuple(dyn.lqr_q), dyn.lqr_r)
    states, controls, slack, h_log, qp_active, saturated, n_con, non_unique = pc_cbf_kernel(
        plan.waypoints, ego0.as_array(), neighbors.tracks, neighbors.shapes, _active(neighbors, critical),
        sh.axis_length, sh.half_width, sh.wheelbase, dyn.dt, speeds, gains, dyn.k_v, dyn.a_min,
        dyn.a_max, dyn.delta_max, dyn.steer_rate_max,
        params.d_safe, params.gamma, params.slack_penalty, params.v_max)
    return FilterResult(Trajectory.from_states(states, dyn.dt), states, controls, slack, qp_active,
                        h_log, saturated, neighbors.ids, int(n_con), int(non_unique))


def arc_reparam(plan: Trajectory, ego0: EgoState, neighbors: Neighbors | None = None,
                params: BarrierParams = BarrierParams(), dyn: DynamicsParams = DynamicsParams(),
                critical=None) -> FilterResult:
    """Ablation: keep the plan's polyline, re-time progress along it.

    There is no dynamics propagation, so the result need not be reachable
    by the bicycle model.  Controls are finite-difference accelerations and
    curvature steering along the re-timed path.
    """
    neighbors = _prepare(plan, neighbors)
    sh = dyn.shape
    wp, speeds, slack, h_log, qp_active, n_con = arc_reparam_kernel(
        plan.waypoints, ego0.as_array(), neighbors.tracks, neighbors.shapes, _active(neighbors, critical),
        sh.axis_length, sh.half_width, sh.wheelbase, dyn.dt, dyn.delta_max,
        params.d_safe, params.gamma, params.slack_penalty, params.v_max)
    heads = np.arctan2(wp[:, 3], wp[:, 2])
    step_len = np.hypot(np.diff(wp[:, 0]), np.diff(wp[:, 1]))
    dth = (np.diff(heads) + np.pi) % (2 * np.pi) - np.pi
    kappa = np.where(step_len > 1e-3, dth / np.maximum(step_len, 1e-3), 0.0)
    controls = np.column_stack([
        np.diff(speeds) / dyn.dt,
        np.clip(np.arctan(sh.wheelbase * kappa), -dyn.delta_max, dyn.delta_max),
    ])
    states = np.column_stack([wp[:, 0], wp[:, 1], heads, np.zeros(plan.K), speeds])
    states[0, 3] = ego0.delta
    return FilterResult(Trajectory(wp, dyn.dt), states, controls, slack, qp_active, h_log,
                        np.zeros(plan.K - 1, dtype=bool), neighbors.ids, int(n_con), 0,
                        feasible_dynamics=False)


def barrier(ego: EgoState, ego_shape: VehicleShape, other: Capsule,
            params: BarrierParams = BarrierParams()) -> float:
    """Capsule distance to ``other`` minus the safety margin."""
    px, py, qx, qy = pose_axis(ego.x, ego.y, ego.theta, ego_shape.axis_length, ego_shape.wheelbase)
    _, _, dist, _ = segment_closest(px, py, qx, qy, other.axis.p[0], other.axis.p[1],
                                    other.axis.q[0], other.axis.q[1])
    return dist - ego_shape.half_width - other.half_width - params.d_safe


def dh_dv(ego: EgoState, ego_shape: VehicleShape, other: Capsule, delta_nom: float,
          wheelbase: float | None = None, strict: bool = False) -> float:
    """Speed coefficient of the barrier derivative under fixed steering.

    Parallel overlapping axes fall back to the tie-broken closest pair; pass
    ``strict=True`` to raise NonUniqueMinimizer instead.
    """
    L = ego_shape.wheelbase if wheelbase is None else wheelbase
    p, q = other.axis.p, other.axis.q
    dist, gx, gy, gth, flag = pose_distance_grad(ego.x, ego.y, ego.theta, ego_shape.axis_length,
                                                 ego_shape.wheelbase, p[0], p[1], q[0], q[1])
    if strict and flag == NON_UNIQUE:
        raise NonUniqueMinimizer("closest pair is not unique; subgradient used")
    return gx * math.cos(ego.theta) + gy * math.sin(ego.theta) + gth * math.tan(delta_nom) / L


def evaluate(ego: EgoState, ego_shape: VehicleShape, other: Capsule, delta_nom: float,
             params: BarrierParams = BarrierParams(), agent_id=None) -> BarrierEval:
    p, q = other.axis.p, other.axis.q
    dist, gx, gy, gth, flag = pose_distance_grad(ego.x, ego.y, ego.theta, ego_shape.axis_length,
                                                 ego_shape.wheelbase, p[0], p[1], q[0], q[1])
    h = dist - ego_shape.half_width - other.half_width - params.d_safe
    dv = gx * math.cos(ego.theta) + gy * math.sin(ego.theta) + gth * math.tan(delta_nom) / ego_shape.wheelbase
    return BarrierEval(float(h), float(dv), agent_id, bool(flag == NON_UNIQUE))


def safe_speed(v_nom: float, evals: Sequence[BarrierEval],
               params: BarrierParams = BarrierParams()) -> tuple[float, np.ndarray]:
    """Minimally modified speed and per-agent slack."""
    if v_nom < 0:
        raise ValueError("v_nom must be nonnegative")
    h = np.array([e.h for e in evals], dtype=float)
    a = np.array([e.dh_dv for e in evals], dtype=float)
    slack = np.zeros(len(evals))
    v = safe_speed_kernel(float(v_nom), h, a, len(evals), params.gamma, params.slack_penalty,
                          params.v_max, slack)
    return float(v), slack
