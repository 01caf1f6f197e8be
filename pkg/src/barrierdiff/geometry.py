"""Segment/capsule distance and the pose gradient of capsule distance.

Every vehicle footprint is a capsule: a segment from the rear-end center to
the front-end center, inflated by the vehicle half-width.  Distances are
solved in closed form (clamped quadratic minimization over the unit square),
so results are exact up to floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from ._accel import jit

if TYPE_CHECKING:
    from .dynamics import EgoState, VehicleShape

# sin^2 of the angle below which two axes count as parallel (1e-9 rad)
_PARALLEL_SIN2 = 1e-18
_DEGENERATE = 1e-24

OK = 0
NON_UNIQUE = 1


class GeometryError(ValueError):
    pass


class NonUniqueMinimizer(GeometryError):
    """The closest pair is an interval (parallel, overlapping axes)."""


class ZeroDistance(GeometryError):
    """Axes touch; the distance is not differentiable there."""


@dataclass(frozen=True)
class Segment:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(2))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(2))
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.q))):
            raise GeometryError("segment endpoints must be finite")

    def point(self, s: float) -> np.ndarray:
        return self.p + s * (self.q - self.p)


@dataclass(frozen=True)
class Capsule:
    axis: Segment
    half_width: float

    def __post_init__(self):
        if not self.half_width > 0:
            raise GeometryError(f"half_width must be positive, got {self.half_width}")


@dataclass(frozen=True)
class ClosestPair:
    s_star: float
    r_star: float
    distance: float
    direction: np.ndarray | None
    """Unit vector from the closest point of the second segment to the
    closest point of the first; None when the segments touch."""
    non_unique: bool = False


@jit
def _clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@jit
def segment_closest(p1x, p1y, q1x, q1y, p2x, p2y, q2x, q2y):
    """Closest parameters ``(s, r, dist, flag)`` between two 2-D segments.

    ``flag`` is NON_UNIQUE when the minimizing pair is not unique; the pair
    returned then has the smallest s, then the smallest r.
    """
    ux = q1x - p1x
    uy = q1y - p1y
    vx = q2x - p2x
    vy = q2y - p2y
    wx = p1x - p2x
    wy = p1y - p2y
    a = ux * ux + uy * uy
    e = vx * vx + vy * vy
    f = vx * wx + vy * wy
    flag = OK
    if a <= _DEGENERATE and e <= _DEGENERATE:
        s = 0.0
        r = 0.0
    elif a <= _DEGENERATE:
        s = 0.0
        r = _clamp01(f / e)
    else:
        c = ux * wx + uy * wy
        if e <= _DEGENERATE:
            r = 0.0
            s = _clamp01(-c / a)
        else:
            b = ux * vx + uy * vy
            denom = a * e - b * b
            if denom > _PARALLEL_SIN2 * a * e:
                s_raw = (b * f - c * e) / denom
                s = _clamp01(s_raw)
                r = (b * s + f) / e
                if s == s_raw and 0.0 <= r <= 1.0:
                    # unclamped stationary point of non-parallel lines: they cross here
                    return s, r, 0.0, flag
                if r < 0.0:
                    r = 0.0
                    s = _clamp01(-c / a)
                elif r > 1.0:
                    r = 1.0
                    s = _clamp01((b - c) / a)
            else:
                # parallel: r(s) = (f + b s) / e is the projection of S1(s)
                if b > 0.0:
                    s_lo = max(0.0, -f / b)
                    s_hi = min(1.0, (e - f) / b)
                else:
                    s_lo = max(0.0, (e - f) / b)
                    s_hi = min(1.0, -f / b)
                if s_lo <= s_hi:
                    s = s_lo
                    r = _clamp01((f + b * s) / e)
                    if s_hi > s_lo:
                        flag = NON_UNIQUE
                else:
                    # disjoint projections: best endpoint combination
                    best = np.inf
                    s = 0.0
                    r = 0.0
                    for k in range(4):
                        if k == 0:
                            cs = 0.0
                            cr = _clamp01(f / e)
                        elif k == 1:
                            cs = 1.0
                            cr = _clamp01((f + b) / e)
                        elif k == 2:
                            cr = 0.0
                            cs = _clamp01(-c / a)
                        else:
                            cr = 1.0
                            cs = _clamp01((b - c) / a)
                        dx = wx + cs * ux - cr * vx
                        dy = wy + cs * uy - cr * vy
                        d2 = dx * dx + dy * dy
                        if d2 < best or (d2 == best and (cs < s or (cs == s and cr < r))):
                            best = d2
                            s = cs
                            r = cr
    dx = wx + s * ux - r * vx
    dy = wy + s * uy - r * vy
    return s, r, math.sqrt(dx * dx + dy * dy), flag


@jit
def pose_axis(x, y, theta, axis_length, wheelbase):
    """Capsule axis endpoints ``(px, py, qx, qy)`` for a rear-axle pose."""
    rear = 0.5 * (axis_length - wheelbase)
    c = math.cos(theta)
    sn = math.sin(theta)
    return x - rear * c, y - rear * sn, x + (axis_length - rear) * c, y + (axis_length - rear) * sn


@jit
def pose_distance_grad(x, y, theta, axis_length, wheelbase, p2x, p2y, q2x, q2y):
    """Axis distance from an ego pose to a segment and its (x, y, theta) gradient.

    Returns ``(dist, gx, gy, gtheta, flag)``; the gradient is zero when the
    axes touch (dist == 0).
    """
    rear = 0.5 * (axis_length - wheelbase)
    c = math.cos(theta)
    sn = math.sin(theta)
    p1x = x - rear * c
    p1y = y - rear * sn
    q1x = x + (axis_length - rear) * c
    q1y = y + (axis_length - rear) * sn
    s, r, dist, flag = segment_closest(p1x, p1y, q1x, q1y, p2x, p2y, q2x, q2y)
    if dist <= 0.0:
        return dist, 0.0, 0.0, 0.0, flag
    nx = (p1x + s * (q1x - p1x) - p2x - r * (q2x - p2x)) / dist
    ny = (p1y + s * (q1y - p1y) - p2y - r * (q2y - p2y)) / dist
    # S1(s) = (x, y) + (s * L_axis - rear) * (cos, sin)
    arm = s * axis_length - rear
    gtheta = arm * (-nx * sn + ny * c)
    return dist, nx, ny, gtheta, flag


def segment_distance(a: Segment, b: Segment) -> ClosestPair:
    s, r, dist, flag = segment_closest(a.p[0], a.p[1], a.q[0], a.q[1], b.p[0], b.p[1], b.q[0], b.q[1])
    direction = None
    if dist > 0.0:
        direction = (a.point(s) - b.point(r)) / dist
    return ClosestPair(float(s), float(r), float(dist), direction, bool(flag == NON_UNIQUE))


def capsule_distance(a: Capsule, b: Capsule) -> float:
    """Axis distance minus both half-widths; negative means penetration."""
    return segment_distance(a.axis, b.axis).distance - a.half_width - b.half_width


def ego_capsule(state: EgoState, shape: VehicleShape) -> Capsule:
    px, py, qx, qy = pose_axis(state.x, state.y, state.theta, shape.axis_length, shape.wheelbase)
    return Capsule(Segment((px, py), (qx, qy)), shape.half_width)


def distance_gradient(ego_state: EgoState, ego_geometry: VehicleShape, other: Capsule) -> np.ndarray:
    """Exact gradient of capsule distance w.r.t. (x, y, theta, delta, v).

    Raises NonUniqueMinimizer for parallel overlapping axes and
    ZeroDistance when the axes touch.
    """
    p2, q2 = other.axis.p, other.axis.q
    dist, gx, gy, gth, flag = pose_distance_grad(
        ego_state.x, ego_state.y, ego_state.theta,
        ego_geometry.axis_length, ego_geometry.wheelbase,
        p2[0], p2[1], q2[0], q2[1],
    )
    if dist <= 0.0:
        raise ZeroDistance("axes intersect; gradient undefined")
    if flag == NON_UNIQUE:
        raise NonUniqueMinimizer("closest pair is not unique (parallel axes)")
    return np.array([gx, gy, gth, 0.0, 0.0])
