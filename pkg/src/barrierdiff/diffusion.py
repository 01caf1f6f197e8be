"""DDPM-style reverse sampling over K x 4 trajectories.

Sampling runs in a standardized space: positions relative to the ego's
start and divided by ``POSITION_SCALE``, heading channels unscaled.  The
correction hook receives physical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .dynamics import DT, HORIZON, EgoState, Trajectory

POSITION_SCALE = 50.0
HEADING_SCALE = 1.0


class ScheduleEdge(ValueError):
    """The re-estimated noise is undefined where the cumulative alpha is 1."""


class DegenerateRoute(ValueError):
    pass


@dataclass(frozen=True)
class DenoiseSchedule:
    alpha_bar: np.ndarray
    """T + 1 values, alpha_bar[0] == 1, strictly decreasing."""
    sigma: np.ndarray
    """T values; sigma[t - 1] is the sampling noise at step t."""

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=float)
        sg = np.asarray(self.sigma, dtype=float)
        if ab.ndim != 1 or ab.size < 2:
            raise ValueError("alpha_bar needs at least two entries")
        if ab[0] != 1.0:
            raise ValueError("alpha_bar[0] must be 1")
        if np.any(ab <= 0) or np.any(ab > 1) or np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must lie in (0, 1] and decrease strictly")
        if sg.shape != (ab.size - 1,) or np.any(sg < 0):
            raise ValueError("sigma must hold T nonnegative values")
        ab.setflags(write=False)
        sg.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)
        object.__setattr__(self, "sigma", sg)

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1

    @classmethod
    def cosine(cls, T: int = 20, s: float = 0.008, stochastic: bool = False) -> "DenoiseSchedule":
        steps = np.arange(T + 1) / T
        f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
        ab = f / f[0]
        # cap the per-step beta at 0.999 so the last alpha_bar stays positive
        betas = np.clip(1 - ab[1:] / ab[:-1], 0.0, 0.999)
        ab = np.concatenate([[1.0], np.cumprod(1 - betas)])
        sigma = np.zeros(T)
        if stochastic:
            sigma = np.sqrt((1 - ab[:-1]) / (1 - ab[1:]) * (1 - ab[1:] / ab[:-1]))
        return cls(ab, sigma)


@dataclass
class SceneContext:
    ego0: EgoState
    route: np.ndarray
    """M x 2 polyline the ego should follow."""
    neighbor_tracks: dict = field(default_factory=dict)
    neighbor_shapes: dict = field(default_factory=dict)
    rng_seed: int = 0
    cruise_speed: float = 10.0
    horizon: int = HORIZON
    dt: float = DT

    def __post_init__(self):
        self.route = np.asarray(self.route, dtype=float)
        if self.route.ndim != 2 or self.route.shape[0] < 2:
            raise DegenerateRoute("route needs at least two points")


class Denoiser(Protocol):
    def predict_noise(self, tau_t: np.ndarray, t: int, context: SceneContext) -> np.ndarray: ...


def standardize(wp: np.ndarray, origin) -> np.ndarray:
    out = np.array(wp, dtype=float)
    out[..., 0] = (out[..., 0] - origin[0]) / POSITION_SCALE
    out[..., 1] = (out[..., 1] - origin[1]) / POSITION_SCALE
    out[..., 2:] /= HEADING_SCALE
    return out


def destandardize(z: np.ndarray, origin) -> np.ndarray:
    out = np.array(z, dtype=float)
    out[..., 0] = out[..., 0] * POSITION_SCALE + origin[0]
    out[..., 1] = out[..., 1] * POSITION_SCALE + origin[1]
    out[..., 2:] *= HEADING_SCALE
    return out


def _arr(x):
    return x.waypoints if isinstance(x, Trajectory) else np.asarray(x, dtype=float)


def clean_estimate(tau_t, eps, t: int, sched: DenoiseSchedule) -> np.ndarray:
    """Predicted clean trajectory from the noisy iterate and predicted noise."""
    if not 0 <= t <= sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T}]")
    ab = sched.alpha_bar[t]
    return (_arr(tau_t) - math.sqrt(1.0 - ab) * np.asarray(eps)) / math.sqrt(ab)


def reestimate_noise(tau_t, tau0, t: int, sched: DenoiseSchedule) -> np.ndarray:
    ab = sched.alpha_bar[t]
    if ab >= 1.0:
        raise ScheduleEdge(f"alpha_bar[{t}] == 1; noise cannot be re-estimated")
    return (_arr(tau_t) - math.sqrt(ab) * _arr(tau0)) / math.sqrt(1.0 - ab)


def reverse_step(tau0, eps, t: int, sched: DenoiseSchedule, z=None) -> np.ndarray:
    """tau_{t-1} from a clean estimate and a noise estimate."""
    if not 1 <= t <= sched.T:
        raise ValueError(f"t={t} outside [1, {sched.T}]")
    ab_prev = sched.alpha_bar[t - 1]
    out = math.sqrt(ab_prev) * _arr(tau0) + math.sqrt(1.0 - ab_prev) * np.asarray(eps)
    sig = sched.sigma[t - 1]
    if sig > 0.0 and z is not None:
        out = out + sig * np.asarray(z)
    return out


def renoise(tau_t, tau0_corrected, t: int, sched: DenoiseSchedule, z=None) -> np.ndarray:
    """Inject a corrected clean estimate back into the reverse process."""
    if not 1 <= t <= sched.T:
        raise ValueError(f"t={t} outside [1, {sched.T}]")
    eps_hat = reestimate_noise(tau_t, tau0_corrected, t, sched)
    return reverse_step(tau0_corrected, eps_hat, t, sched, z)


Hook = Callable[[np.ndarray, int], "np.ndarray | None"]


def ddpm_sample(denoiser: Denoiser, context: SceneContext, sched: DenoiseSchedule,
                hook: Hook | None = None) -> np.ndarray:
    """Run the reverse process and return the physical K x 4 result.

    ``hook(physical_estimate, t)`` may return a corrected physical clean
    estimate.  Returning None, or the estimate unchanged, keeps the plain
    reverse step with the predicted noise.
    """
    rng = np.random.default_rng(context.rng_seed)
    origin = (context.ego0.x, context.ego0.y)
    tau = rng.standard_normal((context.horizon, 4))
    for t in range(sched.T, 0, -1):
        eps = denoiser.predict_noise(tau, t, context)
        x0 = clean_estimate(tau, eps, t, sched)
        z = rng.standard_normal(tau.shape) if sched.sigma[t - 1] > 0 else None
        corrected = None
        if hook is not None:
            phys = destandardize(x0, origin)
            corrected = hook(phys.copy(), t)
            if corrected is not None and np.array_equal(corrected, phys):
                corrected = None
        if corrected is None:
            tau = reverse_step(x0, eps, t, sched, z)
        else:
            tau = renoise(tau, standardize(corrected, origin), t, sched, z)
    return destandardize(tau, origin)


# ---------------------------------------------------------------- synthetic model


class Route:
    """Arc-length parameterized polyline, extrapolated straight past its end."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise DegenerateRoute("route needs at least two points")
        seg = np.diff(pts, axis=0)
        ln = np.hypot(seg[:, 0], seg[:, 1])
        keep = np.concatenate([[True], ln > 1e-9])
        pts = pts[keep]
        if pts.shape[0] < 2:
            raise DegenerateRoute("route has zero length")
        seg = np.diff(pts, axis=0)
        ln = np.hypot(seg[:, 0], seg[:, 1])
        self.points = pts
        self.cum = np.concatenate([[0.0], np.cumsum(ln)])
        self.tangents = seg / ln[:, None]
        heads = np.arctan2(self.tangents[:, 1], self.tangents[:, 0])
        turn = (np.diff(heads) + np.pi) % (2 * np.pi) - np.pi
        # curvature per segment: turn at the segment's start vertex over the mean length
        kappa = np.zeros(len(ln))
        if len(ln) > 1:
            kappa[1:] = turn / (0.5 * (ln[1:] + ln[:-1]))
        self.kappa = kappa
        self.length = float(self.cum[-1])

    def _index(self, s):
        return np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.tangents) - 1)

    def position(self, s):
        s = np.asarray(s, dtype=float)
        i = self._index(s)
        return self.points[i] + (s - self.cum[i])[..., None] * self.tangents[i]

    def tangent(self, s):
        return self.tangents[self._index(np.asarray(s, dtype=float))]

    def curvature(self, s):
        return self.kappa[self._index(np.asarray(s, dtype=float))]

    def project(self, xy) -> tuple[float, float]:
        """(arc length, signed lateral offset, left positive) of a point."""
        p = np.asarray(xy, dtype=float)
        d = p - self.points[:-1]
        seg_len = np.diff(self.cum)
        w = np.clip(np.einsum("ij,ij->i", d, self.tangents), 0.0, seg_len)
        foot = self.points[:-1] + w[:, None] * self.tangents
        dist = np.hypot(*(p - foot).T)
        i = int(np.argmin(dist))
        t = self.tangents[i]
        lat = -t[1] * (p[0] - foot[i, 0]) + t[0] * (p[1] - foot[i, 1])
        s = self.cum[i] + w[i]
        if i == len(self.tangents) - 1:
            # allow projection beyond the end on the extended last segment
            s = self.cum[i] + float(np.dot(d[i], t))
        return float(s), float(lat)


def nominal_plan(context: SceneContext, accel: float = 1.5, decel: float = 2.0,
                 lat_accel: float = 2.0, settle_time: float = 1.5) -> np.ndarray:
    """Route-following K x 4 plan from the ego's current state.

    Speeds ramp toward the cruise speed, are capped on curved route segments
    by the lateral-acceleration limit, and brake ahead of curves; the ego's
    lateral offset from the route decays exponentially.
    """
    route = Route(context.route)
    K, dt = context.horizon, context.dt
    ego = context.ego0
    s0, lat0 = route.project((ego.x, ego.y))
    # speed profile on a fine arc grid ahead
    reach = max(ego.v, context.cruise_speed) * K * dt + 10.0
    grid = s0 + np.arange(0.0, reach, 0.5)
    kap = np.abs(route.curvature(grid))
    vcap = np.where(kap > 1e-6, np.sqrt(lat_accel / np.maximum(kap, 1e-6)), np.inf)
    vcap = np.minimum(vcap, context.cruise_speed)
    for i in range(len(grid) - 2, -1, -1):
        vcap[i] = min(vcap[i], math.sqrt(vcap[i + 1] ** 2 + 2 * decel * 0.5))
    s = np.empty(K)
    s[0] = s0
    v = ego.v
    for k in range(1, K):
        cap = float(np.interp(s[k - 1], grid, vcap))
        if v < cap:
            v = min(cap, v + accel * dt)
        else:
            v = max(cap, v - decel * dt)
        s[k] = s[k - 1] + v * dt
    pos = route.position(s)
    tan = route.tangent(s)
    normal = np.column_stack([-tan[:, 1], tan[:, 0]])
    lat = lat0 * np.exp(-np.arange(K) * dt / settle_time)
    pos = pos + lat[:, None] * normal
    wp = np.column_stack([pos, tan])
    wp[0] = [ego.x, ego.y, math.cos(ego.theta), math.sin(ego.theta)]
    return wp


class SyntheticDenoiser:
    """Stand-in for a trained noise-prediction network.

    Predicts the noise that maps the iterate onto the route-following
    nominal plan, with a smooth seeded lateral perturbation whose size
    shrinks with the noise level: ``perturbation * (1 - alpha_bar_t)``
    meters at the peak.
    """

    def __init__(self, context: SceneContext, sched: DenoiseSchedule, perturbation: float = 0.2):
        self.sched = sched
        self.perturbation = float(perturbation)
        self.origin = (context.ego0.x, context.ego0.y)
        self.seed = int(context.rng_seed)
        self.nominal = nominal_plan(context)
        self._nominal_std = standardize(self.nominal, self.origin)
        heads = self.nominal[:, 2:4]
        self._normal = np.column_stack([-heads[:, 1], heads[:, 0]])

    def field(self, t: int) -> np.ndarray:
        """Smooth unit-amplitude field over the horizon for step t."""
        K = self.nominal.shape[0]
        rng = np.random.default_rng([self.seed, t])
        u = np.arange(K) / (K - 1)
        amp = rng.normal(size=3) / np.sqrt(3.0)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        freq = np.array([0.5, 1.0, 1.5])
        f = (amp[:, None] * np.sin(2 * np.pi * freq[:, None] * u[None] + phase[:, None])).sum(axis=0)
        return f * u  # the first waypoint stays on the ego

    def clean_target(self, t: int) -> np.ndarray:
        target = self._nominal_std
        if self.perturbation > 0.0:
            lat = self.perturbation * (1.0 - self.sched.alpha_bar[t]) * self.field(t)
            target = target.copy()
            target[:, 0:2] += lat[:, None] * self._normal / POSITION_SCALE
        return target

    def predict_noise(self, tau_t, t, context=None):
        ab = self.sched.alpha_bar[t]
        return (np.asarray(tau_t) - math.sqrt(ab) * self.clean_target(t)) / math.sqrt(1.0 - ab)


def synthetic_denoiser(context: SceneContext, sched: DenoiseSchedule | None = None,
                       perturbation: float = 0.2) -> SyntheticDenoiser:
    return SyntheticDenoiser(context, sched or DenoiseSchedule.cosine(), perturbation)
