import math
import time

import numpy as np
import pytest

from barrierdiff.dynamics import EgoState, VehicleShape
from barrierdiff.geometry import (Capsule, NonUniqueMinimizer, Segment, ZeroDistance, capsule_distance,
                                  distance_gradient, ego_capsule, segment_distance)

from oracles import grid_error_bound, grid_segment_distance, point_segment_distance, rear_axle_axis


def seg(p, q):
    return Segment(np.array(p, float), np.array(q, float))


def test_parallel_offset():
    cp = segment_distance(seg((0, 0), (4, 0)), seg((0, 3), (4, 3)))
    assert cp.distance == pytest.approx(3.0)
    np.testing.assert_allclose(cp.direction, [0.0, -1.0])
    assert cp.non_unique


def test_endpoint_to_endpoint():
    cp = segment_distance(seg((0, 0), (2, 0)), seg((3, 1), (5, 1)))
    assert cp.s_star == 1.0 and cp.r_star == 0.0
    assert cp.distance == pytest.approx(math.sqrt(2.0), abs=1e-15)
    assert not cp.non_unique


def test_crossing_segments_touch():
    cp = segment_distance(seg((-1, 0), (1, 0)), seg((0, -1), (0, 1)))
    assert cp.distance == 0.0
    assert cp.direction is None
    assert cp.s_star == pytest.approx(0.5) and cp.r_star == pytest.approx(0.5)


def test_degenerate_point_segment():
    cp = segment_distance(seg((1, 1), (1, 1)), seg((0, 0), (4, 0)))
    assert cp.distance == pytest.approx(1.0)
    assert cp.r_star == pytest.approx(0.25)
    cp = segment_distance(seg((1, 1), (1, 1)), seg((4, 5), (4, 5)))
    assert cp.distance == pytest.approx(5.0)


def test_parallel_overlap_tie_break():
    cp = segment_distance(seg((0, 0), (4, 0)), seg((2, 1), (6, 1)))
    assert cp.non_unique
    assert cp.distance == pytest.approx(1.0)
    # smallest s among all minimizers
    assert cp.s_star == pytest.approx(0.5)
    assert cp.r_star == pytest.approx(0.0)


def test_distance_matches_reported_pair():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = seg(*rng.uniform(-10, 10, (2, 2)))
        b = seg(*rng.uniform(-10, 10, (2, 2)))
        cp = segment_distance(a, b)
        assert 0.0 <= cp.s_star <= 1.0 and 0.0 <= cp.r_star <= 1.0
        gap = a.point(cp.s_star) - b.point(cp.r_star)
        assert cp.distance == pytest.approx(float(np.hypot(*gap)), abs=1e-12)
        if cp.direction is not None:
            assert np.hypot(*cp.direction) == pytest.approx(1.0)


def test_grid_oracle_100_pairs():
    rng = np.random.default_rng(11)
    for _ in range(100):
        p1, q1, p2, q2 = rng.uniform(-10, 10, (4, 2))
        d = segment_distance(seg(p1, q1), seg(p2, q2)).distance
        g = grid_segment_distance(p1, q1, p2, q2)
        # the grid never undercuts the closed form
        assert g >= d - 1e-12
        assert g - d <= grid_error_bound(p1, q1, p2, q2) + 1e-12


def test_near_parallel_branches():
    rng = np.random.default_rng(5)
    for eps in (1e-3, 1e-6, 1e-9, 1e-12):
        for _ in range(20):
            p1 = rng.uniform(-5, 5, 2)
            d = rng.normal(size=2)
            d /= np.hypot(*d)
            q1 = p1 + 4 * d
            nrm = np.array([-d[1], d[0]])
            p2 = p1 + rng.uniform(-3, 3) * d + rng.uniform(0.1, 2) * nrm
            q2 = p2 + 4 * (d + eps * nrm)
            got = segment_distance(seg(p1, q1), seg(p2, q2)).distance
            ref = min(point_segment_distance(p1, p2, q2), point_segment_distance(q1, p2, q2),
                      point_segment_distance(p2, p1, q1), point_segment_distance(q2, p1, q1))
            assert got == pytest.approx(ref, abs=1e-9)


def test_symmetry_translation_rotation():
    rng = np.random.default_rng(7)
    for _ in range(300):
        p1, q1, p2, q2 = rng.uniform(-10, 10, (4, 2))
        d = segment_distance(seg(p1, q1), seg(p2, q2)).distance
        assert segment_distance(seg(p2, q2), seg(p1, q1)).distance == pytest.approx(d, abs=1e-12)
        t = rng.uniform(-50, 50, 2)
        moved = segment_distance(seg(p1 + t, q1 + t), seg(p2 + t, q2 + t)).distance
        assert moved == pytest.approx(d, abs=1e-12)
        ang = rng.uniform(-math.pi, math.pi)
        c0 = rng.uniform(-20, 20, 2)
        R = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
        rot = [c0 + R @ (v - c0) for v in (p1, q1, p2, q2)]
        assert segment_distance(seg(rot[0], rot[1]), seg(rot[2], rot[3])).distance == pytest.approx(d, abs=1e-9)


def test_capsule_distance_examples():
    a = Capsule(seg((0, 0), (4, 0)), 1.0)
    b = Capsule(seg((0, 3), (4, 3)), 0.9)
    assert capsule_distance(a, b) == pytest.approx(1.1)
    assert capsule_distance(a, Capsule(seg((0, 0), (4, 0)), 1.0)) == pytest.approx(-2.0)


def test_capsule_distance_boundary_sampling():
    rng = np.random.default_rng(13)

    def boundary(p, q, r, n=720):
        # dense sample of the capsule outline: two caps plus the straight sides
        p, q = np.asarray(p), np.asarray(q)
        ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
        circle = r * np.column_stack([np.cos(ang), np.sin(ang)])
        t = np.linspace(0, 1, n)[:, None]
        d = q - p
        L = np.hypot(*d)
        nrm = np.array([-d[1], d[0]]) / L if L > 0 else np.array([0.0, 1.0])
        sides = np.vstack([p + t * d + r * nrm, p + t * d - r * nrm])
        pts = np.vstack([p + circle, q + circle, sides])
        # keep only outline points (not inside the capsule)
        keep = [point_segment_distance(x, p, q) >= r - 1e-9 for x in pts]
        return pts[keep]

    for _ in range(20):
        p1, q1 = rng.uniform(-5, 5, (2, 2))
        p2, q2 = rng.uniform(-5, 5, (2, 2)) + np.array([12.0, 0.0])
        r1, r2 = rng.uniform(0.3, 1.5, 2)
        d = capsule_distance(Capsule(seg(p1, q1), r1), Capsule(seg(p2, q2), r2))
        A, B = boundary(p1, q1, r1), boundary(p2, q2, r2)
        brute = np.min(np.hypot(A[:, None, 0] - B[None, :, 0], A[:, None, 1] - B[None, :, 1]))
        assert brute >= d - 1e-9
        assert brute - d <= 0.02 * max(r1, r2) + 0.02


def test_invalid_inputs():
    with pytest.raises(ValueError):
        Capsule(seg((0, 0), (1, 0)), 0.0)
    with pytest.raises(ValueError):
        seg((0, np.nan), (1, 0))


def test_ego_capsule_rear_axle_reference():
    shape = VehicleShape()
    cap = ego_capsule(EgoState(1.0, 2.0, 0.3), shape)
    p, q = rear_axle_axis(1.0, 2.0, 0.3, shape.axis_length, shape.wheelbase)
    np.testing.assert_allclose(cap.axis.p, p, atol=1e-14)
    np.testing.assert_allclose(cap.axis.q, q, atol=1e-14)
    assert cap.half_width == shape.half_width


def test_gradient_straight_ahead():
    ahead = Capsule(seg((20, 0), (24.6, 0)), 1.0)
    g = distance_gradient(EgoState(0, 0, 0.0, 0.1, 7.0), VehicleShape(), ahead)
    np.testing.assert_allclose(g[:2], [-1.0, 0.0], atol=1e-12)
    assert g[3] == 0.0 and g[4] == 0.0


def _fd_gradient(state, shape, other, h=1e-5):
    out = np.zeros(3)
    base = np.array([state.x, state.y, state.theta])
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        hi = EgoState(*(base + e), state.delta, state.v)
        lo = EgoState(*(base - e), state.delta, state.v)
        out[i] = (capsule_distance(ego_capsule(hi, shape), other)
                  - capsule_distance(ego_capsule(lo, shape), other)) / (2 * h)
    return out


def random_gradient_configs(n, seed):
    """Non-degenerate (separated, clearly non-parallel) ego/other pairs."""
    rng = np.random.default_rng(seed)
    shape = VehicleShape()
    out = []
    while len(out) < n:
        st = EgoState(*rng.uniform(-10, 10, 2), rng.uniform(-math.pi, math.pi), rng.uniform(-0.5, 0.5), 5.0)
        c = rng.uniform(-15, 15, 2)
        ang = rng.uniform(-math.pi, math.pi)
        d = rng.uniform(2.0, 5.0) * np.array([math.cos(ang), math.sin(ang)])
        other = Capsule(seg(c, c + d), 1.0)
        ep, eq = rear_axle_axis(st.x, st.y, st.theta, shape.axis_length, shape.wheelbase)
        e_dir = np.subtract(eq, ep)
        sin_rel = abs(e_dir[0] * d[1] - e_dir[1] * d[0]) / (np.hypot(*e_dir) * np.hypot(*d))
        cp = segment_distance(seg(ep, eq), other.axis)
        if cp.distance < 0.5 or sin_rel < 0.05:
            continue
        # keep the minimizer away from the kinks where it jumps between endpoints
        if 1e-3 < cp.s_star < 1 - 1e-3 and 1e-3 < cp.r_star < 1 - 1e-3:
            continue
        out.append((st, shape, other))
    return out


def test_gradient_matches_finite_differences():
    for st, shape, other in random_gradient_configs(200, 17):
        g = distance_gradient(st, shape, other)
        fd = _fd_gradient(st, shape, other)
        np.testing.assert_allclose(g[:3], fd, rtol=1e-4, atol=1e-4 * max(1.0, np.max(np.abs(fd))))
        assert g[3] == 0.0 and g[4] == 0.0


def test_gradient_errors():
    shape = VehicleShape()
    st = EgoState(0, 0, 0)
    p, q = rear_axle_axis(0, 0, 0, shape.axis_length, shape.wheelbase)
    with pytest.raises(NonUniqueMinimizer):
        distance_gradient(st, shape, Capsule(seg((p[0], 3.0), (q[0], 3.0)), 1.0))
    with pytest.raises(ZeroDistance):
        distance_gradient(st, shape, Capsule(seg((1.0, -2.0), (1.0, 2.0)), 1.0))
