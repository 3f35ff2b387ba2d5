import numpy as np
import pytest

from linemap.geometry import (
    CameraView,
    PluckerLine,
    Segment2D,
    Segment3D,
    point_to_infinite_line_2d,
    project_line,
    project_segment,
)
from linemap.triangulation import (
    CheiralityError,
    DegenerateTriangulationError,
    FullyDegenerateError,
    WeaklyDegenerateError,
    check_degeneracy,
    solve_constrained_quadratic,
    triangulate_algebraic,
    triangulate_line_point,
    triangulate_line_vp,
    triangulate_multipoint,
    weak_epipolar_iou,
)

from support import identity_view, intrinsics, random_two_view_segment, weak_degenerate_pair


def side_by_side_views():
    ref = identity_view()
    match = CameraView(intrinsics(), np.eye(3), np.array([-1.0, 0.0, 0.0]), 640, 480)
    return ref, match


def grid_min_on_constraint(A, b, Q, q, span=20.0, n=4001):
    """Dense sweep oracle: scan one depth, solve the constraint for the other."""
    best = np.inf
    for axis in (0, 1):
        xs = np.linspace(-span, span, n)
        i, j = (0, 1) if axis == 0 else (1, 0)
        aa = Q[j, j]
        bb = 2 * Q[i, j] * xs + q[j]
        cc = Q[i, i] * xs**2 + q[i] * xs
        for k in range(n):
            if abs(aa) < 1e-14:
                ys = [-cc[k] / bb[k]] if abs(bb[k]) > 1e-14 else []
            else:
                disc = bb[k] * bb[k] - 4 * aa * cc[k]
                ys = [(-bb[k] + s * np.sqrt(disc)) / (2 * aa) for s in (1, -1)] if disc >= 0 else []
            for y in ys:
                lam = np.empty(2)
                lam[i], lam[j] = xs[k], y
                best = min(best, float(lam @ A @ lam + b @ lam))
    return best


# ---------------------------------------------------------------------------
# algebraic two-view triangulation
# ---------------------------------------------------------------------------


def test_axis_aligned_segment_recovers_exact_depths():
    ref, match = side_by_side_views()
    gt = Segment3D(np.array([0.0, 0.0, 2.0]), np.array([0.0, 1.0, 2.0]))
    seg = triangulate_algebraic(
        project_segment(gt, ref), ref, project_segment(gt, match), match
    )
    np.testing.assert_allclose(seg.start, gt.start, atol=1e-12)
    np.testing.assert_allclose(seg.end, gt.end, atol=1e-12)


def test_segment_parallel_to_baseline_is_fully_degenerate():
    ref, match = side_by_side_views()
    gt = Segment3D(np.array([0.0, 0.0, 2.0]), np.array([1.0, 0.0, 2.0]))
    with pytest.raises(FullyDegenerateError):
        triangulate_algebraic(project_segment(gt, ref), ref, project_segment(gt, match), match)


def test_exact_fit_on_random_pairs():
    rng = np.random.default_rng(21)
    for _ in range(100):
        ref, match, gt, s_r, s_m = random_two_view_segment(rng)
        seg = triangulate_algebraic(s_r, ref, s_m, match)
        scale = max(np.linalg.norm(gt.start), np.linalg.norm(gt.end))
        assert np.linalg.norm(seg.start - gt.start) < 1e-7 * scale
        assert np.linalg.norm(seg.end - gt.end) < 1e-7 * scale
        # reprojection sits on the matched infinite line
        l2d = project_line(PluckerLine.from_two_points(seg.start, seg.end), match)
        for p in (s_m.start, s_m.end):
            assert point_to_infinite_line_2d(p, l2d) < 1e-8


def test_behind_camera_raises_cheirality():
    ref, match = side_by_side_views()
    # rays of a segment in front, but matched observation consistent with a
    # segment behind the cameras: mirror the matched view's segment
    gt = Segment3D(np.array([0.2, 0.0, 3.0]), np.array([0.2, 0.8, 3.0]))
    gt_back = Segment3D(-gt.start, -gt.end)
    s_r = project_segment(gt, ref)
    # matched segment consistent only with the reflected (behind) segment
    y1 = intrinsics() @ (np.eye(3) @ gt_back.start + match.t)
    y2 = intrinsics() @ (np.eye(3) @ gt_back.end + match.t)
    s_m = Segment2D(y1[:2] / y1[2], y2[:2] / y2[2])
    with pytest.raises(CheiralityError):
        triangulate_algebraic(s_r, ref, s_m, match)


def test_check_degeneracy_threshold():
    n = np.array([0.0, 0.0, 1.0])
    in_plane = np.array([1.0, 0.0, 0.0])
    assert check_degeneracy(in_plane, n, 1.0)
    tilted = np.array([np.cos(np.radians(2.0)), 0.0, np.sin(np.radians(2.0))])
    assert not check_degeneracy(tilted, n, 1.0)
    assert check_degeneracy(tilted, n, 3.0)


# ---------------------------------------------------------------------------
# multi-point triangulation
# ---------------------------------------------------------------------------


def test_multipoint_recovers_segment_through_exact_points():
    rng = np.random.default_rng(22)
    for _ in range(50):
        ref, match, gt, s_r, _ = random_two_view_segment(rng)
        line = PluckerLine.from_two_points(gt.start, gt.end)
        ts = rng.uniform(-1.0, 1.0, size=rng.integers(2, 6))
        pts = np.stack([gt.midpoint + t * line.d for t in ts])
        if np.ptp(ts) < 0.2:
            continue
        seg = triangulate_multipoint(s_r, ref, pts)
        np.testing.assert_allclose(seg.start, gt.start, atol=1e-8)
        np.testing.assert_allclose(seg.end, gt.end, atol=1e-8)


def test_multipoint_rejects_coincident_points():
    ref, _ = side_by_side_views()
    seg2d = Segment2D(np.array([300.0, 200.0]), np.array([340.0, 260.0]))
    pts = np.tile(np.array([0.1, 0.2, 3.0]), (4, 1))
    with pytest.raises(DegenerateTriangulationError):
        triangulate_multipoint(seg2d, ref, pts)


def test_multipoint_needs_two_points():
    ref, _ = side_by_side_views()
    seg2d = Segment2D(np.array([300.0, 200.0]), np.array([340.0, 260.0]))
    with pytest.raises(Exception):
        triangulate_multipoint(seg2d, ref, np.array([[0.1, 0.2, 3.0]]))


# ---------------------------------------------------------------------------
# constrained quadratic solver
# ---------------------------------------------------------------------------


def test_linear_constraint_pins_first_coordinate():
    sols = solve_constrained_quadratic(np.eye(2), np.zeros(2), np.zeros((2, 2)), np.array([1.0, 0.0]))
    assert len(sols) == 1
    np.testing.assert_allclose(sols[0].lam, [0.0, 0.0], atol=1e-12)


def test_solver_matches_grid_oracle():
    rng = np.random.default_rng(23)
    for _ in range(50):
        G = rng.normal(size=(2, 2))
        A = G.T @ G + 0.1 * np.eye(2)
        b = rng.normal(size=2)
        S = rng.normal(size=(2, 2))
        Q = 0.5 * (S + S.T)
        q = rng.normal(size=2)
        sols = solve_constrained_quadratic(A, b, Q, q)
        assert sols, "expected at least one stationary point"
        for s in sols:
            assert abs(s.lam @ Q @ s.lam + q @ s.lam) < 1e-6 * max(1.0, np.abs(s.lam).max() ** 2)
        assert sols[0].cost <= grid_min_on_constraint(A, b, Q, q) + 1e-4


# ---------------------------------------------------------------------------
# point- and direction-constrained triangulation
# ---------------------------------------------------------------------------


def test_line_point_recovers_exact_geometry():
    rng = np.random.default_rng(24)
    for _ in range(50):
        ref, match, gt, s_r, s_m = random_two_view_segment(rng)
        w = rng.uniform(0.2, 0.8)
        on_line = (1 - w) * gt.start + w * gt.end
        seg = triangulate_line_point(s_r, ref, s_m, match, on_line)
        scale = max(1.0, np.linalg.norm(gt.start))
        assert np.linalg.norm(seg.start - gt.start) < 1e-7 * scale
        assert np.linalg.norm(seg.end - gt.end) < 1e-7 * scale


def test_line_vp_recovers_exact_geometry():
    rng = np.random.default_rng(25)
    for _ in range(50):
        ref, match, gt, s_r, s_m = random_two_view_segment(rng)
        vp_ref = ref.R @ gt.direction  # direction expressed in the reference camera
        seg = triangulate_line_vp(s_r, ref, s_m, match, vp_ref)
        scale = max(1.0, np.linalg.norm(gt.start))
        assert np.linalg.norm(seg.start - gt.start) < 1e-7 * scale
        assert np.linalg.norm(seg.end - gt.end) < 1e-7 * scale


def test_line_vp_rejects_direction_out_of_ray_plane():
    rng = np.random.default_rng(26)
    ref, match, gt, s_r, s_m = random_two_view_segment(rng)
    x1 = ref.pixel_to_normalized(s_r.start)
    x2 = ref.pixel_to_normalized(s_r.end)
    vp = np.cross(x1, x2)  # perpendicular to the plane of the reference rays
    with pytest.raises(DegenerateTriangulationError):
        triangulate_line_vp(s_r, ref, s_m, match, vp / np.linalg.norm(vp))


# ---------------------------------------------------------------------------
# weak degeneracy rescue
# ---------------------------------------------------------------------------


def test_weak_degeneracy_detected_and_rescued():
    rng = np.random.default_rng(27)
    for _ in range(25):
        ref, match, gt, s_r, s_m = weak_degenerate_pair(rng)
        with pytest.raises(WeaklyDegenerateError):
            triangulate_algebraic(s_r, ref, s_m, match)
        w = rng.uniform(0.3, 0.7)
        on_line = (1 - w) * gt.start + w * gt.end
        by_point = triangulate_line_point(s_r, ref, s_m, match, on_line)
        by_vp = triangulate_line_vp(s_r, ref, s_m, match, ref.R @ gt.direction)
        for seg in (by_point, by_vp):
            assert np.linalg.norm(seg.start - gt.start) < 1e-3
            assert np.linalg.norm(seg.end - gt.end) < 1e-3


# ---------------------------------------------------------------------------
# epipolar interval overlap
# ---------------------------------------------------------------------------


def test_consistent_match_has_full_overlap():
    rng = np.random.default_rng(28)
    for _ in range(20):
        ref, match, gt, s_r, s_m = random_two_view_segment(rng)
        assert weak_epipolar_iou(s_r, ref, s_m, match) > 1 - 1e-6


def test_half_segment_overlap_is_half():
    rng = np.random.default_rng(29)
    ref, match, gt, s_r, s_m = random_two_view_segment(rng)
    half = Segment2D(s_m.midpoint, s_m.end)
    assert weak_epipolar_iou(s_r, ref, half, match) == pytest.approx(0.5, abs=1e-9)


def test_displaced_match_overlap_drops():
    rng = np.random.default_rng(30)
    ref, match, gt, s_r, s_m = random_two_view_segment(rng)
    d = s_m.end - s_m.start
    shifted = Segment2D(s_m.start + 2.5 * d, s_m.end + 2.5 * d)
    assert weak_epipolar_iou(s_r, ref, shifted, match) < 0.1


def test_no_baseline_overlap_is_zero():
    ref = identity_view()
    twin = CameraView(intrinsics(), np.eye(3), np.zeros(3), 640, 480)
    seg = Segment2D(np.array([100.0, 100.0]), np.array([300.0, 200.0]))
    assert weak_epipolar_iou(seg, ref, seg, twin) == 0.0
