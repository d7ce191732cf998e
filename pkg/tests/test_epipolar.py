import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epigraph_splat import epipolar as ep
from epigraph_splat import synthetic
from epigraph_splat.errors import (
    ContractError,
    DegenerateGeometryError,
    DegeneratePairError,
    InvalidCameraError,
    NumericalFailureError,
    UnknownViewError,
)

from conftest import make_view


def _exact_pairs(views, X):
    return [v.project(X) for v in views]


# ---------------------------------------------------------------- cameras


def test_intrinsics_matrix_upper_triangular():
    K = ep.CameraIntrinsics(500.0, 510.0, 320.0, 240.0, skew=0.5).K
    assert np.allclose(np.tril(K, -1), 0.0)
    assert K[2, 2] == 1.0


@pytest.mark.parametrize("fx,fy", [(0.0, 1.0), (1.0, -2.0)])
def test_intrinsics_reject_nonpositive_focal(fx, fy):
    with pytest.raises(InvalidCameraError):
        ep.CameraIntrinsics(fx, fy, 0.0, 0.0)


def test_pose_rejects_non_rotation():
    with pytest.raises(InvalidCameraError):
        ep.CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(InvalidCameraError):
        ep.CameraPose(np.eye(3) * 1.001, np.zeros(3))


def test_projection_matrix_rank(desk_rig):
    for v in desk_rig:
        assert v.P.shape == (3, 4)
        assert np.linalg.matrix_rank(v.P) == 3


# ---------------------------------------------------------------- F


def test_pure_translation_F_is_cross_matrix(unit_rig):
    F = ep.fundamental_matrix(*unit_rig)
    expected = np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float)
    scale = F[2, 1] / expected[2, 1]
    assert np.allclose(F, scale * expected, atol=1e-15)


def test_exact_pair_satisfies_constraint(rng):
    X = np.array([0.3, -0.2, 5.0])
    Rb = synthetic.look_at((0.7, -0.1, -0.05), X, up=(0.0, -1.0, 0.0)).R
    views = [
        make_view("a", f=600.0, c=(320, 240)),
        make_view("b", R=Rb, t=-Rb @ np.array([0.7, -0.1, -0.05]), f=650.0, c=(310, 250)),
    ]
    F = ep.fundamental_matrix(*views)
    x1, x2 = _exact_pairs(views, X)
    assert abs(np.append(x2, 1) @ F @ np.append(x1, 1)) < 1e-9


def test_rank_two_against_svd_oracle(desk_rig):
    F = ep.fundamental_matrix(*desk_rig)
    s = np.linalg.svd(F, compute_uv=False)
    assert s[2] / s[0] < 1e-12
    assert s[1] / s[0] > 1e-6


def test_identical_cameras_are_degenerate(unit_rig):
    with pytest.raises(DegeneratePairError):
        ep.fundamental_matrix(unit_rig[0], unit_rig[0])


# ---------------------------------------------------------------- residuals


def _rectified_rig(f=500.0):
    return [
        make_view("L", f=f, c=(320.0, 240.0)),
        make_view("R", t=(-0.3, 0.0, 0.0), f=f, c=(320.0, 240.0)),
    ]


def test_exact_correspondence_residuals_vanish(desk_rig, rng):
    F = ep.fundamental_matrix(*desk_rig)
    X = synthetic.sample_visible_points(rng, desk_rig, 20)
    for x1, x2 in zip(*_exact_pairs(desk_rig, X)):
        r = ep.epipolar_residuals(F, ep.Correspondence("0", x1, "1", x2))
        assert abs(r.algebraic) < 1e-9 and abs(r.sampson) < 1e-9 and not r.degenerate


@pytest.mark.parametrize("d", [1.0, 2.5, 10.0])
def test_sampson_perpendicular_offset_on_rectified_rig(d):
    # Closed form on a rectified rig: epipolar lines are image rows, the
    # algebraic residual is c*d and the four gradient terms sum to 2c^2.
    views = _rectified_rig()
    F = ep.fundamental_matrix(*views)
    X = np.array([0.1, -0.05, 3.0])
    x1, x2 = _exact_pairs(views, X)
    r = ep.epipolar_residuals(F, ep.Correspondence("L", x1, "R", x2 + np.array([0.0, d])))
    assert r.sampson == pytest.approx(d * d / 2.0, rel=1e-12)


def test_offset_along_epipolar_line_keeps_constraint():
    views = _rectified_rig()
    F = ep.fundamental_matrix(*views)
    x1, x2 = _exact_pairs(views, np.array([0.1, -0.05, 3.0]))
    r = ep.epipolar_residuals(F, ep.Correspondence("L", x1, "R", x2 + np.array([7.0, 0.0])))
    assert abs(r.algebraic) < 1e-9


def test_degenerate_denominator_flags_infinity():
    r = ep.epipolar_residuals(np.zeros((3, 3)), ep.Correspondence("a", (1, 2), "b", (3, 4)))
    assert r.degenerate and r.sampson == np.inf


@settings(max_examples=50, deadline=None)
@given(c=st.floats(min_value=1e-6, max_value=1e6) | st.floats(min_value=-1e6, max_value=-1e-6),
       du=st.floats(-20, 20), dv=st.floats(-20, 20))
def test_sampson_is_scale_invariant(c, du, dv):
    views = _rectified_rig()
    F = ep.fundamental_matrix(*views)
    x1, x2 = _exact_pairs(views, np.array([0.2, 0.1, 4.0]))
    corr = ep.Correspondence("L", x1, "R", x2 + np.array([du, dv]))
    a = ep.epipolar_residuals(F, corr).sampson
    b = ep.epipolar_residuals(c * F, corr).sampson
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


# ---------------------------------------------------------------- DLT


def test_dlt_round_trip_unit_rig(unit_rig):
    X = np.array([0.0, 0.0, 5.0])
    Xe = ep.triangulate_dlt(unit_rig, _exact_pairs(unit_rig, X))
    assert np.allclose(Xe, X, atol=1e-9, rtol=0)


def test_dlt_view_order_invariance(rng):
    views = synthetic.random_rig(rng, 3)
    X = synthetic.sample_visible_points(rng, views, 1)[0]
    px = _exact_pairs(views, X)
    ref = ep.triangulate_dlt(views, px)
    for perm in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
        got = ep.triangulate_dlt([views[i] for i in perm], [px[i] for i in perm])
        assert np.max(np.abs(got - ref)) < 1e-9


def test_dlt_identical_cameras_degenerate(unit_rig):
    X = np.array([0.0, 0.0, 5.0])
    v = unit_rig[0]
    with pytest.raises(DegenerateGeometryError):
        ep.triangulate_dlt([v, v], _exact_pairs([v, v], X))


def test_dlt_needs_two_views(unit_rig):
    with pytest.raises(ContractError):
        ep.triangulate_dlt(unit_rig[:1], [(0.0, 0.0)])


# ---------------------------------------------------------------- refinement


def test_jacobian_matches_central_differences(desk_rig, rng):
    X = synthetic.sample_visible_points(rng, desk_rig, 1)[0]
    J = ep.reprojection_jacobian(X, desk_rig)
    h = 1e-6
    num = np.zeros_like(J)
    for d in range(3):
        e = np.zeros(3)
        e[d] = h
        fp = np.concatenate([v.project(X + e) for v in desk_rig])
        fm = np.concatenate([v.project(X - e) for v in desk_rig])
        num[:, d] = (fp - fm) / (2 * h)
    assert np.allclose(J, num, rtol=1e-6, atol=1e-6)


def test_refine_exact_pixels_from_dlt(backend, desk_rig, rng):
    X = synthetic.sample_visible_points(rng, desk_rig, 1)[0]
    px = _exact_pairs(desk_rig, X)
    p = ep.refine_reprojection(ep.triangulate_dlt(desk_rig, px), desk_rig, px)
    assert p.reprojection_rmse < 1e-9
    assert np.max(np.abs(p.position - X)) < 1e-9


def test_refine_descends_from_displaced_start(backend, desk_rig, rng):
    X = synthetic.sample_visible_points(rng, desk_rig, 1)[0]
    px = _exact_pairs(desk_rig, X)
    d = rng.standard_normal(3)
    x0 = X + 0.1 * d / np.linalg.norm(d)
    p = ep.refine_reprojection(x0, desk_rig, px)
    hist = np.array(p.objective_history)
    assert hist[-1] < hist[0]
    assert np.all(np.diff(hist) <= 0)
    assert p.iterations <= 50
    assert np.max(np.abs(p.position - X)) < 1e-8


def test_refine_rejects_start_behind_all_cameras(unit_rig):
    with pytest.raises(ContractError):
        ep.refine_reprojection([0.0, 0.0, -5.0], unit_rig, [(0.0, 0.0), (-0.2, 0.0)])


def test_refine_numerical_failure_carries_iterate():
    # x0 sits on the principal plane of view b: zero depth, non-finite objective
    Rb = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    views = [make_view("a"), make_view("b", R=Rb, t=(0.0, 0.0, 0.0))]
    x0 = np.array([0.0, 0.0, 1.0])
    assert views[1].depth(x0) == 0.0
    with pytest.raises(NumericalFailureError) as info:
        ep.refine_reprojection(x0, views, [(0.0, 0.0), (0.0, 0.0)])
    assert np.array_equal(info.value.last_iterate, x0)


def _grid_search_minimizer(views, px, center, half_width, levels=8, n=9):
    """Coarse-to-fine exhaustive search of the reprojection objective (oracle)."""
    best = np.asarray(center, dtype=float)
    w = half_width
    for _ in range(levels):
        ax = np.linspace(-w, w, n)
        grid = best + np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
        obj = sum(np.sum((v.project(grid) - x) ** 2, axis=1) for v, x in zip(views, px))
        best = grid[np.argmin(obj)]
        w = 2 * w / (n - 1)
    return best


def test_refine_noisy_matches_grid_search_oracle(backend, rng):
    views = synthetic.random_rig(rng, 2)
    X_true = synthetic.sample_visible_points(rng, views, 100)
    noisy = [v.project(X_true) + rng.normal(0.0, 0.5, (100, 2)) for v in views]
    errs_gn, errs_oracle = [], []
    for i in range(100):
        px = [noisy[0][i], noisy[1][i]]
        p = ep.refine_reprojection(ep.triangulate_dlt(views, px), views, px)
        oracle = _grid_search_minimizer(views, px, X_true[i], 0.2)
        errs_gn.append(np.linalg.norm(p.position - X_true[i]))
        errs_oracle.append(np.linalg.norm(oracle - X_true[i]))
        assert ep.reprojection_objective(p.position, views, px) <= ep.reprojection_objective(oracle, views, px) + 1e-9
    assert np.mean(errs_gn) < 5 * np.mean(errs_oracle)


# ---------------------------------------------------------------- point cloud


def _corrs(views, X, offsets=None):
    x1, x2 = _exact_pairs(views, X)
    if offsets is not None:
        x2 = x2 + offsets
    return [ep.Correspondence(views[0].id, a, views[1].id, b) for a, b in zip(x1, x2)]


def test_build_point_cloud_all_exact_inliers(backend, desk_rig, rng):
    X = synthetic.sample_visible_points(rng, desk_rig, 50)
    pts = ep.build_point_cloud(_corrs(desk_rig, X), desk_rig, 2.0)
    assert sum(p.inlier for p in pts) == 50
    assert np.allclose([p.position for p in pts], X, atol=1e-8)


def _off_line_offset(view1, view2, x1, x2, d):
    F = ep.fundamental_matrix(view1, view2)
    line = F @ np.append(x1, 1.0)
    n = line[:2] / np.linalg.norm(line[:2])
    return d * n


def test_build_point_cloud_flags_off_line_outlier(backend, desk_rig, rng):
    X = synthetic.sample_visible_points(rng, desk_rig, 2)
    x1, x2 = _exact_pairs(desk_rig, X)
    off = np.zeros((2, 2))
    off[1] = _off_line_offset(*desk_rig, x1[1], x2[1], 10.0)
    corrs = _corrs(desk_rig, X, off)
    # closed-form oracle: Sampson of the displaced pair exceeds the threshold
    F = ep.fundamental_matrix(*desk_rig)
    assert ep.epipolar_residuals(F, corrs[1]).sampson > 2.0
    pts = ep.build_point_cloud(corrs, desk_rig, 2.0)
    assert [p.inlier for p in pts] == [True, False]


def test_point_behind_camera_is_outlier():
    # camera b looks back toward camera a: a point in front of a only
    Rb = np.diag([-1.0, 1.0, -1.0])
    views = [make_view("a", f=500.0, c=(500, 500)), make_view("b", R=Rb, t=(0.0, 0.0, 10.0), f=500.0, c=(500, 500))]
    X = np.array([[0.1, 0.2, 12.0]])  # behind b (depth in b = -12 + 10 < 0)
    assert views[1].depth(X[0]) < 0
    pts = ep.build_point_cloud(_corrs(views, X), views, 2.0)
    assert not pts[0].inlier
    assert pts[0].sampson_residual < 1e-9


def test_build_point_cloud_preserves_order(backend, desk_rig, rng):
    X = synthetic.sample_visible_points(rng, desk_rig, 30)
    corrs = _corrs(desk_rig, X)
    pts = ep.build_point_cloud(corrs, {v.id: v for v in desk_rig})
    assert [p.source for p in pts] == corrs


def test_build_point_cloud_empty_and_unknown(desk_rig):
    assert ep.build_point_cloud([], desk_rig) == []
    with pytest.raises(UnknownViewError) as info:
        ep.build_point_cloud([ep.Correspondence("0", (1, 1), "99", (1, 1))], desk_rig)
    assert "99" in str(info.value)
