"""Two-view epipolar geometry and point triangulation.

Cameras follow the world-to-camera convention ``x_cam = R @ x_world + t``
and project with ``P = K @ [R | t]``.  All arithmetic is float64.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from . import kernels
from .errors import (
    AtInfinityError,
    ContractError,
    DegenerateGeometryError,
    DegeneratePairError,
    InvalidCameraError,
    NumericalFailureError,
    UnknownViewError,
)

ORTHO_TOL = 1e-9
DEGENERATE_BASELINE = 1e-12
DLT_RANK_TOL = 1e-12
AT_INFINITY_TOL = 1e-12
DEFAULT_SAMPSON_THRESHOLD = 2.0


def _frozen_array(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy, self.skew)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidCameraError(f"non-finite intrinsics {vals}")
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidCameraError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True, eq=False)
class CameraPose:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = _frozen_array(self.R, (3, 3))
        t = _frozen_array(self.t, (3,))
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidCameraError("non-finite pose")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise InvalidCameraError("R is not a proper rotation")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t


@dataclass(frozen=True, eq=False)
class CameraView:
    id: Any
    intrinsics: CameraIntrinsics
    pose: CameraPose
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidCameraError(f"view {self.id!r}: image size must be positive")

    @property
    def P(self) -> np.ndarray:
        return self.intrinsics.K @ np.hstack([self.pose.R, self.pose.t[:, None]])

    def depth(self, X) -> np.ndarray:
        """Camera-frame z of world point(s) ``X`` (shape (3,) or (N, 3))."""
        X = np.asarray(X, dtype=np.float64)
        return X @ self.pose.R[2] + self.pose.t[2]

    def project(self, X) -> np.ndarray:
        """Pixel coordinates of world point(s) ``X``."""
        X = np.asarray(X, dtype=np.float64)
        p = X @ self.P[:, :3].T + self.P[:, 3]
        return p[..., :2] / p[..., 2:3]

    def contains(self, x) -> bool:
        u, v = x
        return 0.0 <= u <= self.width and 0.0 <= v <= self.height


@dataclass(frozen=True)
class Correspondence:
    view_a: Any
    x1: tuple[float, float]
    view_b: Any
    x2: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "x1", tuple(float(v) for v in self.x1))
        object.__setattr__(self, "x2", tuple(float(v) for v in self.x2))
        if len(self.x1) != 2 or len(self.x2) != 2:
            raise ContractError("correspondence pixels must be 2D")


@dataclass(frozen=True, eq=False)
class TriangulatedPoint:
    position: np.ndarray
    reprojection_rmse: float
    sampson_residual: float
    inlier: bool
    source: Correspondence | None = None
    # objective after x0 and after every accepted Gauss-Newton step
    objective_history: tuple[float, ...] = field(default=())
    iterations: int = 0


class EpipolarResidual(NamedTuple):
    algebraic: float
    sampson: float
    degenerate: bool


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def relative_pose(view1: CameraView, view2: CameraView) -> tuple[np.ndarray, np.ndarray]:
    R1, t1 = view1.pose.R, view1.pose.t
    R2, t2 = view2.pose.R, view2.pose.t
    R_rel = R2 @ R1.T
    return R_rel, t2 - R_rel @ t1


def _inv_K(view: CameraView) -> np.ndarray:
    K = view.intrinsics.K
    if abs(np.linalg.det(K)) < 1e-300:
        raise InvalidCameraError(f"view {view.id!r}: singular intrinsics")
    return np.linalg.inv(K)


def fundamental_matrix(view1: CameraView, view2: CameraView) -> np.ndarray:
    """F with ``x2^T F x1 = 0`` for pixels ``x1`` in view1 and ``x2`` in view2."""
    R_rel, t_rel = relative_pose(view1, view2)
    if np.linalg.norm(t_rel) < DEGENERATE_BASELINE:
        raise DegeneratePairError(
            f"views {view1.id!r} and {view2.id!r} share a camera center; F is undefined"
        )
    return _inv_K(view2).T @ skew(t_rel) @ R_rel @ _inv_K(view1)


def _homogeneous(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def epipolar_residuals_batch(F, x1, x2):
    """Vectorized ``(algebraic, sampson, degenerate)`` for pixel arrays of shape (N, 2)."""
    F = np.asarray(F, dtype=np.float64)
    h1 = _homogeneous(x1)
    h2 = _homogeneous(x2)
    Fx1 = h1 @ F.T
    Ftx2 = h2 @ F
    algebraic = np.sum(h2 * Fx1, axis=-1)
    denom = Fx1[..., 0] ** 2 + Fx1[..., 1] ** 2 + Ftx2[..., 0] ** 2 + Ftx2[..., 1] ** 2
    degenerate = denom == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        sampson = np.where(degenerate, np.inf, algebraic**2 / np.where(degenerate, 1.0, denom))
    return algebraic, sampson, degenerate


def epipolar_residuals(F, c: Correspondence) -> EpipolarResidual:
    """Algebraic residual ``x2^T F x1`` and Sampson error for one correspondence.

    The Sampson value is ``algebraic**2 / (|(F x1)_{1,2}|^2 + |(F^T x2)_{1,2}|^2)``.
    When all four denominator terms vanish it is ``inf`` and ``degenerate`` is set.
    """
    a, s, d = epipolar_residuals_batch(F, np.array([c.x1]), np.array([c.x2]))
    return EpipolarResidual(float(a[0]), float(s[0]), bool(d[0]))


def _dlt_systems(P, uv):
    # rows u * P[2] - P[0] and v * P[2] - P[1] per view; P (N,V,3,4), uv (N,V,2)
    ru = uv[..., 0:1] * P[..., 2, :] - P[..., 0, :]
    rv = uv[..., 1:2] * P[..., 2, :] - P[..., 1, :]
    A = np.stack([ru, rv], axis=2)
    return A.reshape(P.shape[0], -1, 4)


def _dlt_batch(P, uv):
    """Return (X (N,3), status) with status 0 ok, 1 rank deficient, 2 at infinity."""
    A = _dlt_systems(P, uv)
    _, s, Vt = np.linalg.svd(A)
    Xh = Vt[:, -1, :]
    status = np.zeros(len(A), dtype=np.int64)
    status[s[:, 2] <= DLT_RANK_TOL * s[:, 0]] = 1
    w = Xh[:, 3]
    at_inf = (status == 0) & (np.abs(w) < AT_INFINITY_TOL)
    status[at_inf] = 2
    safe_w = np.where(status == 0, w, 1.0)
    return Xh[:, :3] / safe_w[:, None], status


def _stack_views(views: Sequence[CameraView], pixels) -> tuple[np.ndarray, np.ndarray]:
    if len(views) < 2:
        raise ContractError("triangulation needs at least two views")
    uv = np.asarray(pixels, dtype=np.float64)
    if uv.shape[-2:] != (len(views), 2):
        raise ContractError(f"expected pixels of shape (..., {len(views)}, 2), got {uv.shape}")
    return np.stack([v.P for v in views]), uv


def _check_distinct_centers(views: Sequence[CameraView]):
    centers = np.stack([v.pose.center for v in views])
    spread = np.max(np.linalg.norm(centers - centers[0], axis=1))
    if spread < DEGENERATE_BASELINE:
        raise DegenerateGeometryError("all views share one camera center; depth is unobservable")


def triangulate_dlt(views: Sequence[CameraView], pixels) -> np.ndarray:
    """Linear triangulation: null vector of the stacked cross-product system."""
    Ps, uv = _stack_views(views, pixels)
    if uv.ndim != 2:
        raise ContractError("triangulate_dlt takes one point; use triangulate_batch for many")
    _check_distinct_centers(views)
    X, status = _dlt_batch(Ps[None], uv[None])
    if status[0] == 1:
        raise DegenerateGeometryError("triangulation system is rank deficient")
    if status[0] == 2:
        raise AtInfinityError("triangulated point lies at infinity")
    return X[0]


def reprojection_objective(X, views: Sequence[CameraView], pixels) -> float:
    """Sum over views of squared pixel distance between projection and observation."""
    X = np.asarray(X, dtype=np.float64)
    total = 0.0
    for view, x in zip(views, np.asarray(pixels, dtype=np.float64)):
        r = view.project(X) - x
        total += float(r @ r)
    return total


def reprojection_jacobian(X, views: Sequence[CameraView]) -> np.ndarray:
    """(2V, 3) Jacobian of the stacked projections with respect to ``X``."""
    X = np.asarray(X, dtype=np.float64)
    rows = []
    for view in views:
        P = view.P
        a, b, c = P[:, :3] @ X + P[:, 3]
        rows.append((P[0, :3] - (a / c) * P[2, :3]) / c)
        rows.append((P[1, :3] - (b / c) * P[2, :3]) / c)
    return np.array(rows)


@dataclass(frozen=True, eq=False)
class BatchTriangulation:
    positions: np.ndarray
    rmse: np.ndarray
    objective_history: np.ndarray
    iterations: np.ndarray
    status: np.ndarray


def _refine(P, uv, X0, max_iter):
    X, obj, hist, iters, status = kernels.refine_batch(P, uv, X0, max_iter=max_iter)
    bad = np.flatnonzero(status == kernels.backend.NON_FINITE)
    if bad.size:
        i = int(bad[0])
        raise NumericalFailureError(
            f"point {i}: non-finite reprojection objective", last_iterate=X0[i].copy()
        )
    V = uv.shape[1]
    return X, np.sqrt(obj / V), hist, iters, status


def triangulate_batch(views: Sequence[CameraView], pixels, max_iter: int = 50) -> BatchTriangulation:
    """DLT followed by Gauss-Newton refinement for many points seen by the same views.

    ``pixels`` has shape (N, V, 2).
    """
    Ps, uv = _stack_views(views, pixels)
    if uv.ndim != 3:
        raise ContractError("pixels must have shape (N, V, 2)")
    _check_distinct_centers(views)
    N = uv.shape[0]
    P = np.broadcast_to(Ps, (N,) + Ps.shape)
    X0, status = _dlt_batch(P, uv)
    if np.any(status):
        i = int(np.flatnonzero(status)[0])
        cls = DegenerateGeometryError if status[i] == 1 else AtInfinityError
        raise cls(f"point {i}: linear triangulation failed")
    X, rmse, hist, iters, st = _refine(P, uv, X0, max_iter)
    return BatchTriangulation(X, rmse, hist, iters, st)


def _history_tuple(row) -> tuple[float, ...]:
    return tuple(float(v) for v in row[~np.isnan(row)])


def refine_reprojection(x0, views: Sequence[CameraView], pixels, max_iter: int = 50) -> TriangulatedPoint:
    """Minimize the summed squared reprojection error starting from ``x0``.

    Gauss-Newton with up to 10 step halvings per iteration; an iterate is
    accepted only if it does not increase the objective.  The returned
    point has no epipolar diagnostics (``sampson_residual`` is NaN) and is
    marked inlier when it has positive depth in every view.
    """
    Ps, uv = _stack_views(views, pixels)
    x0 = np.asarray(x0, dtype=np.float64).reshape(3)
    if not any(v.depth(x0) > 0 for v in views):
        raise ContractError("initial point is behind every camera")
    X, rmse, hist, iters, _ = _refine(Ps[None], uv[None], x0[None], max_iter)
    pos = X[0]
    pos.setflags(write=False)
    return TriangulatedPoint(
        position=pos,
        reprojection_rmse=float(rmse[0]),
        sampson_residual=float("nan"),
        inlier=all(v.depth(pos) > 0 for v in views),
        objective_history=_history_tuple(hist[0]),
        iterations=int(iters[0]),
    )


def _view_table(views) -> Mapping[Any, CameraView]:
    if isinstance(views, Mapping):
        return views
    return {v.id: v for v in views}


def build_point_cloud(
    correspondences: Sequence[Correspondence],
    views,
    sampson_threshold: float = DEFAULT_SAMPSON_THRESHOLD,
    max_iter: int = 50,
) -> list[TriangulatedPoint]:
    """Triangulate every correspondence and flag inliers.

    A point is an inlier when its Sampson residual is within
    ``sampson_threshold`` and it has positive depth in both views.  Outliers
    are kept (``inlier=False``); output order follows the input.
    """
    if sampson_threshold <= 0:
        raise ContractError("sampson_threshold must be positive")
    n = len(correspondences)
    if n == 0:
        return []
    table = _view_table(views)
    pairs: list[tuple[CameraView, CameraView]] = []
    for i, c in enumerate(correspondences):
        for vid in (c.view_a, c.view_b):
            if vid not in table:
                raise UnknownViewError(vid)
        va, vb = table[c.view_a], table[c.view_b]
        if not va.contains(c.x1) or not vb.contains(c.x2):
            raise ContractError(f"correspondence {i}: pixel outside image bounds")
        pairs.append((va, vb))

    F_cache: dict[tuple[Any, Any], np.ndarray] = {}
    sampson = np.empty(n)
    for i, (c, (va, vb)) in enumerate(zip(correspondences, pairs)):
        key = (va.id, vb.id)
        if key not in F_cache:
            try:
                F_cache[key] = fundamental_matrix(va, vb)
            except DegeneratePairError as exc:
                raise DegenerateGeometryError(f"correspondence {i}: {exc}") from exc
        sampson[i] = epipolar_residuals(F_cache[key], c).sampson

    P = np.stack([np.stack([va.P, vb.P]) for va, vb in pairs])
    uv = np.array([[c.x1, c.x2] for c in correspondences])
    X0, status = _dlt_batch(P, uv)
    if np.any(status):
        i = int(np.flatnonzero(status)[0])
        cls = DegenerateGeometryError if status[i] == 1 else AtInfinityError
        raise cls(f"correspondence {i}: linear triangulation failed")
    X, rmse, hist, iters, _ = _refine(P, uv, X0, max_iter)

    out = []
    for i, (c, (va, vb)) in enumerate(zip(correspondences, pairs)):
        pos = X[i].copy()
        pos.setflags(write=False)
        in_front = bool(va.depth(pos) > 0 and vb.depth(pos) > 0)
        out.append(
            TriangulatedPoint(
                position=pos,
                reprojection_rmse=float(rmse[i]),
                sampson_residual=float(sampson[i]),
                inlier=bool(in_front and sampson[i] <= sampson_threshold),
                source=c,
                objective_history=_history_tuple(hist[i]),
                iterations=int(iters[i]),
            )
        )
    return out
