"""Synthetic camera rigs and scenes for fixtures, tests and benchmarks."""

from __future__ import annotations

import numpy as np

from .epipolar import CameraIntrinsics, CameraPose, CameraView, Correspondence

IMAGE_W = 640
IMAGE_H = 480


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """World-to-camera pose with +z toward ``target`` and +y pointing image-down."""
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    down = -np.asarray(up, dtype=np.float64)
    x = np.cross(down, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross((1.0, 0.0, 0.0), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraPose(R, -R @ center)


def random_view(rng, view_id, radius_range=(4.0, 8.0)) -> CameraView:
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    center = direction * rng.uniform(*radius_range)
    target = rng.uniform(-0.2, 0.2, 3)
    up = rng.standard_normal(3)
    pose = look_at(center, target, up)
    f = rng.uniform(400.0, 900.0)
    intr = CameraIntrinsics(
        fx=f,
        fy=f * rng.uniform(0.95, 1.05),
        cx=IMAGE_W / 2 + rng.uniform(-10, 10),
        cy=IMAGE_H / 2 + rng.uniform(-10, 10),
    )
    return CameraView(view_id, intr, pose, IMAGE_W, IMAGE_H)


def random_rig(rng, n_views: int = 2) -> list[CameraView]:
    """Views on a shell of radius 4-8 looking near the origin, with distinct centers."""
    while True:
        views = [random_view(rng, str(i)) for i in range(n_views)]
        centers = np.stack([v.pose.center for v in views])
        gaps = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
        if n_views == 1 or gaps[np.triu_indices(n_views, 1)].min() > 0.5:
            return views


def sample_visible_points(rng, views, n: int, radius: float = 0.6) -> np.ndarray:
    """``n`` points in a ball around the origin that project inside every view."""
    out = []
    while len(out) < n:
        X = rng.uniform(-radius, radius, (4 * n, 3))
        X = X[np.linalg.norm(X, axis=1) <= radius]
        ok = np.ones(len(X), dtype=bool)
        for v in views:
            uv = v.project(X)
            ok &= (v.depth(X) > 0) & (uv[:, 0] >= 1) & (uv[:, 0] <= v.width - 1)
            ok &= (uv[:, 1] >= 1) & (uv[:, 1] <= v.height - 1)
        out.extend(X[ok])
    return np.array(out[:n])


def grid_points(spacing: float = 1.0, offset: float = 0.25) -> np.ndarray:
    """3x3x3 grid; the offset keeps every point a quarter spacing inside its 0.5-voxel."""
    ax = (np.arange(3) - 1.0) * spacing + offset
    return np.array([(x, y, z) for x in ax for y in ax for z in ax])


def grid_scene() -> tuple[list[CameraView], list[Correspondence], np.ndarray]:
    """Bundled 27-point grid seen by 3 cameras; point i uses view pair (i, i+1) mod 3."""
    views = []
    for i, angle in enumerate(np.deg2rad([-25.0, 0.0, 25.0])):
        center = np.array([8.0 * np.sin(angle), -8.0 * np.cos(angle), 2.0])
        intr = CameraIntrinsics(500.0, 500.0, IMAGE_W / 2, IMAGE_H / 2)
        views.append(CameraView(f"cam{i}", intr, look_at(center, (0.25, 0.25, 0.25)), IMAGE_W, IMAGE_H))
    pts = grid_points()
    matches = []
    for i, X in enumerate(pts):
        a, b = views[i % 3], views[(i + 1) % 3]
        matches.append(Correspondence(a.id, tuple(a.project(X)), b.id, tuple(b.project(X))))
    return views, matches, pts


def texture_image(rng, height: int = 64, width: int = 64) -> np.ndarray:
    """High-contrast blocky texture on even 8-bit levels.

    Even levels make the half-brightness copy exact after 8-bit
    quantization, and the large local variance keeps NCC well conditioned.
    """
    coarse = rng.uniform(0.05, 0.95, (height // 2 + 1, width // 2 + 1))
    img = np.kron(coarse, np.ones((2, 2)))[:height, :width]
    img = np.clip(img + rng.uniform(-0.05, 0.05, (height, width)), 0.0, 1.0)
    return 2.0 * np.round(img * 127.5) / 255.0
