"""Voxel anchors, k-NN neighbor graph and angular positional encoding."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    ContractError,
    DegenerateEdgeError,
    EmptyCloudError,
    InsufficientAnchorsError,
)

DEFAULT_K = 10
DEFAULT_ENCODING_FREQUENCIES = 4
FEATURE_INIT_BOUND = 0.1
# Seeded features are snapped to this dyadic grid so that neighbor
# differences are exact and f + (f[I] - f) == f[I] holds bit for bit.
FEATURE_GRID = 2.0**-24


@dataclass(frozen=True, eq=False)
class VoxelConfig:
    voxel_size: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.voxel_size > 0 and np.isfinite(self.voxel_size)):
            raise ContractError(f"voxel_size must be positive, got {self.voxel_size}")
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        origin.setflags(write=False)
        object.__setattr__(self, "origin", origin)


@dataclass(frozen=True, eq=False)
class Anchor:
    position: np.ndarray
    feature: np.ndarray
    scale: np.ndarray


@dataclass(frozen=True, eq=False)
class AnchorGraph:
    anchors: list[Anchor]
    neighbor_index: np.ndarray
    angles: np.ndarray
    k: int

    @property
    def positions(self) -> np.ndarray:
        return anchor_positions(self.anchors)

    @property
    def features(self) -> np.ndarray:
        return np.stack([a.feature for a in self.anchors])


@dataclass(frozen=True, eq=False)
class AggregatedFeatures:
    values: np.ndarray  # (M, k, 2F)

    @property
    def feature_dim(self) -> int:
        return self.values.shape[-1] // 2


@dataclass(frozen=True, eq=False)
class EncodedAngles:
    values: np.ndarray  # (M, k, 2L)
    frequencies: int


def _readonly(a):
    a.setflags(write=False)
    return a


def anchor_positions(anchors) -> np.ndarray:
    """(M, 3) positions from a list of anchors, or pass an array through."""
    if isinstance(anchors, np.ndarray):
        pos = np.asarray(anchors, dtype=np.float64)
    elif len(anchors) == 0:
        pos = np.zeros((0, 3))
    else:
        pos = np.stack([np.asarray(a.position, dtype=np.float64) for a in anchors])
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ContractError(f"expected (M, 3) positions, got {pos.shape}")
    return pos


def _inlier_positions(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return np.asarray(points, dtype=np.float64).reshape(-1, 3)
    kept = [p.position for p in points if p.inlier]
    if not kept:
        return np.zeros((0, 3))
    return np.stack([np.asarray(p, dtype=np.float64) for p in kept])


def voxel_coordinates(positions, config: VoxelConfig) -> np.ndarray:
    return np.floor((positions - config.origin) / config.voxel_size).astype(np.int64)


def voxelize(points, config: VoxelConfig, feature_dim: int, seed: int) -> list[Anchor]:
    """One anchor per occupied voxel, sorted by integer voxel coordinates.

    ``points`` is a sequence of TriangulatedPoint (only inliers are used) or
    an (N, 3) array of positions.  Features are drawn uniformly from
    [-0.1, 0.1] with ``seed`` and snapped to a 2**-24 grid; the initial scale
    is half the voxel size on every axis.
    """
    if feature_dim < 1:
        raise ContractError("feature_dim must be >= 1")
    pos = _inlier_positions(points)
    if len(pos) == 0:
        raise EmptyCloudError("no inlier points to voxelize")
    if not np.all(np.isfinite(pos)):
        raise ContractError("non-finite point positions")
    cells = np.unique(voxel_coordinates(pos, config), axis=0)
    centers = config.origin + (cells + 0.5) * config.voxel_size
    rng = np.random.default_rng(seed)
    raw = rng.uniform(-FEATURE_INIT_BOUND, FEATURE_INIT_BOUND, size=(len(cells), feature_dim))
    features = np.round(raw / FEATURE_GRID) * FEATURE_GRID
    half = config.voxel_size / 2.0
    return [
        Anchor(
            position=_readonly(centers[i].copy()),
            feature=_readonly(features[i].copy()),
            scale=_readonly(np.full(3, half)),
        )
        for i in range(len(cells))
    ]


def voxel_occupancy(points, config: VoxelConfig) -> np.ndarray:
    """Number of inlier points per occupied voxel, in anchor order."""
    pos = _inlier_positions(points)
    if len(pos) == 0:
        return np.zeros(0, dtype=np.int64)
    _, counts = np.unique(voxel_coordinates(pos, config), axis=0, return_counts=True)
    return counts


def knn_indices(anchors, k: int = DEFAULT_K) -> np.ndarray:
    """Exact k nearest neighbors of every anchor (self excluded).

    Rows are sorted by ascending distance; equal distances are ordered by
    ascending anchor index.
    """
    pos = anchor_positions(anchors)
    M = len(pos)
    if k < 1:
        raise ContractError("k must be >= 1")
    if M <= k:
        raise InsufficientAnchorsError(f"need more than k={k} anchors, got {M}")
    return _readonly(kernels.knn_bruteforce(pos, k))


def _check_index(index, M: int) -> np.ndarray:
    index = np.asarray(index)
    if index.ndim != 2 or index.shape[0] != M:
        raise ContractError(f"index table must have shape ({M}, k), got {index.shape}")
    if not np.issubdtype(index.dtype, np.integer):
        raise ContractError("index table must be integral")
    if index.size and (index.min() < 0 or index.max() >= M):
        raise ContractError("index out of range")
    return index


def aggregate_features(features, index) -> AggregatedFeatures:
    """Per edge ``concat(f[i], f[I[i, j]] - f[i])`` as an (M, k, 2F) tensor."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ContractError(f"features must be (M, F), got {f.shape}")
    index = _check_index(index, f.shape[0])
    M, k = index.shape
    out = np.empty((M, k, 2 * f.shape[1]))
    out[..., : f.shape[1]] = f[:, None, :]
    out[..., f.shape[1] :] = f[index] - f[:, None, :]
    return AggregatedFeatures(_readonly(out))


def neighbor_angles(anchors, index) -> np.ndarray:
    """Angle at each anchor between every neighbor edge and the nearest-neighbor edge.

    The reference direction of row ``i`` is the edge to ``I[i, 0]``, so
    column 0 is zero by construction.  The cosine is clamped to [-1, 1]
    before ``arccos``.
    """
    pos = anchor_positions(anchors)
    index = _check_index(index, len(pos))
    edges = pos[index] - pos[:, None, :]  # (M, k, 3)
    lengths = np.sqrt(np.sum(edges * edges, axis=-1))
    if np.any(lengths == 0.0):
        i, j = np.argwhere(lengths == 0.0)[0]
        raise DegenerateEdgeError(f"anchor {i} coincides with its neighbor {index[i, j]}")
    ref = edges[:, :1, :]
    cos = np.sum(edges * ref, axis=-1) / (lengths * lengths[:, :1])
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    theta[:, 0] = 0.0
    return _readonly(theta)


def encode_angles(angles, L: int = DEFAULT_ENCODING_FREQUENCIES) -> EncodedAngles:
    """Interleaved sin/cos encoding at frequencies ``2**l * pi`` for l < L."""
    if L < 1:
        raise ContractError("L must be >= 1")
    theta = np.asarray(angles, dtype=np.float64)
    out = np.empty(theta.shape + (2 * L,))
    for l in range(L):
        arg = (2.0**l * np.pi) * theta
        out[..., 2 * l] = np.sin(arg)
        out[..., 2 * l + 1] = np.cos(arg)
    return EncodedAngles(_readonly(out), L)


def build_anchor_graph(anchors: Sequence[Anchor], k: int = DEFAULT_K) -> AnchorGraph:
    index = knn_indices(anchors, k)
    return AnchorGraph(list(anchors), index, neighbor_angles(anchors, index), k)
