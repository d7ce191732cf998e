"""Image losses: windowed NCC, Laplacian pyramid, SSIM, L1 and volume terms.

Images are float64 arrays in [0, 1] of shape (H, W) or (H, W, C).  Every
loss is computed per channel and averaged over channels.  The losses are
evaluation-only (no gradients).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate1d

from . import kernels
from .errors import ContractError

NCC_WINDOW = 11
NCC_EPS = 1e-8
PYRAMID_LEVELS = 4
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

_BLUR = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True, eq=False)
class Image:
    data: np.ndarray  # (H, W, C)

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[..., None]
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ContractError(f"image must be (H, W), (H, W, 1) or (H, W, 3), got {d.shape}")
        if not np.all(np.isfinite(d)) or d.min(initial=0.0) < 0.0 or d.max(initial=0.0) > 1.0:
            raise ContractError("image values must be finite and within [0, 1]")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LossWeights:
    lambda_ssim: float = 0.2
    lambda_vol: float = 0.001
    lambda_laplacian: float = 1.0
    lambda_ncc: float = 0.01

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value >= 0:
                raise ContractError(f"{name} must be >= 0, got {value}")


@dataclass(frozen=True)
class LossReport:
    l1: float
    ssim_loss: float
    vol: float
    pixel: float
    ncc: float
    laplacian: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _as_array(img) -> np.ndarray:
    if isinstance(img, Image):
        return img.data
    a = np.asarray(img, dtype=np.float64)
    return a[..., None] if a.ndim == 2 else a


def _pair(I1, I2):
    a, b = _as_array(I1), _as_array(I2)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def ncc_loss(I1, I2, window: int = NCC_WINDOW) -> float:
    """``1 - mean`` windowed normalized cross-correlation over valid window positions.

    Each window's score is ``cov / (sigma1 * sigma2 + 1e-8)`` with
    population statistics over the ``window x window`` patch.
    """
    a, b = _pair(I1, I2)
    if window < 1 or window % 2 == 0:
        raise ContractError(f"window must be a positive odd integer, got {window}")
    if window > min(a.shape[:2]):
        raise ContractError(f"window {window} larger than image {a.shape[:2]}")
    scores = [kernels.ncc_map(a[..., ch], b[..., ch], window, NCC_EPS).mean() for ch in range(a.shape[2])]
    return float(1.0 - np.mean(scores))


def _blur(x, weights=_BLUR):
    # reflect-101 border, i.e. scipy's "mirror"
    y = correlate1d(x, weights, axis=0, mode="mirror")
    return correlate1d(y, weights, axis=1, mode="mirror")


def pyr_down(x: np.ndarray) -> np.ndarray:
    return _blur(x)[::2, ::2]


def pyr_up(x: np.ndarray, shape) -> np.ndarray:
    """Zero-stuff to ``shape`` (values at even indices) and blur with the kernel doubled per axis."""
    z = np.zeros(tuple(shape[:2]) + x.shape[2:])
    z[::2, ::2] = x
    return _blur(z, 2.0 * _BLUR)


def laplacian_pyramid(I, L: int = PYRAMID_LEVELS) -> list[np.ndarray]:
    """Band-pass levels ``G_l - up(G_{l+1})`` for l < L-1, then the coarsest Gaussian level."""
    x = _as_array(I)
    if L < 1:
        raise ContractError("L must be >= 1")
    if min(x.shape[:2]) < 2 ** (L - 1):
        raise ContractError(f"image {x.shape[:2]} too small for {L} pyramid levels")
    gauss = [x]
    for _ in range(L - 1):
        gauss.append(pyr_down(gauss[-1]))
    levels = [g - pyr_up(gn, g.shape) for g, gn in zip(gauss[:-1], gauss[1:])]
    levels.append(gauss[-1])
    return levels


def collapse_pyramid(levels: list[np.ndarray]) -> np.ndarray:
    out = levels[-1]
    for detail in reversed(levels[:-1]):
        out = detail + pyr_up(out, detail.shape)
    return out


def laplacian_loss(I1, I2, L: int = PYRAMID_LEVELS) -> float:
    """Sum over pyramid levels of the per-level mean absolute difference."""
    a, b = _pair(I1, I2)
    return float(
        sum(np.mean(np.abs(p - q)) for p, q in zip(laplacian_pyramid(a, L), laplacian_pyramid(b, L)))
    )


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(x, w):
    # separable weighted sum over every fully-contained window
    y = np.lib.stride_tricks.sliding_window_view(x, len(w), axis=0) @ w
    return np.lib.stride_tricks.sliding_window_view(y, len(w), axis=1) @ w


def ssim(I1, I2) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), dynamic range 1."""
    a, b = _pair(I1, I2)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ContractError(f"SSIM needs images of at least {SSIM_WINDOW} pixels per side")
    w = gaussian_window()
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, w), _filter_valid(y, w)
        sxx = _filter_valid(x * x, w) - mx * mx
        syy = _filter_valid(y * y, w) - my * my
        sxy = _filter_valid(x * y, w) - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def volume_regularization(scales) -> float:
    """Sum over entries of ``s_x * s_y * s_z``, accumulated in list order."""
    s = np.asarray(scales, dtype=np.float64).reshape(-1, 3)
    if s.size and not np.all(s > 0):
        raise ContractError("scales must be strictly positive")
    return kernels.volume_sum(s)


def l1_loss(I1, I2) -> float:
    a, b = _pair(I1, I2)
    return float(np.mean(np.abs(a - b)))


def pixel_loss(I1, I2, scales=(), weights: LossWeights = LossWeights()) -> float:
    return _pixel_terms(I1, I2, scales, weights)[-1]


def _pixel_terms(I1, I2, scales, weights):
    l1 = l1_loss(I1, I2)
    ssim_term = 1.0 - ssim(I1, I2)
    vol = volume_regularization(scales)
    return l1, ssim_term, vol, l1 + weights.lambda_ssim * ssim_term + weights.lambda_vol * vol


def total_loss(
    I1,
    I2,
    scales=(),
    weights: LossWeights = LossWeights(),
    ncc_window: int = NCC_WINDOW,
    pyramid_levels: int = PYRAMID_LEVELS,
) -> LossReport:
    l1, ssim_term, vol, pixel = _pixel_terms(I1, I2, scales, weights)
    ncc = ncc_loss(I1, I2, ncc_window)
    lap = laplacian_loss(I1, I2, pyramid_levels)
    total = pixel + weights.lambda_laplacian * lap + weights.lambda_ncc * ncc
    return LossReport(l1=l1, ssim_loss=ssim_term, vol=vol, pixel=pixel, ncc=ncc, laplacian=lap, total=total)
