"""Reconstruction enhancement and the quality metrics it is judged by.

MS-SSIM here is the luma-only, five-scale variant: 11-tap Gaussian
window (sigma 1.5), valid-region filtering, dyadic 2x2-mean
downsampling between scales, per-scale weights
(0.0448, 0.2856, 0.3001, 0.2363, 0.1333), and stabilizers
C1 = (0.01 * 255)^2, C2 = (0.03 * 255)^2 on the 0..255 range. Five
scales need min(H, W) >= 176; smaller inputs drop scales (renormalizing
the weights) and warn. Negative per-scale means clamp to zero so the
score stays in [0, 1] on anti-correlated inputs.
"""

from __future__ import annotations

import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, ShapeError
from .frames import Frame444
from .model import ArchitectureConfig
from .nn import ModelWeights, run_stack

__all__ = [
    "MSSSIM_WEIGHTS",
    "postprocess",
    "usable_scales",
    "ms_ssim_plane",
    "ms_ssim",
    "psnr",
]

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
_C1 = (0.01 * 255.0) ** 2
_C2 = (0.03 * 255.0) ** 2


def postprocess(config: ArchitectureConfig, weights: ModelWeights,
                recon: np.ndarray) -> np.ndarray:
    """Additive enhancement: clamp(recon + net(recon), 0, 1)."""
    if recon.ndim != 3 or recon.shape[0] != 3:
        raise ShapeError(f"reconstruction must be (3, H, W), got {recon.shape}")
    if "postproc" not in weights.subnets:
        raise DomainError("weight set has no 'postproc' sub-network")
    x = np.asarray(recon, dtype=np.float32)
    out = x + run_stack(weights.subnets["postproc"], x)
    return np.clip(out, np.float32(0.0), np.float32(1.0))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    xs = np.arange(size, dtype=np.float64) - half
    w = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable valid-region correlation with a 1-d window."""
    rows = sliding_window_view(img, window.size, axis=0) @ window
    return sliding_window_view(rows, window.size, axis=1) @ window


def _halve(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2]) / 4.0


def usable_scales(height: int, width: int, max_scales: int = 5) -> int:
    """How many dyadic scales keep the image at least one window wide."""
    n = 0
    side = min(height, width)
    while n < max_scales and side >= _WINDOW_SIZE:
        n += 1
        side //= 2
    return n


def ms_ssim_plane(a: np.ndarray, b: np.ndarray, scales: int | None = None) -> float:
    """Multi-scale structural similarity of two single-channel planes.

    Planes are compared on the 0..255 scale regardless of dtype. With
    scales=None the count is chosen from the dimensions and a warning is
    issued if fewer than five fit.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"planes must be equal-shaped 2-d, got {a.shape} and {b.shape}")
    fit = usable_scales(*a.shape)
    if fit == 0:
        raise DomainError(f"plane {a.shape} is smaller than the {_WINDOW_SIZE}-tap window")
    if scales is None:
        scales = fit
        if scales < len(MSSSIM_WEIGHTS):
            warnings.warn(
                f"plane {a.shape[1]}x{a.shape[0]} only supports {scales} of "
                f"{len(MSSSIM_WEIGHTS)} scales",
                stacklevel=2,
            )
    elif not 1 <= scales <= fit:
        raise DomainError(f"cannot evaluate {scales} scales on a {a.shape} plane")

    weights = np.asarray(MSSSIM_WEIGHTS[:scales], dtype=np.float64)
    if scales < len(MSSSIM_WEIGHTS):
        weights = weights / weights.sum()

    window = _gaussian_window(_WINDOW_SIZE, _WINDOW_SIGMA)
    score = 1.0
    for level in range(scales):
        if level:
            a = _halve(a)
            b = _halve(b)
        mu_a = _filter_valid(a, window)
        mu_b = _filter_valid(b, window)
        var_a = _filter_valid(a * a, window) - mu_a * mu_a
        var_b = _filter_valid(b * b, window) - mu_b * mu_b
        cov = _filter_valid(a * b, window) - mu_a * mu_b
        cs_map = (2.0 * cov + _C2) / (var_a + var_b + _C2)
        # Anti-correlated content drives the mean contrast term negative;
        # a negative base under the fractional exponent would be NaN, so
        # clamp at zero and keep the score inside [0, 1].
        if level < scales - 1:
            score *= max(float(np.mean(cs_map)), 0.0) ** weights[level]
        else:
            l_map = (2.0 * mu_a * mu_b + _C1) / (mu_a * mu_a + mu_b * mu_b + _C1)
            score *= max(float(np.mean(l_map * cs_map)), 0.0) ** weights[level]
    return float(score)


def ms_ssim(a: Frame444, b: Frame444, scales: int | None = None) -> float:
    """MS-SSIM on the luma planes of two frames."""
    return ms_ssim_plane(a.y, b.y, scales)


def psnr(a: Frame444, b: Frame444) -> float:
    """Peak signal-to-noise over all three planes; +inf for identical frames."""
    if a.y.shape != b.y.shape:
        raise ShapeError(f"frame sizes differ: {a.y.shape} vs {b.y.shape}")
    diff = np.concatenate(
        [plane_a.astype(np.float64).ravel() - plane_b.astype(np.float64).ravel()
         for plane_a, plane_b in ((a.y, b.y), (a.u, b.u), (a.v, b.v))]
    )
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(255.0 ** 2 / mse)
