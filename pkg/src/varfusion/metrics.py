"""Similarity metrics for comparing a fused band against ground truth."""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy import signal

from .raster import MultiBandImage, laplacian

log = logging.getLogger(__name__)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"grid mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(a, b) -> float:
    """Mean of squared differences (the table's "RMSE", no square root)."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def rmse_sqrt(a, b) -> float:
    return math.sqrt(rmse(a, b))


def corr(a, b) -> float:
    """Pearson correlation over all pixels."""
    a, b = _pair(a, b)
    da = a - a.mean()
    db = b - b.mean()
    va, vb = float(np.sum(da * da)), float(np.sum(db * db))
    if va == 0.0 or vb == 0.0:
        raise ValueError("correlation undefined for a constant raster")
    return float(np.clip(np.sum(da * db) / math.sqrt(va * vb), -1.0, 1.0))


def corr_laplace(a, b) -> float:
    """Correlation of the five-point Laplacians, interior pixels only."""
    a, b = _pair(a, b)
    return corr(laplacian(a)[1:-1, 1:-1], laplacian(b)[1:-1, 1:-1])


def _ssim_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x**2 / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, dynamic_range: float) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), valid region only."""
    a, b = _pair(a, b)
    if not dynamic_range > 0:
        raise ValueError("dynamic_range must be positive")
    if min(a.shape) < 11:
        raise ValueError("SSIM needs rasters of at least 11x11")
    w = _ssim_window()

    def filt(x):
        return signal.correlate(x, w, mode="valid")

    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a**2
    sbb = filt(b * b) - mu_b**2
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


HAARPSI_C = 30.0
HAARPSI_ALPHA = 4.2


def _haar_responses(image, n_scales: int) -> np.ndarray:
    out = np.zeros((2 * n_scales,) + image.shape)
    for scale in range(1, n_scales + 1):
        size = 2**scale
        filt = np.full((size, size), 2.0 ** (-scale))
        filt[: size // 2, :] *= -1
        out[scale - 1] = signal.convolve2d(image, filt, mode="same")
        out[scale - 1 + n_scales] = signal.convolve2d(image, filt.T, mode="same")
    return out


def haarpsi(a, b, subsample: bool = True) -> float:
    """Haar wavelet-based perceptual similarity index for grayscale rasters.

    Three Haar scales, similarity from the two finest, weights from the
    coarsest, logistic pooling with C = 30 and alpha = 4.2.
    """
    a, b = _pair(a, b)
    if min(a.shape) < 8:
        raise ValueError("HaarPSI needs rasters of at least 8x8")
    if subsample:
        box = np.full((2, 2), 0.25)
        a = signal.convolve2d(a, box, mode="same")[::2, ::2]
        b = signal.convolve2d(b, box, mode="same")[::2, ::2]
    n = 3
    ca = _haar_responses(a, n)
    cb = _haar_responses(b, n)
    sims = np.zeros((2,) + a.shape)
    weights = np.zeros((2,) + a.shape)
    for o in range(2):
        weights[o] = np.maximum(np.abs(ca[2 + o * n]), np.abs(cb[2 + o * n]))
        ma = np.abs(ca[[o * n, 1 + o * n]])
        mb = np.abs(cb[[o * n, 1 + o * n]])
        sims[o] = np.sum((2 * ma * mb + HAARPSI_C) / (ma**2 + mb**2 + HAARPSI_C), axis=0) / 2
    total = np.sum(weights)
    if total == 0.0:
        return 1.0 if np.array_equal(a, b) else 0.0
    pooled = np.sum(_sigmoid(sims, HAARPSI_ALPHA) * weights) / total
    return float(np.clip(_logit(pooled, HAARPSI_ALPHA) ** 2, 0.0, 1.0))


def _sigmoid(x, alpha):
    return 1.0 / (1.0 + np.exp(-alpha * x))


def _logit(x, alpha):
    return np.log(x / (1.0 - x)) / alpha


def psnr(a, b, peak: float) -> float:
    """``10 log10(peak^2 / MSE)``; ``inf`` for identical inputs."""
    mse = rmse(a, b)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def ndvi(img: MultiBandImage, red: str = "B4", nir: str = "B8a") -> np.ndarray:
    """``(nir - red) / (nir + red)``; pixels with a zero denominator map to 0."""
    r = img.band(red)
    n = img.band(nir)
    den = n + r
    zero = den == 0
    if zero.any():
        log.warning("NDVI: %d pixels with zero denominator set to 0", int(zero.sum()))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(zero, 0.0, (n - r) / np.where(zero, 1.0, den))
    return out


def band_report(truth, estimate, dynamic_range: float) -> dict[str, float]:
    """All per-band metrics as a name -> value mapping."""
    row = {"rmse": rmse(truth, estimate), "rmse_sqrt": rmse_sqrt(truth, estimate)}
    for name, fn in (("corr", corr), ("corr_laplace", corr_laplace)):
        try:
            row[name] = fn(truth, estimate)
        except ValueError:
            row[name] = math.nan
    row["ssim"] = ssim(truth, estimate, dynamic_range) if min(np.shape(truth)) >= 11 else math.nan
    row["haarpsi"] = haarpsi(truth, estimate) if min(np.shape(truth)) >= 8 else math.nan
    row["psnr"] = psnr(truth, estimate, dynamic_range)
    return row
