"""Edge-stopping function and variable-exponent texture index fields."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import trapezoid

from .config import FusionConfig
from .raster import GridSpec, convolve_gaussian, gradient


def edge_stop(s, a: float):
    """Cauchy-law edge stopping ``a / (a + s)``; works on scalars and arrays."""
    if not a > 0:
        raise ValueError(f"a must be positive, got {a}")
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < 0):
        raise ValueError("edge_stop argument must be nonnegative")
    out = a / (a + s_arr)
    return float(out) if out.ndim == 0 else out


def smoothed_gradient_energy(band, sigma: float, pitch=(1.0, 1.0)) -> np.ndarray:
    """Pixelwise ``|grad (G_sigma * band)|^2`` with zero extension."""
    g = gradient(convolve_gaussian(band, sigma, pitch), pitch)
    return g[0] ** 2 + g[1] ** 2


def texture_index_static(band, cfg: FusionConfig, pitch=(1.0, 1.0)) -> np.ndarray:
    """Texture index ``1 + g(|grad G_sigma * band|^2)`` of a single band.

    Values lie in (1, 2]: close to 1 on edges, 2 on flat areas.
    """
    return 1.0 + edge_stop(smoothed_gradient_energy(band, cfg.sigma, pitch), cfg.a)


def texture_index_flow(history, t: float, cfg: FusionConfig, pitch=(1.0, 1.0)) -> np.ndarray:
    """Texture index of an image flow, averaging over the window ``[t - h, t]``.

    ``history`` is a time-ordered sequence of ``(day, raster)`` pairs. The
    window average of the smoothed gradient energy is taken with the trapezoid
    rule over the snapshots falling inside the window, normalised by the span
    they cover; a single snapshot is used as is.
    """
    window = [(float(tau), u) for tau, u in history if t - cfg.h <= tau <= t]
    if not window:
        raise ValueError(f"no snapshot inside the window [{t - cfg.h}, {t}]")
    energies = [smoothed_gradient_energy(u, cfg.sigma, pitch) for _, u in window]
    if len(window) == 1:
        avg = energies[0]
    else:
        times = np.array([tau for tau, _ in window])
        span = times[-1] - times[0]
        if span <= 0:
            avg = np.mean(energies, axis=0)
        else:
            avg = trapezoid(np.stack(energies), times, axis=0) / span
    return 1.0 + edge_stop(avg, cfg.a)


def gaussian_c1_norm(sigma: float, diameter: float) -> float:
    """Closed-form ``||G_sigma||_{C^1}`` over the difference set of the domain."""
    return math.exp(-1.0) / (math.sqrt(2.0 * math.pi) * sigma) ** 2 * (1.0 + diameter / sigma**2)


def delta_lower_bound(cfg: FusionConfig, domain: GridSpec, u_norm_sq: float) -> float:
    """Guaranteed margin ``delta`` with ``q >= 1 + delta`` for inputs of squared L2 norm ``u_norm_sq``."""
    if u_norm_sq < 0:
        raise ValueError("u_norm_sq must be nonnegative")
    ah = cfg.a * cfg.h
    c1 = gaussian_c1_norm(cfg.sigma, domain.diameter)
    return ah / (ah + c1**2 * domain.area * u_norm_sq)


def l2_norm_sq(u, pitch=(1.0, 1.0)) -> float:
    return float(np.sum(np.asarray(u, dtype=np.float64) ** 2) * pitch[0] * pitch[1])
