"""Unit-normal fields of the topographic map and the directional operator R."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import as_raster, divergence, gradient


def _check_field(f, name="field") -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3 or f.shape[0] != 2:
        raise ValueError(f"{name} must have shape (2, height, width), got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError(f"{name} has non-finite components")
    return f


def magnitude(f) -> np.ndarray:
    f = np.asarray(f)
    return np.sqrt(f[0] ** 2 + f[1] ** 2)


def tv_flow(band, eps: float, t_stop: float, dt: float, pitch=(1.0, 1.0)) -> np.ndarray:
    """Explicit steps of ``U_t = div(grad U / (|grad U| + eps))`` from ``U(0) = band``."""
    if not eps > 0 or not dt > 0:
        raise ValueError("eps and dt must be positive")
    if t_stop < 0:
        raise ValueError("t_stop must be nonnegative")
    u = as_raster(band).copy()
    n_steps = int(np.ceil(t_stop / dt - 1e-12))
    for k in range(n_steps):
        step = min(dt, t_stop - k * dt)
        g = gradient(u, pitch)
        u = u + step * divergence(g / (magnitude(g) + eps), pitch)
    return u


def normal_field(band, eps: float = 1e-3, t_stop: float | None = None, dt: float | None = None,
                 pitch=(1.0, 1.0)) -> np.ndarray:
    """Regularised unit normals ``grad U / (|grad U| + eps)`` after a short TV flow.

    By default two steps of size ``0.2 * eps`` are taken. The result has
    ``|theta| < 1`` everywhere and vanishes where ``grad U`` does.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    dt = 0.2 * eps if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    t_stop = 2 * dt if t_stop is None else t_stop
    u = tv_flow(band, eps, t_stop, dt, pitch)
    g = gradient(u, pitch)
    return g / (magnitude(g) + eps)


def tangential_misalignment(theta, u, pitch=(1.0, 1.0)) -> float:
    """Diagnostic ``sum |(theta_perp, grad u)|`` times the cell area."""
    theta = _check_field(theta, "theta")
    g = gradient(u, pitch)
    return float(np.sum(np.abs(-theta[1] * g[0] + theta[0] * g[1])) * pitch[0] * pitch[1])


@dataclass(frozen=True)
class DirectionalOperator:
    """Pixelwise map ``g -> g - eta^2 (theta, g) theta``."""

    theta: np.ndarray
    eta: float

    def __post_init__(self):
        theta = _check_field(self.theta, "theta")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if np.max(magnitude(theta)) > 1.0 + 1e-12:
            raise ValueError("theta must satisfy |theta| <= 1")
        object.__setattr__(self, "theta", theta)

    def __call__(self, g) -> np.ndarray:
        return apply_R(self, g)


def apply_R(op: DirectionalOperator, g) -> np.ndarray:
    g = _check_field(g, "g")
    if g.shape != op.theta.shape:
        raise ValueError(f"grid mismatch: theta {op.theta.shape} vs g {g.shape}")
    th = op.theta
    dot = th[0] * g[0] + th[1] * g[1]
    return g - op.eta**2 * dot * th


def apply_R_adjoint(op: DirectionalOperator, g) -> np.ndarray:
    """Transpose of :func:`apply_R`.

    Each pixel block ``I - eta^2 theta theta^T`` is symmetric, so this is the
    same map written out in transposed form.
    """
    g = _check_field(g, "g")
    if g.shape != op.theta.shape:
        raise ValueError(f"grid mismatch: theta {op.theta.shape} vs g {g.shape}")
    th = op.theta
    e2 = op.eta**2
    # row i of (I - e2 theta theta^T)^T applied to g
    out_x = (1 - e2 * th[0] * th[0]) * g[0] - e2 * th[1] * th[0] * g[1]
    out_y = -e2 * th[0] * th[1] * g[0] + (1 - e2 * th[1] * th[1]) * g[1]
    return np.stack([out_x, out_y])
