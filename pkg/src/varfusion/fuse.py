"""Constrained directional-TV fusion of a structural prototype with a coarse image.

For one band the energy is

    F(u) = sum (1/q) |R grad u|^q                 (directional, variable exponent)
         + mu/2    sum |grad u - grad S_hat|^2    (geometry of the prototype)
         + gamma/2 sum_{clear} (u - S)^2          (observed pixels, restoration only)
         + vartheta/2 sum_low (K*u - M)^2         (coarse image at its sample points)

minimised over ``0 <= u <= cap`` by projected gradient descent.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import FusionConfig
from .geometry import DirectionalOperator, apply_R, apply_R_adjoint, magnitude, normal_field
from .predict import PredictionProblem, SolverError, _diffusion_diagonal, conjugate_gradient, predict_prototype
from .prototype import build_prototypes
from .raster import (J1, J2, GridSpec, Kernel, MultiBandImage, as_raster, divergence,
                     downsample, downsample_adjoint, gradient)
from .texture import texture_index_static

log = logging.getLogger(__name__)


class InfeasibleError(ValueError):
    pass


class DescentError(RuntimeError):
    pass


@dataclass
class FusionProblem:
    """Data of the single-band minimisation.

    ``mask`` marks damaged pixels; the gamma term runs over ``~mask`` and is
    dropped when ``observed`` is None.
    """

    prototype: np.ndarray
    modis: np.ndarray
    low: GridSpec
    kernel: Kernel
    q: np.ndarray
    theta: np.ndarray
    cfg: FusionConfig = field(default_factory=FusionConfig)
    observed: np.ndarray | None = None
    mask: np.ndarray | None = None
    cap: float | None = None
    pitch: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        self.prototype = as_raster(self.prototype)
        shape = self.prototype.shape
        self.modis = np.asarray(self.modis, dtype=np.float64)
        if self.modis.shape != self.low.shape:
            raise ValueError(f"coarse band {self.modis.shape} does not match low grid {self.low.shape}")
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.q.shape != shape or np.any(self.q <= 1.0) or np.any(self.q > 2.0):
            raise ValueError("texture index must match the grid and lie in (1, 2]")
        self.op = DirectionalOperator(self.theta, self.cfg.eta)
        self.theta = self.op.theta
        if self.theta.shape[1:] != shape:
            raise ValueError("normal field does not match the grid")
        if self.observed is not None:
            self.observed = as_raster(self.observed)
            if self.observed.shape != shape:
                raise ValueError("observed band does not match the grid")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != shape:
                raise ValueError("mask does not match the grid")
        if self.cap is None:
            self.cap = self.cfg.cap
        self.high = GridSpec.of(self.prototype, *self.pitch)
        self._proto_grad = gradient(self.prototype, self.pitch)

    @property
    def clear(self) -> np.ndarray | None:
        if self.observed is None:
            return None
        return np.ones(self.prototype.shape, dtype=bool) if self.mask is None else ~self.mask

    @property
    def gamma(self) -> float:
        return 0.0 if self.observed is None else self.cfg.gamma


def make_problem(prototype, modis, low: GridSpec, cfg: FusionConfig, kernel: Kernel | None = None,
                 observed=None, mask=None, cap=None, pitch=(1.0, 1.0)) -> FusionProblem:
    """Build a problem with texture index and normals taken from ``prototype``."""
    prototype = as_raster(prototype)
    if kernel is None:
        kernel = cfg.make_kernel(int(round(low.pitch_x / pitch[0])))
    q = texture_index_static(prototype, cfg, pitch)
    theta = normal_field(prototype, cfg.eps, cfg.normal_steps * cfg.flow_dt, cfg.flow_dt, pitch)
    return FusionProblem(prototype, modis, low, kernel, q, theta, cfg, observed, mask, cap, pitch)


def _check_feasible(problem: FusionProblem, u) -> np.ndarray:
    u = as_raster(u)
    if u.shape != problem.prototype.shape:
        raise ValueError(f"grid mismatch: {u.shape} vs {problem.prototype.shape}")
    lo, hi = float(u.min()), float(u.max())
    if lo < 0.0 or hi > problem.cap:
        raise InfeasibleError(f"u outside [0, {problem.cap}]: range [{lo:g}, {hi:g}]")
    return u


def energy(problem: FusionProblem, u):
    """Total energy and its four weighted parts ``(A, mu B, gamma C, vartheta D)``."""
    u = _check_feasible(problem, u)
    cfg, pitch = problem.cfg, problem.pitch
    area = pitch[0] * pitch[1]
    g = gradient(u, pitch)
    rg = magnitude(apply_R(problem.op, g))
    a_part = float(np.sum(rg**problem.q / problem.q)) * area
    d = g - problem._proto_grad
    b_part = 0.5 * cfg.mu * float(np.sum(d * d)) * area
    c_part = 0.0
    if problem.observed is not None and problem.gamma > 0:
        r = (u - problem.observed)[problem.clear]
        c_part = 0.5 * problem.gamma * float(np.dot(r, r)) * area
    res = downsample(u, problem.kernel, problem.low, pitch) - problem.modis
    d_part = 0.5 * cfg.vartheta * float(np.sum(res * res))
    parts = (a_part, b_part, c_part, d_part)
    return sum(parts), parts


def energy_gradient(problem: FusionProblem, u) -> np.ndarray:
    """Gradient of :func:`energy` with respect to the pixel values."""
    u = _check_feasible(problem, u)
    cfg, pitch = problem.cfg, problem.pitch
    area = pitch[0] * pitch[1]
    g = gradient(u, pitch)
    rg = apply_R(problem.op, g)
    w = np.maximum(magnitude(rg), cfg.grad_floor) ** (problem.q - 2.0)
    flux = apply_R_adjoint(problem.op, w * rg) + cfg.mu * (g - problem._proto_grad)
    out = -divergence(flux, pitch) * area
    if problem.observed is not None and problem.gamma > 0:
        out += problem.gamma * area * np.where(problem.clear, u - problem.observed, 0.0)
    if cfg.vartheta > 0:
        res = downsample(u, problem.kernel, problem.low, pitch) - problem.modis
        out += cfg.vartheta * downsample_adjoint(res, problem.kernel, problem.high, problem.low)
    return out


@dataclass
class DescentResult:
    u: np.ndarray
    trace: list[tuple[int, float, tuple[float, float, float, float]]]
    converged: bool
    iterations: int
    #: ``min <grad F(u), v - u>`` over random feasible ``v``, filled in by the mode runners
    stationarity: float | None = None

    @property
    def energies(self) -> np.ndarray:
        return np.array([t[1] for t in self.trace])


def _metric(problem: FusionProblem, u):
    """Lagged-diffusivity curvature model at ``u`` and its Jacobi preconditioner.

    The operator is the Hessian of the quadratic majorant of the energy with
    ``|R grad u|^(q-2)`` frozen (capped at ``cfg.w_max``); it is SPD whenever
    ``mu > 0`` or the fidelity terms see every mode.
    """
    cfg, pitch = problem.cfg, problem.pitch
    area = pitch[0] * pitch[1]
    z = np.maximum(magnitude(apply_R(problem.op, gradient(u, pitch))), cfg.grad_floor)
    w = np.minimum(z ** (problem.q - 2.0), cfg.w_max)
    fid = problem.gamma * area * problem.clear if problem.gamma > 0 else 0.0

    def apply(v):
        gv = gradient(v, pitch)
        flux = apply_R_adjoint(problem.op, w * apply_R(problem.op, gv)) + cfg.mu * gv
        out = -divergence(flux, pitch) * area + fid * v
        if cfg.vartheta > 0:
            low = downsample(v, problem.kernel, problem.low, pitch)
            out += cfg.vartheta * downsample_adjoint(low, problem.kernel, problem.high, problem.low)
        return out

    diag = (_diffusion_diagonal(w + cfg.mu, 1.0, pitch) - 1.0) * area + fid
    return apply, 1.0 / np.maximum(diag, 1e-12)


def _direction(problem: FusionProblem, u, g):
    if problem.cfg.descent_metric == "identity":
        return None
    apply, inv_diag = _metric(problem, u)
    try:
        d, _ = conjugate_gradient(apply, g, tol=problem.cfg.metric_cg_tol,
                                  max_iters=problem.cfg.cg_max_iters, precond=inv_diag)
    except SolverError as exc:
        log.debug("metric solve failed (%s); using the plain gradient", exc)
        return None
    return d


def _backtrack(problem: FusionProblem, u, e, d, step):
    """Halve ``step`` until ``clip(u - step d)`` strictly lowers the energy."""
    for _ in range(60):
        cand = np.clip(u - step * d, 0.0, problem.cap)
        if np.array_equal(cand, u):
            return None
        e_new, parts = energy(problem, cand)
        if not math.isfinite(e_new):
            return cand, e_new, parts, step
        if e_new < e:
            return cand, e_new, parts, step
        step *= 0.5
    return None


def solve(problem: FusionProblem, initial=None, max_iters: int | None = None,
          tol: float | None = None) -> DescentResult:
    """Projected descent on ``[0, cap]`` with a monotone halving line search.

    Each iteration tries ``clip(u - dt d)`` where ``d`` solves the
    lagged-diffusivity system ``H d = grad F(u)`` (``cfg.descent_metric``
    "diffusivity", unit trial step) and falls back to ``d = grad F(u)``
    with a Barzilai-Borwein trial step (``cfg.descent_dt`` at first). The
    trial step is halved until the energy strictly decreases. Stops when the
    relative decrease of an accepted step falls below ``tol``, when no
    decreasing step exists, or after ``max_iters``. The trace holds
    ``(iteration, total, parts)`` for the initial point and every accepted
    step.
    """
    cfg = problem.cfg
    max_iters = cfg.descent_max_iters if max_iters is None else max_iters
    tol = cfg.descent_tol if tol is None else tol
    u = _check_feasible(problem, problem.prototype if initial is None else initial).copy()
    e, parts = energy(problem, u)
    if not math.isfinite(e):
        raise DescentError("non-finite energy at iteration 0")
    trace = [(0, e, parts)]
    g = energy_gradient(problem, u)
    dt = cfg.descent_dt
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        d = _direction(problem, u, g)
        found = None if d is None else _backtrack(problem, u, e, d, 1.0)
        if found is None:
            found = _backtrack(problem, u, e, g, dt)
        if found is None:
            converged = True
            it -= 1
            break
        cand, e_new, parts_new, step = found
        if not math.isfinite(e_new):
            raise DescentError(f"non-finite energy at iteration {it}")
        g_new = energy_gradient(problem, cand)
        s = cand - u
        y = g_new - g
        sy = float(np.vdot(s, y))
        dt = float(np.vdot(s, s)) / sy if sy > 0 else 2.0 * dt
        decrease = (e - e_new) / max(abs(e), 1e-300)
        u, g, e = cand, g_new, e_new
        trace.append((it, e, parts_new))
        if decrease < tol:
            converged = True
            break
    return DescentResult(u, trace, converged, it)


def stationarity(problem: FusionProblem, u, n_dirs: int = 100, seed: int = 0):
    """Variational-inequality check at ``u``.

    Returns ``min_v <grad F(u), v - u>`` over ``n_dirs`` random feasible
    images ``v`` (uniform in ``[0, cap]``). A minimiser gives a value >= 0.
    """
    rng = np.random.default_rng(seed)
    g = energy_gradient(problem, u)
    vals = [float(np.vdot(g, rng.uniform(0.0, problem.cap, size=u.shape) - u)) for _ in range(n_dirs)]
    return min(vals)


def beta_scaling(reference, u0, mask=None) -> float:
    """Least-squares scale ``<reference, u0> / <u0, u0>``, over undamaged pixels if ``mask`` is given."""
    reference = np.asarray(reference, dtype=np.float64)
    u0 = np.asarray(u0, dtype=np.float64)
    if reference.shape != u0.shape:
        raise ValueError("grid mismatch")
    if mask is not None:
        keep = ~np.asarray(mask, dtype=bool)
        reference, u0 = reference[keep], u0[keep]
    denom = float(np.vdot(u0, u0))
    if denom == 0.0:
        raise ValueError("beta undefined: u0 vanishes")
    return float(np.vdot(reference, u0)) / denom


# --------------------------------------------------------------------------
# problem modes


@dataclass
class FusionResult:
    image: MultiBandImage
    prototype: MultiBandImage
    solves: dict[str, DescentResult]
    betas: dict[str, float]
    diagnostics: dict = field(default_factory=dict)


def _modis_band(modis: MultiBandImage, name: str) -> np.ndarray:
    return modis.band(name)


def _low_grid(modis: MultiBandImage) -> GridSpec:
    return modis.grid


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _fuse_j1(prototype: MultiBandImage, modis: MultiBandImage, cfg: FusionConfig,
             observed: MultiBandImage | None, mask, threads: int):
    low = _low_grid(modis)
    j1 = prototype.group_indices(J1)

    def one(j):
        name = prototype.tags[j].name
        prob = make_problem(prototype.bands[j], _modis_band(modis, name), low, cfg,
                            observed=None if observed is None else observed.bands[j],
                            mask=mask, pitch=prototype.pitch)
        res = solve(prob)
        res.stationarity = stationarity(prob, res.u)
        return name, j, res

    return _map(one, j1, threads)


def _series_checks(series, masks):
    if len(series) != len(masks):
        raise ValueError("one mask per image required")
    return build_prototypes(list(zip(series, masks)))


def run_restoration(series, masks, modis: MultiBandImage, i_star: int, cfg: FusionConfig,
                    threads: int = 1) -> FusionResult:
    """Restore the clouded image ``series[i_star]`` on its own acquisition day.

    J1 bands keep observed pixels and take ``beta * u0`` inside the damage
    zone; J2 bands are copied from the prototype.
    """
    prototypes = _series_checks(series, masks)
    proto = prototypes[i_star]
    observed = series[i_star]
    mask = masks[i_star]
    mask = np.zeros(observed.bands.shape[1:], dtype=bool) if mask is None else np.asarray(mask, bool)
    if cfg.gamma <= 0:
        log.info("restoration needs gamma > 0; using restoration_gamma=%g", cfg.restoration_gamma)
        cfg = cfg.with_(gamma=cfg.restoration_gamma)
    out = proto.bands.copy()
    solves, betas = {}, {}
    for name, j, res in _fuse_j1(proto, modis, cfg, observed, mask, threads):
        beta = beta_scaling(observed.bands[j], res.u, mask) if (~mask).any() else 1.0
        band = observed.bands[j].copy()
        band[mask] = beta * res.u[mask]
        out[j] = band
        solves[name], betas[name] = res, beta
    img = MultiBandImage(out, list(proto.tags), observed.day, proto.pitch)
    return FusionResult(img, proto, solves, betas)


def _fuse_to_prototype(proto: MultiBandImage, modis, cfg, day, threads):
    out = proto.bands.copy()
    solves, betas = {}, {}
    for name, j, res in _fuse_j1(proto, modis, cfg, None, None, threads):
        beta = beta_scaling(proto.bands[j], res.u)
        out[j] = beta * res.u
        solves[name], betas[name] = res, beta
    return MultiBandImage(out, list(proto.tags), day, proto.pitch), solves, betas


def run_interpolation(series, masks, modis: MultiBandImage, t_m: int, cfg: FusionConfig,
                      threads: int = 1) -> FusionResult:
    """Synthesize the image for a day strictly between two acquisitions.

    Falls back to :func:`run_restoration` when ``t_m`` is an acquisition day.
    """
    days = [img.day for img in series]
    if t_m in days:
        return run_restoration(series, masks, modis, days.index(t_m), cfg, threads)
    idx = [i for i in range(len(days) - 1) if days[i] < t_m < days[i + 1]]
    if not idx:
        raise ValueError(f"day {t_m} is not inside the acquisition span {days[0]}..{days[-1]}")
    i_star = idx[0]
    prototypes = _series_checks(series, masks)
    pred = predict_prototype(PredictionProblem(prototypes[i_star], prototypes[i_star + 1], t_m, cfg))
    proto = pred.image
    img, solves, betas = _fuse_to_prototype(proto, modis, cfg, t_m, threads)
    return FusionResult(img, proto, solves, betas, {"endpoint_psnr": dict(zip(proto.names, pred.endpoint_psnr))})


def run_extrapolation(series, masks, modis: MultiBandImage, t_m: int, cfg: FusionConfig,
                      threads: int = 1) -> FusionResult:
    """Synthesize the image for a day after the last acquisition from the last prototype."""
    days = [img.day for img in series]
    if not t_m > days[-1]:
        raise ValueError(f"day {t_m} is not after the last acquisition day {days[-1]}")
    prototypes = _series_checks(series, masks)
    proto = prototypes[-1].replace(day=t_m)
    img, solves, betas = _fuse_to_prototype(proto, modis, cfg, t_m, threads)
    return FusionResult(img, proto, solves, betas)
