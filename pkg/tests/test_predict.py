import numpy as np
import pytest

from oracles import gradient_loop, weighted_laplacian_matrix
from varfusion.config import FusionConfig
from varfusion.predict import (PredictionProblem, SolverError, conjugate_gradient, diffusion_step,
                               estimate_source, evolve_ibvp, p_laplacian_flux, predict_prototype,
                               screened_poisson, spatiotemporal_derivatives)
from varfusion.metrics import psnr
from varfusion.raster import BandTag, GridSpec, MultiBandImage
from varfusion.synth import make_scene, make_series
from varfusion.texture import texture_index_static

CFG = FusionConfig()


def _pair(s0, s1, d0=0, d1=10):
    tags = [BandTag(f"b{k}") for k in range(s0.shape[0])]
    return MultiBandImage(s0, tags, d0), MultiBandImage(s1, tags, d1)


def test_problem_validation():
    a, b = _pair(np.ones((1, 4, 4)), np.ones((1, 4, 4)))
    with pytest.raises(ValueError):
        PredictionProblem(a, b, 10)
    with pytest.raises(ValueError):
        PredictionProblem(a, b, 0)
    c, _ = _pair(np.ones((1, 5, 4)), np.ones((1, 5, 4)))
    with pytest.raises(ValueError):
        PredictionProblem(a, MultiBandImage(c.bands, c.tags, 10), 5)


# -- derivatives -------------------------------------------------------------


def test_identical_endpoints_zero_time_derivative():
    s = np.random.default_rng(0).uniform(0, 100, size=(1, 8, 8))
    dt, _ = spatiotemporal_derivatives(PredictionProblem(*_pair(s, s.copy()), 4, CFG), 0)
    assert np.all(dt == 0.0)


def test_constant_offset_time_derivative():
    s = np.random.default_rng(1).uniform(0, 100, size=(1, 8, 8))
    dt, _ = spatiotemporal_derivatives(PredictionProblem(*_pair(s, s + 5.0), 4, CFG), 0)
    np.testing.assert_allclose(dt, 0.5, rtol=1e-12)


def test_constant_endpoints_zero_divergence():
    a, b = _pair(np.full((1, 6, 6), 3.0), np.full((1, 6, 6), 8.0))
    _, div = spatiotemporal_derivatives(PredictionProblem(a, b, 5, CFG), 0)
    assert np.all(div == 0.0)


def test_divergence_term_uses_each_endpoint_index():
    rng = np.random.default_rng(2)
    s0, s1 = rng.uniform(0, 10, size=(2, 1, 7, 7))
    _, div = spatiotemporal_derivatives(PredictionProblem(*_pair(s0, s1), 5, CFG), 0)
    expected = 0
    for s in (s0[0], s1[0]):
        p = texture_index_static(s, CFG)
        g = gradient_loop(s)
        mag = np.maximum(np.hypot(g[0], g[1]), CFG.grad_floor)
        w = np.minimum(mag ** (p - 2), CFG.w_max)
        # -div(w grad s) through the independent edge-list matrix
        expected = expected - 0.5 * (weighted_laplacian_matrix(w) @ s.ravel()).reshape(s.shape)
    np.testing.assert_allclose(div, expected, rtol=1e-10, atol=1e-10)


def test_band_out_of_range():
    a, b = _pair(np.ones((1, 4, 4)), np.ones((1, 4, 4)))
    with pytest.raises(IndexError):
        spatiotemporal_derivatives(PredictionProblem(a, b, 5, CFG), 1)


def test_flux_of_constant_is_zero():
    assert np.all(p_laplacian_flux(np.ones((5, 5)), np.full((5, 5), 1.2)) == 0.0)


# -- linear solvers ----------------------------------------------------------


def test_cg_solves_spd_system():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(20, 20))
    A = m @ m.T + 20 * np.eye(20)
    b = rng.normal(size=20)
    x, its = conjugate_gradient(lambda v: A @ v, b, tol=1e-12)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-9)
    assert its <= 20 + 5


def test_cg_rejects_indefinite():
    A = np.diag([1.0, -1.0, 2.0])
    with pytest.raises(SolverError):
        conjugate_gradient(lambda v: A @ v, np.ones(3))


def test_cg_reports_nonconvergence():
    A = np.diag(np.logspace(0, 8, 50))
    with pytest.raises(SolverError):
        conjugate_gradient(lambda v: A @ v, np.ones(50), tol=1e-14, max_iters=3)


def test_screened_poisson_trivial():
    np.testing.assert_array_equal(screened_poisson(np.full((6, 6), 2.5), 0.5), 2.5)
    assert np.all(screened_poisson(np.zeros((6, 6)), 0.5) == 0.0)


def test_screened_poisson_dense_oracle():
    f = np.random.default_rng(4).normal(size=(8, 8))
    lam = 0.5
    A = np.eye(64) + lam**2 * weighted_laplacian_matrix(np.ones((8, 8)))
    v_dense = np.linalg.solve(A, f.ravel()).reshape(8, 8)
    v = screened_poisson(f, lam, tol=1e-10)
    assert np.max(np.abs(v - v_dense)) <= 1e-6
    assert np.linalg.norm(A @ v.ravel() - f.ravel()) <= 1e-8 * np.linalg.norm(f) * 10


def test_estimate_source_residual():
    rng = np.random.default_rng(5)
    s0, s1 = rng.uniform(0, 50, size=(2, 1, 12, 12))
    prob = PredictionProblem(*_pair(s0, s1), 5, CFG)
    dt, div = spatiotemporal_derivatives(prob, 0)
    f = dt - div
    v = estimate_source(prob, 0)
    A = np.eye(144) + CFG.lambda1**2 * weighted_laplacian_matrix(np.ones((12, 12)))
    assert np.linalg.norm(A @ v.ravel() - f.ravel()) <= CFG.cg_tol * np.linalg.norm(f)


# -- evolution ---------------------------------------------------------------


def test_evolve_constant_stationary():
    levels = evolve_ibvp(np.full((6, 6), 4.0), np.zeros((6, 6)), 0, 5, CFG)
    assert len(levels) == 6
    for _, u in levels:
        np.testing.assert_array_equal(u, 4.0)


def test_evolve_constant_source():
    levels = evolve_ibvp(np.full((6, 6), 4.0), np.full((6, 6), 0.3), 2, 6, CFG)
    for t, u in levels:
        np.testing.assert_allclose(u, 4.0 + 0.3 * (t - 2), rtol=1e-12)


def test_evolve_first_level_is_initial():
    u0 = np.random.default_rng(6).uniform(size=(6, 6))
    levels = evolve_ibvp(u0, np.zeros((6, 6)), 0, 2, CFG)
    assert levels[0][1] is u0 or np.array_equal(levels[0][1], u0)
    assert levels[0][0] == 0


def test_evolve_conserves_mean():
    u0 = np.random.default_rng(7).uniform(0, 100, size=(16, 16))
    for _, u in evolve_ibvp(u0, np.zeros((16, 16)), 0, 4, CFG):
        assert u.mean() == pytest.approx(u0.mean(), rel=1e-10)


def test_evolve_rejects_reversed_interval():
    with pytest.raises(ValueError):
        evolve_ibvp(np.ones((4, 4)), np.zeros((4, 4)), 3, 3, CFG)


def test_diffusion_step_dense_oracle():
    rng = np.random.default_rng(8)
    u_old = rng.uniform(0, 10, size=(6, 6))
    v = rng.normal(size=(6, 6))
    dt = 0.7
    p = texture_index_static(u_old, CFG)
    cfg = CFG.with_(cg_tol=1e-13)
    u = diffusion_step(u_old, v, dt, p, cfg)
    g = gradient_loop(u_old)
    w = np.clip(np.maximum(np.hypot(g[0], g[1]), CFG.grad_floor) ** (p - 2), CFG.w_min, CFG.w_max)
    A = np.eye(36) + dt * weighted_laplacian_matrix(w)
    u_dense = np.linalg.solve(A, (u_old + dt * v).ravel()).reshape(6, 6)
    assert np.max(np.abs(u - u_dense)) <= 1e-8


# -- prediction --------------------------------------------------------------


def test_predict_identical_constant_endpoints():
    s = np.full((2, 16, 16), 70.0)
    pred = predict_prototype(PredictionProblem(*_pair(s, s.copy()), 4, CFG))
    np.testing.assert_array_equal(pred.image.bands, s)
    assert pred.image.day == 4


def test_predict_identical_textured_endpoints_nearly_stationary():
    # the smoothed source only approximately cancels the diffusion of edges
    s = make_scene(0, GridSpec(24, 24), 5, bands=2).image.bands
    pred = predict_prototype(PredictionProblem(*_pair(s, s.copy()), 4, CFG))
    assert all(psnr(pred.image.bands[j], s[j], 255) > 50.0 for j in range(2))


def test_predict_constant_offset_midpoint():
    s = np.full((1, 16, 16), 40.0)
    pred = predict_prototype(PredictionProblem(*_pair(s, s + 6.0), 5, CFG))
    np.testing.assert_allclose(pred.image.bands, 43.0, rtol=0, atol=1e-6)


def test_predict_linear_fade_endpoint_psnr():
    scene = make_scene(11, GridSpec(48, 48), 8, bands=2)
    start, end = make_series(scene, [0, 10], "linear", seed=12)
    pred = predict_prototype(PredictionProblem(start, end, 5, CFG))
    assert min(pred.endpoint_psnr) >= 40.0
    assert pred.image.names == start.names
