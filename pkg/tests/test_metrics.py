import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import haarpsi_loop, ssim_loop
from varfusion.metrics import (band_report, corr, corr_laplace, haarpsi, ndvi, psnr, rmse, rmse_sqrt,
                               ssim)
from varfusion.raster import BandTag, MultiBandImage, laplacian

skimage_metrics = pytest.importorskip("skimage.metrics")


@pytest.fixture
def pair():
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 255, size=(32, 32))
    b = np.clip(a + rng.normal(0, 20, size=a.shape), 0, 255)
    return a, b


def test_rmse_trivial(pair):
    a, _ = pair
    assert rmse(a, a) == 0.0
    assert rmse(a, a + 1) == pytest.approx(1.0, rel=1e-12)
    assert rmse_sqrt(a, a + 3) == pytest.approx(3.0, rel=1e-12)


def test_rmse_loop_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 4, 4))
    total = 0.0
    for i in range(4):
        for j in range(4):
            total += (a[i, j] - b[i, j]) ** 2
    assert rmse(a, b) == pytest.approx(total / 16, rel=1e-14)


def test_grid_mismatch():
    with pytest.raises(ValueError):
        rmse(np.ones((3, 3)), np.ones((3, 4)))


def test_corr_cases(pair):
    a, b = pair
    assert corr(a, a) == pytest.approx(1.0, abs=1e-14)
    assert corr(a, -a) == pytest.approx(-1.0, abs=1e-14)
    assert corr(a, 2 * a + 3) == pytest.approx(1.0, abs=1e-14)
    assert corr(a, b) == pytest.approx(np.corrcoef(a.ravel(), b.ravel())[0, 1], rel=1e-12)
    with pytest.raises(ValueError):
        corr(a, np.full_like(a, 7.0))


def test_corr_laplace_cases(pair):
    a, b = pair
    yy, xx = np.mgrid[0:32, 0:32]
    assert corr_laplace(a, a) == pytest.approx(1.0, abs=1e-14)
    assert corr_laplace(a, a + 3 * xx - 2 * yy + 5) == pytest.approx(1.0, abs=1e-12)
    la, lb = laplacian(a)[1:-1, 1:-1], laplacian(b)[1:-1, 1:-1]
    assert corr_laplace(a, b) == pytest.approx(np.corrcoef(la.ravel(), lb.ravel())[0, 1], rel=1e-12)


def test_ssim_identity_and_oracles():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 255, size=(16, 16))
    b = rng.uniform(0, 255, size=(16, 16))
    assert ssim(a, a, 255) == pytest.approx(1.0, abs=1e-14)
    assert ssim(a, b, 255) == pytest.approx(ssim_loop(a, b, 255), abs=1e-8)
    ref = skimage_metrics.structural_similarity(a, b, data_range=255, gaussian_weights=True, sigma=1.5,
                                                use_sample_covariance=False)
    assert ssim(a, b, 255) == pytest.approx(ref, abs=1e-8)


def test_ssim_against_constant_bounded(pair):
    a, _ = pair
    assert -1.0 <= ssim(a, np.full_like(a, 100.0), 255) <= 1.0


def test_ssim_errors():
    with pytest.raises(ValueError):
        ssim(np.ones((10, 10)), np.ones((10, 10)), 255)
    with pytest.raises(ValueError):
        ssim(np.ones((12, 12)), np.ones((12, 12)), 0)


def test_haarpsi_identity_and_oracle(pair):
    a, b = pair
    assert haarpsi(a, a) == pytest.approx(1.0, abs=1e-12)
    assert haarpsi(a, b) == pytest.approx(haarpsi_loop(a, b), abs=1e-6)
    assert 0.0 <= haarpsi(a, b) < 1.0


def test_haarpsi_too_small():
    with pytest.raises(ValueError):
        haarpsi(np.ones((7, 9)), np.ones((7, 9)))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 16, 16), elements=st.floats(0, 255)))
def test_symmetry_and_bounds(ab):
    a, b = ab
    assert ssim(a, b, 255) == pytest.approx(ssim(b, a, 255), abs=1e-12)
    h = haarpsi(a, b)
    assert h == pytest.approx(haarpsi(b, a), abs=1e-12)
    assert 0.0 <= h <= 1.0
    if np.ptp(a) > 0 and np.ptp(b) > 0:
        assert corr(a, b) == pytest.approx(corr(b, a), abs=1e-12)
        assert -1.0 <= corr(a, b) <= 1.0


def test_psnr_cases(pair):
    a, b = pair
    assert psnr(a, a + 1, 255) == pytest.approx(20 * math.log10(255), rel=1e-12)
    assert psnr(a, a + 1, 255) == pytest.approx(48.13, abs=5e-3)
    halved = psnr(a, a + 1 / math.sqrt(2), 255) - psnr(a, a + 1, 255)
    assert halved == pytest.approx(3.0103, abs=1e-4)
    assert psnr(a, a, 255) == math.inf
    assert psnr(a, b, 255) == pytest.approx(10 * math.log10(255**2 / np.mean((a - b) ** 2)), rel=1e-12)


def _image(red, nir):
    return MultiBandImage(np.stack([red, nir]), [BandTag("B4"), BandTag("B8a")])


def test_ndvi_cases():
    x = np.random.default_rng(3).uniform(1, 100, size=(5, 5))
    assert np.all(ndvi(_image(x, x)) == 0.0)
    assert np.all(ndvi(_image(np.zeros_like(x), x)) == 1.0)
    red, nir = np.random.default_rng(4).uniform(1, 100, size=(2, 5, 5))
    expected = np.array([[(nir[i, j] - red[i, j]) / (nir[i, j] + red[i, j]) for j in range(5)] for i in range(5)])
    np.testing.assert_allclose(ndvi(_image(red, nir)), expected, rtol=1e-14)


def test_ndvi_zero_denominator_warns(caplog):
    red = np.zeros((3, 3))
    nir = np.zeros((3, 3))
    nir[0, 0] = 2.0
    with caplog.at_level(logging.WARNING, logger="varfusion.metrics"):
        out = ndvi(_image(red, nir))
    assert out[0, 0] == 1.0 and np.all(out.ravel()[1:] == 0.0)
    assert "8 pixels" in caplog.text


def test_ndvi_missing_band():
    with pytest.raises(KeyError):
        ndvi(MultiBandImage(np.ones((1, 3, 3)), [BandTag("B4")]))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 6, 6), elements=st.floats(0, 1e4)))
def test_ndvi_bounded(rn):
    out = ndvi(_image(rn[0], rn[1]))
    assert np.all(out >= -1.0) and np.all(out <= 1.0)


def test_band_report(pair):
    a, b = pair
    row = band_report(a, b, 255)
    assert set(row) == {"rmse", "rmse_sqrt", "corr", "corr_laplace", "ssim", "haarpsi", "psnr"}
    assert row["rmse_sqrt"] == pytest.approx(math.sqrt(row["rmse"]))
    assert math.isnan(band_report(np.ones((6, 6)), np.ones((6, 6)), 255)["corr"])
