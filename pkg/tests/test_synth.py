import hashlib

import numpy as np
import pytest

from varfusion.raster import J1, GridSpec, Kernel, downsample
from varfusion.synth import (boundary_fraction, make_clouds, make_instance, make_modis, make_scene,
                             make_series)

GRID = GridSpec(32, 32)

# frozen from the first seeded run of make_instance(42, size=32, ratio=4, mode="a2", n_fields=8)
GOLDEN = "c0729227a780d628e816ecc8ae118cf9b7c30f537beea061bc71693b3cd9b0e5"


def test_scene_deterministic():
    a = make_scene(3, GRID, 7).image.bands
    b = make_scene(3, GRID, 7).image.bands
    assert np.array_equal(a, b)
    assert not np.array_equal(a, make_scene(4, GRID, 7).image.bands)


def test_single_field_is_constant():
    bands = make_scene(0, GRID, 1).image.bands
    assert np.all(bands == bands[:, :1, :1])


def test_scene_values_in_range():
    scene = make_scene(1, GRID, 10, cap=255.0)
    assert 0.0 <= scene.image.bands.min() and scene.image.bands.max() <= 255.0
    with pytest.raises(ValueError):
        make_scene(0, GRID, 0)


def test_boundary_share():
    scene = make_scene(5, GridSpec(128, 128), 20)
    assert boundary_fraction(scene.labels) < 0.15


def test_constant_evolution():
    frames = make_series(make_scene(2, GRID, 6), [0, 5, 10], "constant")
    assert all(np.array_equal(f.bands, frames[0].bands) for f in frames)
    assert [f.day for f in frames] == [0, 5, 10]


def test_linear_midpoint_is_mean():
    f0, f1, f2 = make_series(make_scene(2, GRID, 6), [0, 5, 10], "linear", seed=9)
    np.testing.assert_allclose(f1.bands, 0.5 * (f0.bands + f2.bands), rtol=1e-12)


def test_series_rejects_bad_days():
    scene = make_scene(2, GRID, 3)
    with pytest.raises(ValueError):
        make_series(scene, [0, 0])
    with pytest.raises(ValueError):
        make_series(scene, [0, 5], "cubic")


def test_golden_checksum():
    inst = make_instance(42, size=32, ratio=4, mode="a2", n_fields=8)
    h = hashlib.sha256()
    for f in inst.series:
        h.update(f.bands.tobytes())
    for m in inst.masks:
        h.update(m.tobytes())
    h.update(inst.modis.bands.tobytes())
    h.update(inst.truth.bands.tobytes())
    assert h.hexdigest() == GOLDEN


@pytest.mark.parametrize("coverage", [0.1, 0.3, 0.5])
def test_cloud_coverage(coverage):
    mask = make_clouds(7, GridSpec(64, 64), coverage)
    assert abs(mask.mean() - coverage) <= 0.02
    assert np.array_equal(mask, make_clouds(7, GridSpec(64, 64), coverage))


def test_cloud_edge_cases():
    assert not make_clouds(0, GRID, 0.0).any()
    with pytest.raises(ValueError):
        make_clouds(0, GRID, 0.61)


def test_modis_noiseless_is_downsample():
    truth = make_scene(3, GRID, 5).image
    low = GRID.coarsen(4)
    modis = make_modis(truth, Kernel.box(4), low)
    assert modis.names == [truth.tags[i].name for i in truth.group_indices(J1)]
    for name in modis.names:
        np.testing.assert_array_equal(modis.band(name), downsample(truth.band(name), Kernel.box(4), low))


def test_modis_constant_truth():
    truth = make_scene(3, GRID, 1).image
    modis = make_modis(truth, Kernel.box(4), GRID.coarsen(4))
    for j in range(modis.bands.shape[0]):
        np.testing.assert_allclose(modis.bands[j], modis.bands[j, 0, 0], rtol=1e-14)


def test_modis_noise_reproducible():
    truth = make_scene(3, GRID, 5).image
    low = GRID.coarsen(4)
    a = make_modis(truth, Kernel.box(4), low, noise_sd=2.0, seed=1)
    b = make_modis(truth, Kernel.box(4), low, noise_sd=2.0, seed=1)
    c = make_modis(truth, Kernel.box(4), low, noise_sd=2.0, seed=2)
    assert np.array_equal(a.bands, b.bands)
    assert not np.array_equal(a.bands, c.bands)


@pytest.mark.parametrize("mode, target", [("a1", 10), ("a2", 5), ("a3", 25)])
def test_instance_layout(mode, target):
    inst = make_instance(1, size=16, ratio=4, mode=mode, n_fields=4)
    assert inst.target_day == target == inst.truth.day
    assert [f.day for f in inst.series] == [0, 10, 20]
    clouded = 1 if mode == "a1" else 2
    assert inst.masks[clouded].any()
    assert np.all(inst.series[clouded].bands[:, inst.masks[clouded]] == 255.0)
