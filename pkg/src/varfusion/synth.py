"""Synthetic agricultural scenes with ground truth, clouds and a coarse sensor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import J1, J2, BandTag, GridSpec, Kernel, MultiBandImage, downsample

#: Default band layout: four J1 bands (blue, green, red, NIR) and one J2 band.
DEFAULT_TAGS = [BandTag("B2", J1), BandTag("B3", J1), BandTag("B4", J1),
                BandTag("B8a", J1), BandTag("B5", J2)]


@dataclass
class Scene:
    image: MultiBandImage
    labels: np.ndarray  # field index per pixel
    cap: float = 255.0


def _tags_for(bands: int):
    if bands <= len(DEFAULT_TAGS):
        return DEFAULT_TAGS[:bands]
    return DEFAULT_TAGS + [BandTag(f"X{i}", J2) for i in range(bands - len(DEFAULT_TAGS))]


def make_scene(seed: int, grid: GridSpec, n_fields: int, bands: int = 5, cap: float = 255.0,
               low: float = 0.15, high: float = 0.6, day: int = 0) -> Scene:
    """Piecewise-constant Voronoi field map with one intensity per field and band.

    Intensities are drawn in ``[low * cap, high * cap]`` so that later growth
    stays inside ``[0, cap]``.
    """
    if n_fields < 1:
        raise ValueError("n_fields must be >= 1")
    rng = np.random.default_rng(seed)
    centres = rng.uniform([0, 0], [grid.width, grid.height], size=(n_fields, 2))
    yy, xx = np.mgrid[0:grid.height, 0:grid.width]
    d2 = (xx[None] + 0.5 - centres[:, 0, None, None]) ** 2 + (yy[None] + 0.5 - centres[:, 1, None, None]) ** 2
    labels = np.argmin(d2, axis=0)
    signatures = rng.uniform(low * cap, high * cap, size=(bands, n_fields))
    img = MultiBandImage(signatures[:, labels], _tags_for(bands), day, grid.pitch)
    return Scene(img, labels, cap)


def boundary_fraction(labels) -> float:
    """Share of pixels whose right or lower neighbour lies in another field."""
    labels = np.asarray(labels)
    edge = np.zeros(labels.shape, dtype=bool)
    edge[:, :-1] |= labels[:, 1:] != labels[:, :-1]
    edge[:-1, :] |= labels[1:, :] != labels[:-1, :]
    return float(edge.mean())


def _trajectory(kind: str, s, rates, mid):
    if kind == "constant":
        return np.ones_like(rates)
    if kind == "linear":
        return 1.0 + rates * s
    if kind == "logistic":
        # rescaled so the factor is 1 at s=0 and 1+rate at s=1
        k = 8.0
        lo = 1.0 / (1.0 + np.exp(k * mid))
        hi = 1.0 / (1.0 + np.exp(-k * (1.0 - mid)))
        cur = 1.0 / (1.0 + np.exp(-k * (s - mid)))
        return 1.0 + rates * (cur - lo) / (hi - lo)
    raise ValueError(f"unknown evolution {kind!r}")


def make_series(scene: Scene, days, evolution: str = "linear", seed: int = 0,
                max_rate: float = 0.5) -> list[MultiBandImage]:
    """Frames of the scene on ``days`` with per-field multiplicative growth.

    Each field (and band) gets its own relative change in ``[-max_rate/2,
    max_rate]`` over the full day range, following a linear or logistic
    profile (logistic midpoints differ per field).
    """
    days = [int(d) for d in days]
    if not days or any(b <= a for a, b in zip(days, days[1:])):
        raise ValueError("days must be a non-empty increasing sequence")
    rng = np.random.default_rng(seed)
    base = scene.image
    n_bands = base.bands.shape[0]
    n_fields = int(scene.labels.max()) + 1
    rates = rng.uniform(-0.5 * max_rate, max_rate, size=(n_bands, n_fields))
    mids = rng.uniform(0.25, 0.75, size=(n_bands, n_fields))
    span = max(days[-1] - days[0], 1)
    frames = []
    for d in days:
        s = (d - days[0]) / span
        factors = _trajectory(evolution, s, rates, mids)
        bands = base.bands * factors[:, scene.labels]
        frames.append(MultiBandImage(np.clip(bands, 0.0, scene.cap), list(base.tags), d, base.pitch))
    return frames


def make_clouds(seed: int, grid: GridSpec, coverage: float, n_ellipses: int = 6) -> np.ndarray:
    """Union of random ellipses covering ``coverage`` of the grid.

    Each ellipse contributes a score ``1 - r`` (``r`` its normalised radius);
    thresholding the pixelwise maximum at the matching quantile shrinks or
    grows every ellipse together until the requested share is covered.
    """
    if not 0.0 <= coverage <= 0.6:
        raise ValueError("cloud coverage must lie in [0, 0.6]")
    mask = np.zeros(grid.shape, dtype=bool)
    if coverage == 0.0:
        return mask
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:grid.height, 0:grid.width] + 0.5
    score = np.full(grid.shape, -np.inf)
    for _ in range(n_ellipses):
        cx, cy = rng.uniform(0, grid.width), rng.uniform(0, grid.height)
        ax, ay = rng.uniform(0.15, 0.4) * grid.width, rng.uniform(0.15, 0.4) * grid.height
        phi = rng.uniform(0, np.pi)
        dx, dy = xx - cx, yy - cy
        u = (dx * np.cos(phi) + dy * np.sin(phi)) / ax
        v = (-dx * np.sin(phi) + dy * np.cos(phi)) / ay
        score = np.maximum(score, 1.0 - np.sqrt(u**2 + v**2))
    n_target = int(round(coverage * score.size))
    order = np.argsort(-score, axis=None, kind="stable")
    flat = mask.ravel()
    flat[order[:n_target]] = True
    return flat.reshape(grid.shape)


def make_modis(truth: MultiBandImage, kernel: Kernel, low: GridSpec, noise_sd: float = 0.0,
               seed: int = 0) -> MultiBandImage:
    """Coarse-sensor view of the J1 bands: kernel resampling plus Gaussian noise."""
    idx = truth.group_indices(J1)
    rng = np.random.default_rng(seed)
    bands = np.stack([downsample(truth.bands[i], kernel, low, truth.pitch) for i in idx])
    if noise_sd > 0:
        bands = bands + rng.normal(0.0, noise_sd, size=bands.shape)
    return MultiBandImage(bands, [truth.tags[i] for i in idx], truth.day, low.pitch)


@dataclass
class Instance:
    """Complete synthetic fusion case with ground truth."""

    series: list[MultiBandImage]
    masks: list[np.ndarray]
    modis: MultiBandImage
    truth: MultiBandImage
    target_day: int
    scene: Scene


def make_instance(seed: int, size: int = 64, ratio: int = 8, mode: str = "a2", n_fields: int = 12,
                  bands: int = 5, coverage: float = 0.3, evolution: str = "logistic",
                  noise_sd: float = 0.0) -> Instance:
    """Three acquisition days (0, 10, 20), truth on the target day, simulated MODIS.

    ``a1``: target day 10, the day-10 image is clouded.
    ``a2``: target day 5 between the cloud-free days 0 and 10; day 20 is clouded.
    ``a3``: target day 25 after the last acquisition.
    """
    grid = GridSpec(size, size)
    scene = make_scene(seed, grid, n_fields, bands)
    target = {"a1": 10, "a2": 5, "a3": 25}[mode]
    days = [0, 10, 20]
    frames = make_series(scene, sorted(set(days + [target])), evolution, seed + 1)
    by_day = {f.day: f for f in frames}
    truth = by_day[target]
    series = [by_day[d] for d in days]
    masks = [np.zeros(grid.shape, dtype=bool) for _ in days]
    clouded = 1 if mode == "a1" else 2
    masks[clouded] = make_clouds(seed + 2, grid, coverage)
    # clouds saturate the damaged pixels
    bands = series[clouded].bands.copy()
    bands[:, masks[clouded]] = scene.cap
    series[clouded] = series[clouded].replace(bands=bands)
    low = grid.coarsen(ratio)
    modis = make_modis(truth, Kernel.box(ratio), low, noise_sd, seed + 3)
    return Instance(series, masks, modis, truth, target, scene)
