"""Raster containers and the finite-difference / convolution primitives.

A raster is a plain 2-D ``float64`` array of shape ``(height, width)``.
A vector field is an array of shape ``(2, height, width)`` whose first
component is the x (column) direction and second the y (row) direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

#: Luma weights for the (blue, green, red) slots of the spectral energy map.
SPECTRAL_WEIGHTS = (0.114, 0.587, 0.299)

J1 = "J1"
J2 = "J2"


@dataclass(frozen=True)
class GridSpec:
    """Rectangular sample grid: pixel counts and spacing."""

    width: int
    height: int
    pitch_x: float = 1.0
    pitch_y: float = 1.0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.width}x{self.height}")
        if not (self.pitch_x > 0 and self.pitch_y > 0):
            raise ValueError("grid pitches must be positive")

    @classmethod
    def of(cls, array, pitch_x=1.0, pitch_y=1.0) -> "GridSpec":
        h, w = np.shape(array)[-2:]
        return cls(int(w), int(h), pitch_x, pitch_y)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def pitch(self) -> tuple[float, float]:
        return (self.pitch_x, self.pitch_y)

    @property
    def cell_area(self) -> float:
        return self.pitch_x * self.pitch_y

    @property
    def extent(self) -> tuple[float, float]:
        return (self.width * self.pitch_x, self.height * self.pitch_y)

    @property
    def area(self) -> float:
        ex, ey = self.extent
        return ex * ey

    @property
    def diameter(self) -> float:
        return math.hypot(*self.extent)

    def coarsen(self, rx: int, ry: int | None = None) -> "GridSpec":
        """Low-resolution grid whose samples sit every ``rx`` (``ry``) pixels."""
        ry = rx if ry is None else ry
        return GridSpec(self.width // rx, self.height // ry,
                        self.pitch_x * rx, self.pitch_y * ry)


@dataclass(frozen=True)
class BandTag:
    name: str
    group: str = J1

    def __post_init__(self):
        if self.group not in (J1, J2):
            raise ValueError(f"band group must be J1 or J2, got {self.group!r}")


@dataclass
class MultiBandImage:
    """Stack of co-registered bands, shape ``(bands, height, width)``."""

    bands: np.ndarray
    tags: list[BandTag]
    day: int = 0
    pitch: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        self.bands = np.asarray(self.bands, dtype=np.float64)
        if self.bands.ndim == 2:
            self.bands = self.bands[None]
        if self.bands.ndim != 3:
            raise ValueError("bands must be a (bands, height, width) array")
        self.tags = [t if isinstance(t, BandTag) else BandTag(*t) if isinstance(t, tuple)
                     else BandTag(str(t)) for t in self.tags]
        if len(self.tags) != self.bands.shape[0]:
            raise ValueError("one tag per band required")
        names = [t.name for t in self.tags]
        if len(set(names)) != len(names):
            raise ValueError(f"band tags must be unique: {names}")
        check_finite(self.bands)

    @property
    def grid(self) -> GridSpec:
        return GridSpec.of(self.bands, *self.pitch)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tags]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no band tagged {name!r}") from None

    def band(self, name: str) -> np.ndarray:
        return self.bands[self.index(name)]

    def group_indices(self, group: str) -> list[int]:
        return [i for i, t in enumerate(self.tags) if t.group == group]

    def replace(self, bands=None, day=None) -> "MultiBandImage":
        return MultiBandImage(self.bands.copy() if bands is None else bands, list(self.tags),
                              self.day if day is None else day, self.pitch)


@dataclass(frozen=True)
class Kernel:
    """K x K resampling kernel, anchored at the bottom-right tap."""

    taps: np.ndarray = field(repr=False)
    kind: str = "box"

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] != taps.shape[1]:
            raise ValueError("kernel taps must be a square K x K array")
        if not np.all(np.isfinite(taps)):
            raise ValueError("kernel taps must be finite")
        object.__setattr__(self, "taps", taps)

    @property
    def size(self) -> int:
        return self.taps.shape[0]

    @classmethod
    def box(cls, size: int) -> "Kernel":
        if size < 1:
            raise ValueError("kernel size must be >= 1")
        return cls(np.full((size, size), 1.0 / size**2), "box")

    @classmethod
    def lanczos(cls, size: int, lobes: int = 2) -> "Kernel":
        """Separable Lanczos window sampled at ``size`` points, unit mass."""
        if size < 1:
            raise ValueError("kernel size must be >= 1")
        x = (np.arange(size) - (size - 1) / 2.0) * (2.0 * lobes / (size + 1))
        w = np.sinc(x) * np.sinc(x / lobes)
        w /= w.sum()
        return cls(np.outer(w, w), "lanczos")


def check_finite(values) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError("raster contains NaN or Inf values")


def as_raster(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError(f"raster must be 2-D, got shape {u.shape}")
    if u.shape[0] < 2 or u.shape[1] < 2:
        raise ValueError("raster must be at least 2x2")
    check_finite(u)
    return u


def _same_shape(a, b, what="rasters"):
    if np.shape(a)[-2:] != np.shape(b)[-2:]:
        raise ValueError(f"grid mismatch between {what}: {np.shape(a)} vs {np.shape(b)}")


def gradient(u, pitch=(1.0, 1.0)) -> np.ndarray:
    """Forward differences with zero normal derivative on the far borders."""
    u = as_raster(u)
    px, py = pitch
    g = np.zeros((2,) + u.shape)
    g[0, :, :-1] = (u[:, 1:] - u[:, :-1]) / px
    g[1, :-1, :] = (u[1:, :] - u[:-1, :]) / py
    return g


def divergence(f, pitch=(1.0, 1.0)) -> np.ndarray:
    """Negative adjoint of :func:`gradient` under the plain pixel inner product."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3 or f.shape[0] != 2:
        raise ValueError("vector field must have shape (2, height, width)")
    px, py = pitch
    fx, fy = f[0], f[1]
    d = np.zeros(f.shape[1:])
    d[:, :-1] += fx[:, :-1] / px
    d[:, 1:] -= fx[:, :-1] / px
    d[:-1, :] += fy[:-1, :] / py
    d[1:, :] -= fy[:-1, :] / py
    return d


def laplacian(u, pitch=(1.0, 1.0)) -> np.ndarray:
    """Five-point Laplacian with Neumann borders, ``div(grad u)``."""
    return divergence(gradient(u, pitch), pitch)


def gaussian_taps(sigma: float, pitch: float = 1.0) -> np.ndarray:
    """1-D factor of G_sigma sampled on the grid, truncated at ceil(4 sigma)."""
    radius = int(math.ceil(4.0 * sigma / pitch))
    x = np.arange(-radius, radius + 1) * pitch
    return np.exp(-x**2 / (2.0 * sigma**2)) / (math.sqrt(2.0 * math.pi) * sigma) * pitch


def convolve_gaussian(u, sigma: float, pitch=(1.0, 1.0)) -> np.ndarray:
    """Convolve with the 2-D Gaussian, zero-extending ``u`` outside the grid.

    Taps come straight from the continuous density (times the cell size) and
    are not renormalised, so mass is lost near the border.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    u = as_raster(u)
    out = ndimage.correlate1d(u, gaussian_taps(sigma, pitch[0]), axis=1, mode="constant", cval=0.0)
    return ndimage.correlate1d(out, gaussian_taps(sigma, pitch[1]), axis=0, mode="constant", cval=0.0)


def _ratios(high: GridSpec, low: GridSpec) -> tuple[int, int]:
    rs = []
    for hp, lp, hn, ln in ((high.pitch_x, low.pitch_x, high.width, low.width),
                           (high.pitch_y, low.pitch_y, high.height, low.height)):
        r = lp / hp
        ri = int(round(r))
        if ri < 1 or abs(r - ri) > 1e-9 * r:
            raise ValueError(f"low/high pitch ratio {r} is not a positive integer")
        if ln * ri > hn:
            raise ValueError(f"low grid ({ln} samples every {ri}) does not fit in {hn} high pixels")
        rs.append(ri)
    return rs[0], rs[1]


def _anchors(high: GridSpec, low: GridSpec):
    rx, ry = _ratios(high, low)
    ax = np.arange(low.width) * rx + rx - 1
    ay = np.arange(low.height) * ry + ry - 1
    return ax, ay


def downsample(image, kernel: Kernel, low: GridSpec, pitch=(1.0, 1.0)) -> np.ndarray:
    """Evaluate ``kernel * image`` at the low-grid sample points.

    Low sample ``(i, j)`` sits on high pixel ``((i+1) r_x - 1, (j+1) r_y - 1)``
    and collects the K x K pixels above and to the left of it, with zero
    extension outside the grid.
    """
    image = as_raster(image)
    high = GridSpec.of(image, *pitch)
    ax, ay = _anchors(high, low)
    k = kernel.size
    padded = np.zeros((image.shape[0] + k - 1, image.shape[1] + k - 1))
    padded[k - 1:, k - 1:] = image
    out = np.zeros((low.height, low.width))
    ix = ax + (k - 1)
    iy = ay + (k - 1)
    for q in range(k):
        rows = padded[iy - q]
        for p in range(k):
            out += kernel.taps[q, p] * rows[:, ix - p]
    return out


def downsample_adjoint(residual, kernel: Kernel, high: GridSpec, low: GridSpec) -> np.ndarray:
    """Exact transpose of :func:`downsample`: spread low-grid values back through the taps."""
    residual = np.asarray(residual, dtype=np.float64)
    if residual.shape != low.shape:
        raise ValueError(f"residual shape {residual.shape} does not match low grid {low.shape}")
    ax, ay = _anchors(high, low)
    k = kernel.size
    acc = np.zeros((high.height + k - 1, high.width + k - 1))
    ix = ax + (k - 1)
    iy = ay + (k - 1)
    for q in range(k):
        for p in range(k):
            acc[np.ix_(iy - q, ix - p)] += kernel.taps[q, p] * residual
    return acc[k - 1:, k - 1:]


def spectral_energy(img: MultiBandImage, slots=("B2", "B3", "B4")) -> np.ndarray:
    """Weighted sum of the (blue, green, red) bands with the luma weights.

    ``slots`` names the bands (or gives band indices) for the three slots.
    """
    if len(slots) < 3 or img.bands.shape[0] < 3:
        raise ValueError("spectral energy needs three designated bands")
    idx = [s if isinstance(s, (int, np.integer)) else img.index(s) for s in slots[:3]]
    return sum(w * img.bands[i] for w, i in zip(SPECTRAL_WEIGHTS, idx))
