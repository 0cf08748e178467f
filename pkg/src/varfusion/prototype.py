"""Structural prototypes of a cloud-corrupted image series."""

from __future__ import annotations

import numpy as np

from .raster import MultiBandImage


class DegeneratePrototype(ValueError):
    """Raised when the fill weight cannot be formed (no clear pixels, zero energy)."""


def gamma_coefficient(current, previous_prototype, mask) -> float:
    """Least-squares weight of the previous prototype over the undamaged pixels.

    ``mask`` is True on damaged pixels; both the inner product and the squared
    norm run over ``~mask`` only.
    """
    current = np.asarray(current, dtype=np.float64)
    previous_prototype = np.asarray(previous_prototype, dtype=np.float64)
    clear = ~np.asarray(mask, dtype=bool)
    if current.shape != previous_prototype.shape or clear.shape != current.shape:
        raise ValueError("grid mismatch between image, prototype and mask")
    if not clear.any():
        raise DegeneratePrototype("every pixel is damaged")
    prev = previous_prototype[clear]
    denom = float(np.dot(prev, prev))
    if denom == 0.0:
        raise DegeneratePrototype("previous prototype vanishes on the undamaged pixels")
    return float(np.dot(current[clear], prev)) / denom


def build_prototypes(series) -> list[MultiBandImage]:
    """Fill each image's damaged pixels from the previous prototype.

    ``series`` is a time-ordered sequence of ``(image, mask)`` pairs; the
    first mask must be empty (``None`` counts as empty). Pixels outside the
    mask are copied unchanged, pixels inside get ``gamma * previous``.
    """
    series = list(series)
    if not series:
        raise ValueError("empty series")
    first_img, first_mask = series[0]
    if first_mask is not None and np.any(first_mask):
        raise ValueError("the first image of the series must be cloud-free")
    grid_shape = first_img.bands.shape
    days = [img.day for img, _ in series]
    if any(b <= a for a, b in zip(days, days[1:])):
        raise ValueError(f"series must be strictly time-ordered, got days {days}")

    prototypes = [first_img.replace()]
    for img, mask in series[1:]:
        if img.bands.shape != grid_shape:
            raise ValueError(f"grid mismatch: {img.bands.shape} vs {grid_shape}")
        if img.names != first_img.names:
            raise ValueError("band tags differ across the series")
        prev = prototypes[-1]
        if mask is None or not np.any(mask):
            prototypes.append(img.replace())
            continue
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != grid_shape[1:]:
            raise ValueError(f"mask shape {mask.shape} does not match grid {grid_shape[1:]}")
        bands = img.bands.copy()
        for k in range(bands.shape[0]):
            gam = gamma_coefficient(img.bands[k], prev.bands[k], mask)
            bands[k][mask] = gam * prev.bands[k][mask]
        prototypes.append(img.replace(bands=bands))
    return prototypes
