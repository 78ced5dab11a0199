"""Constant-brightness contour extraction from image grids.

Contours are parameterized as radius-per-azimuth about the brightness
centroid (star-convex assumption, valid for the blob family this
package generates). Along each ray the *outermost* crossing of
``fraction * peak`` is located by linear interpolation between bilinear
samples of the image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_RADIAL_STEP = 0.05  # pixels


def brightness_centroid(image: np.ndarray) -> tuple[float, float]:
    """Intensity-weighted centroid as (row, col)."""
    image = np.asarray(image, dtype=np.float64)
    total = image.sum()
    if total <= 0.0:
        raise ValueError("image has no positive brightness")
    rows = np.arange(image.shape[0], dtype=np.float64)
    cols = np.arange(image.shape[1], dtype=np.float64)
    cy = float((image.sum(axis=1) * rows).sum() / total)
    cx = float((image.sum(axis=0) * cols).sum() / total)
    return cy, cx


def _bilinear(image: np.ndarray, y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Bilinear image samples; points outside the grid evaluate to 0."""
    h, w = image.shape
    inside = (y >= 0) & (y <= h - 1) & (x >= 0) & (x <= w - 1)
    yc = np.clip(y, 0, h - 1)
    xc = np.clip(x, 0, w - 1)
    y0 = np.floor(yc).astype(np.intp)
    x0 = np.floor(xc).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = yc - y0
    fx = xc - x0
    vals = (image[y0, x0] * (1 - fy) * (1 - fx)
            + image[y0, x1] * (1 - fy) * fx
            + image[y1, x0] * fy * (1 - fx)
            + image[y1, x1] * fy * fx)
    return np.where(inside, vals, 0.0)


def extract_contour(image, fraction: float = 0.17, n_angles: int = 64
                    ) -> np.ndarray:
    """Radius of the ``fraction * peak`` level crossing per azimuth.

    Rays start at the brightness centroid on a fixed angular grid
    (``2*pi*k/n_angles``). Returns one non-negative radius per angle; a
    ray whose origin already sits below the level gets radius 0.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("image must be 2-D")
    peak = image.max()
    if peak <= 0.0:
        raise ValueError("image has no positive pixels")
    if not (0.0 < fraction <= 1.0):
        raise ValueError(
            f"fraction must be in (0, 1], got {fraction} (level set empty)")
    if n_angles < 4:
        raise ValueError("need at least 4 angles")
    level = fraction * peak
    cy, cx = brightness_centroid(image)
    h, w = image.shape
    r_max = float(np.hypot(max(cy, h - 1 - cy), max(cx, w - 1 - cx))) + 1.0
    radii_grid = np.arange(0.0, r_max + _RADIAL_STEP, _RADIAL_STEP)
    angles = contour_angles(n_angles)
    ys = cy + np.outer(np.sin(angles), radii_grid)
    xs = cx + np.outer(np.cos(angles), radii_grid)
    vals = _bilinear(image, ys, xs)

    above = vals >= level
    # outermost fall below the level: last step where above -> not above
    falls = above[:, :-1] & ~above[:, 1:]
    out = np.zeros(n_angles)
    any_fall = falls.any(axis=1)
    last = falls.shape[1] - 1 - np.argmax(falls[:, ::-1], axis=1)
    for i in range(n_angles):
        if not above[i, 0]:
            out[i] = 0.0
        elif not any_fall[i]:
            out[i] = radii_grid[-1]
        else:
            k = last[i]
            v0, v1 = vals[i, k], vals[i, k + 1]
            t = (v0 - level) / (v0 - v1) if v0 != v1 else 0.0
            out[i] = radii_grid[k] + t * _RADIAL_STEP
    return out


def contour_angles(n_angles: int) -> np.ndarray:
    return np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)


@dataclass
class ContourSet:
    """Per-image closed contours at a common brightness fraction."""

    angles: np.ndarray  # (n_angles,)
    radii: np.ndarray   # (n_images, n_angles)
    fraction: float

    def __post_init__(self):
        if self.radii.ndim != 2 or self.radii.shape[1] != self.angles.size:
            raise ValueError("radii must be (n_images, n_angles)")
        if np.any(self.radii < 0.0):
            raise ValueError("contour radii must be non-negative")

    @property
    def mean_radius(self) -> np.ndarray:
        return self.radii.mean(axis=0)

    @property
    def sd_radius(self) -> np.ndarray:
        if len(self.radii) < 2:
            return np.zeros(self.angles.size)
        return self.radii.std(axis=0, ddof=1)


def contour_set(images: np.ndarray, fraction: float = 0.17,
                n_angles: int = 64) -> ContourSet:
    """Extract the contour of every image in an (S, d, d) stack."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ValueError("images must be a 3-D stack")
    radii = np.stack([extract_contour(img, fraction, n_angles)
                      for img in images])
    return ContourSet(angles=contour_angles(n_angles), radii=radii,
                      fraction=fraction)
