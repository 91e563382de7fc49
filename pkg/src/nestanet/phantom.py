"""Piecewise-constant ellipse phantoms and grayscale image loading.

The phantom is a sum of constant-intensity ellipses on [-1, 1]^2.  A pixel
takes the summed intensity of every ellipse containing its center; pixel
(i, j) at side n has center ((j + 0.5) * 2/n - 1, (i + 0.5) * 2/n - 1),
with the row coordinate increasing downward.  Piecewise-constant images of
this kind have gradients supported only on ellipse boundaries, which keeps
them approximately sparse under the Haar-plus-gradient analysis operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .operators import ImageGrid, _is_power_of_two

__all__ = ["EllipseSpec", "default_ellipses", "render_phantom", "load_grayscale"]


@dataclass(frozen=True)
class EllipseSpec:
    """One ellipse: center, semi-axes, rotation (radians), additive intensity."""

    center_x: float
    center_y: float
    semi_x: float
    semi_y: float
    angle: float
    intensity: float

    def __post_init__(self) -> None:
        if self.semi_x <= 0 or self.semi_y <= 0:
            raise ValueError("semi-axes must be positive")


# Ten nested ellipses.  Intensities are chosen so every overlap stays in
# [0, 1]; the total boundary length is kept small so the analysis
# coefficients are strongly compressible (the nonzero count grows with the
# sum of the semi-axes).
_DEFAULT = (
    EllipseSpec(0.00, 0.00, 0.26, 0.34, 0.0, 0.35),
    EllipseSpec(0.00, 0.02, 0.21, 0.28, 0.0, 0.20),
    EllipseSpec(-0.08, -0.04, 0.04, 0.10, 0.30, 0.15),
    EllipseSpec(0.08, -0.04, 0.04, 0.10, -0.30, 0.15),
    EllipseSpec(0.00, 0.13, 0.05, 0.06, 0.0, 0.18),
    EllipseSpec(0.00, -0.16, 0.03, 0.04, 0.0, 0.22),
    EllipseSpec(-0.11, 0.11, 0.025, 0.025, 0.0, 0.25),
    EllipseSpec(0.11, 0.11, 0.022, 0.022, 0.0, 0.25),
    EllipseSpec(0.00, 0.03, 0.024, 0.024, 0.0, 0.30),
    EllipseSpec(0.02, -0.07, 0.024, 0.04, 0.50, 0.25),
)


def default_ellipses() -> tuple[EllipseSpec, ...]:
    return _DEFAULT


def render_phantom(side: int, ellipses=None) -> ImageGrid:
    """Rasterize the ellipse sum at the pixel centers of an n-by-n grid."""
    if not _is_power_of_two(side):
        raise ValueError(f"side must be a power of two, got {side}")
    if ellipses is None:
        ellipses = _DEFAULT
    coords = (np.arange(side) + 0.5) * (2.0 / side) - 1.0
    px = coords[None, :]  # x varies along columns
    py = coords[:, None]  # y varies along rows
    img = np.zeros((side, side), dtype=np.float64)
    for e in ellipses:
        dx = px - e.center_x
        dy = py - e.center_y
        c, s = np.cos(e.angle), np.sin(e.angle)
        u = (c * dx + s * dy) / e.semi_x
        v = (-s * dx + c * dy) / e.semi_y
        img += e.intensity * (u * u + v * v <= 1.0)
    return ImageGrid(side, img.reshape(-1))


def load_grayscale(path) -> ImageGrid:
    """Load an 8- or 16-bit grayscale PNG/PGM as an image with values in [0, 1].

    The image must be square with a power-of-two side.  Max-value pixels map
    to exactly 1.0.
    """
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise ValueError(f"{path}: cannot read image ({exc})") from exc
    if img.mode in ("L", "P"):
        arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    elif img.mode in ("I", "I;16", "I;16B"):
        arr = np.asarray(img.convert("I"), dtype=np.float64) / 65535.0
    else:
        raise ValueError(f"{path}: unsupported mode {img.mode}; expected grayscale")
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{path}: image must be square, got {arr.shape}")
    if not _is_power_of_two(arr.shape[0]):
        raise ValueError(f"{path}: side {arr.shape[0]} is not a power of two")
    return ImageGrid(arr.shape[0], arr.reshape(-1))
