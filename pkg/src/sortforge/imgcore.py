"""Raster image and binary mask primitives.

Images are ``(H, W, C)`` uint8 arrays with C in {3, 4}; masks are ``(H, W)``
boolean arrays. Everything here is a pure function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


class ImageError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Pixel box with inclusive min and exclusive max."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ImageError(f"degenerate bounding box {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max - 1) / 2.0, (self.y_min + self.y_max - 1) / 2.0)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y_min, self.y_max), slice(self.x_min, self.x_max)

    def shifted(self, dx: int, dy: int) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def within(self, width: int, height: int) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height


@dataclass(frozen=True)
class ImageMoments:
    area: int
    centroid: tuple[float, float]
    principal_axis: tuple[float, float]
    second_moments: tuple[float, float, float]  # (mu20, mu02, mu11), normalized by area

    @property
    def isotropic(self) -> bool:
        mu20, mu02, mu11 = self.second_moments
        scale = max(abs(mu20), abs(mu02), 1e-12)
        return abs(mu20 - mu02) <= 1e-9 * scale and abs(mu11) <= 1e-9 * scale


def as_image(data: np.ndarray) -> np.ndarray:
    img = np.asarray(data)
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise ImageError(f"expected (H, W, 3|4) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageError("image must be at least 1x1")
    if img.dtype != np.uint8:
        raise ImageError(f"expected uint8 samples, got {img.dtype}")
    return img


def as_mask(data: np.ndarray) -> np.ndarray:
    mask = np.asarray(data)
    if mask.ndim != 2:
        raise ImageError(f"expected (H, W) mask, got shape {mask.shape}")
    return mask.astype(bool, copy=False)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ImageError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _square(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a square element of side ``2*radius + 1``.

    Pixels outside the image count as unset, so the result never grows
    past the image border.
    """
    mask = as_mask(mask)
    if radius < 0:
        raise ImageError("radius must be >= 0")
    if radius == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=_square(radius), border_value=0)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary erosion, dual of :func:`dilate`; outside pixels count as set."""
    mask = as_mask(mask)
    if radius < 0:
        raise ImageError("radius must be >= 0")
    if radius == 0:
        return mask.copy()
    return ndimage.binary_erosion(mask, structure=_square(radius), border_value=1)


def mask_and(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    return np.logical_and(a, b)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep only the largest 8-connected component.

    Ties go to the component whose first pixel comes first in raster order.
    """
    mask = as_mask(mask)
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if count <= 1:
        return mask.copy()
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(np.argmax(sizes))


def moments(mask: np.ndarray) -> ImageMoments:
    """Area, centroid and principal axis of the set pixels.

    Coordinates are ``(x, y)`` = (column, row). The principal axis is the
    eigenvector of the central second-moment matrix with the larger
    eigenvalue, signed so that x > 0 (or y > 0 when x is zero).
    """
    mask = as_mask(mask)
    ys, xs = np.nonzero(mask)
    area = xs.size
    if area == 0:
        raise ImageError("empty silhouette")
    cx = xs.mean()
    cy = ys.mean()
    dx = xs - cx
    dy = ys - cy
    mu20 = float(np.mean(dx * dx))
    mu02 = float(np.mean(dy * dy))
    mu11 = float(np.mean(dx * dy))
    cov = np.array([[mu20, mu11], [mu11, mu02]])
    evals, evecs = np.linalg.eigh(cov)
    axis = evecs[:, int(np.argmax(evals))]
    axis = axis / np.linalg.norm(axis)
    if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
        axis = -axis
    # eigh leaves tiny cross terms on axis-aligned shapes
    axis = np.where(np.abs(axis) < 1e-15, 0.0, axis)
    axis = axis / np.linalg.norm(axis)
    return ImageMoments(
        area=int(area),
        centroid=(float(cx), float(cy)),
        principal_axis=(float(axis[0]), float(axis[1])),
        second_moments=(mu20, mu02, mu11),
    )


def tight_box(mask: np.ndarray) -> BoundingBox | None:
    mask = as_mask(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return BoundingBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def round_half_away(values):
    """Nearest-integer rounding with halves away from zero."""
    arr = np.asarray(values, dtype=np.float64)
    return np.sign(arr) * np.floor(np.abs(arr) + 0.5)


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(values), 0, 255).astype(np.uint8)


# --- file I/O -------------------------------------------------------------

def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("RGB", "RGBA"):
            im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
        return as_image(np.array(im))


def write_image(path: str | Path, img: np.ndarray) -> None:
    img = as_image(img)
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pnm") else "PNG"
    if fmt == "PPM" and img.shape[2] != 3:
        raise ImageError("binary PPM holds RGB only")
    Image.fromarray(img).save(path, format=fmt)


def read_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im.convert("L"))
    return arr >= 128


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    mask = as_mask(mask)
    Image.fromarray(mask.astype(np.uint8) * 255).save(Path(path), format="PNG")
