"""Object-region extraction from green-screen captures.

chroma key -> trimap from the pose-projected approximate mask -> alpha
matting -> AND with the chroma mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from numpy.lib.stride_tricks import sliding_window_view

from .imgcore import (
    BoundingBox,
    ImageError,
    as_image,
    as_mask,
    dilate,
    erode,
    largest_component,
    mask_and,
    tight_box,
)

BACKGROUND = 0
UNKNOWN = 1
FOREGROUND = 2


class ExtractionError(ValueError):
    pass


class MattingConvergenceError(ExtractionError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"matting solver did not converge after {iterations} "
                         f"iterations (relative residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class ChromaKeySpec:
    key_hue: float = 120.0
    hue_tolerance: float = 30.0
    min_saturation: float = 0.25
    min_value: float = 0.15

    def __post_init__(self) -> None:
        if not self.hue_tolerance > 0:
            raise ExtractionError("hue_tolerance must be > 0")
        if not (0.0 <= self.min_saturation <= 1.0 and 0.0 <= self.min_value <= 1.0):
            raise ExtractionError("saturation/value thresholds must lie in [0, 1]")


@dataclass(frozen=True)
class MattingConfig:
    window_radius: int = 1
    epsilon: float = 1e-5
    max_iterations: int = 2000
    tolerance: float = 1e-5


def rgb_to_hsv(img: np.ndarray):
    """Hue in degrees [0, 360), saturation and value in [0, 1]."""
    rgb = img[..., :3].astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    vmax = rgb.max(axis=-1)
    vmin = rgb.min(axis=-1)
    delta = vmax - vmin
    safe = np.where(delta > 0, delta, 1.0)
    hue = np.select(
        [vmax == r, vmax == g],
        [((g - b) / safe) % 6.0, (b - r) / safe + 2.0],
        (r - g) / safe + 4.0,
    ) * 60.0
    hue = np.where(delta > 0, hue, 0.0)
    sat = np.where(vmax > 0, delta / np.where(vmax > 0, vmax, 1.0), 0.0)
    return hue, sat, vmax


def chroma_key(img: np.ndarray, spec: ChromaKeySpec = ChromaKeySpec()) -> np.ndarray:
    """Mask of pixels outside the keyed color volume (candidate object pixels)."""
    img = as_image(img)
    if img.shape[2] != 3:
        raise ImageError("chroma key expects a 3-channel image")
    hue, sat, val = rgb_to_hsv(img)
    dist = np.abs((hue - spec.key_hue + 180.0) % 360.0 - 180.0)
    keyed = (dist <= spec.hue_tolerance) & (sat >= spec.min_saturation) & (val >= spec.min_value)
    return ~keyed


def make_trimap(approx_mask: np.ndarray, band_radius: int = 5) -> np.ndarray:
    """Label image: FOREGROUND core, UNKNOWN band, BACKGROUND outside."""
    approx_mask = as_mask(approx_mask)
    if band_radius < 1:
        raise ExtractionError("band_radius must be >= 1")
    if not approx_mask.any():
        raise ExtractionError("approximate mask is empty")
    core = erode(approx_mask, band_radius)
    if not core.any():
        raise ExtractionError("object too thin for band radius")
    trimap = np.full(approx_mask.shape, UNKNOWN, dtype=np.uint8)
    trimap[~dilate(approx_mask, band_radius)] = BACKGROUND
    trimap[core] = FOREGROUND
    return trimap


def matting_laplacian(img: np.ndarray, radius: int = 1, epsilon: float = 1e-5,
                      window_mask: np.ndarray | None = None) -> scipy.sparse.csr_matrix:
    """Closed-form matting Laplacian over all full windows of the image.

    ``window_mask`` (H, W bool), when given, restricts the sum to windows
    centered on set pixels.
    """
    h, w, c = img.shape
    size = 2 * radius + 1
    n_win = size * size
    npix = h * w
    if h < size or w < size:
        return scipy.sparse.csr_matrix((npix, npix))
    idx = np.arange(npix).reshape(h, w)
    win_idx = sliding_window_view(idx, (size, size)).reshape(-1, n_win)
    if window_mask is not None:
        centers = window_mask[radius:h - radius, radius:w - radius].ravel()
        win_idx = win_idx[centers]
    if win_idx.shape[0] == 0:
        return scipy.sparse.csr_matrix((npix, npix))
    colors = img.reshape(npix, c)[win_idx]  # (n, n_win, c)
    mu = colors.mean(axis=1, keepdims=True)
    centered = colors - mu
    cov = np.einsum("nki,nkj->nij", centered, centered) / n_win
    cov += (epsilon / n_win) * np.eye(c)
    inv = np.linalg.inv(cov)
    proj = np.einsum("nki,nij,nlj->nkl", centered, inv, centered)
    vals = (np.eye(n_win)[None] - (1.0 + proj) / n_win).ravel()
    rows = np.repeat(win_idx, n_win, axis=1).ravel()
    cols = np.tile(win_idx, (1, n_win)).ravel()
    lap = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(npix, npix))
    return lap.tocsr()


def matte(img: np.ndarray, trimap: np.ndarray, config: MattingConfig = MattingConfig()) -> np.ndarray:
    """Alpha matte by solving the matting Laplacian over UNKNOWN pixels.

    Constraint pixels keep alpha 1 (FOREGROUND) and 0 (BACKGROUND) exactly.
    """
    img = as_image(img)
    trimap = np.asarray(trimap)
    if trimap.shape != img.shape[:2]:
        raise ImageError("trimap and image dimensions differ")
    fg = trimap == FOREGROUND
    bg = trimap == BACKGROUND
    unknown = trimap == UNKNOWN
    alpha = fg.astype(np.float64)
    if not unknown.any():
        return alpha
    if not (fg.any() and bg.any()):
        raise ExtractionError("trimap needs both FOREGROUND and BACKGROUND pixels")

    r = config.window_radius
    h, w = trimap.shape
    box = tight_box(unknown)
    # every window touching an unknown pixel lies inside this crop
    y0, y1 = max(box.y_min - 2 * r, 0), min(box.y_max + 2 * r, h)
    x0, x1 = max(box.x_min - 2 * r, 0), min(box.x_max + 2 * r, w)
    crop = img[y0:y1, x0:x1, :3].astype(np.float64) / 255.0
    unk = unknown[y0:y1, x0:x1]
    near_unknown = dilate(unk, r)
    lap = matting_laplacian(crop, r, config.epsilon, window_mask=near_unknown)

    flat_unknown = unk.ravel()
    known_alpha = alpha[y0:y1, x0:x1].ravel()
    lap_uu = lap[flat_unknown][:, flat_unknown]
    lap_uk = lap[flat_unknown][:, ~flat_unknown]
    rhs = -(lap_uk @ known_alpha[~flat_unknown])

    n_iter = 0

    def _count(_):
        nonlocal n_iter
        n_iter += 1

    x0_guess = np.full(int(flat_unknown.sum()), 0.5)
    sol, info = scipy.sparse.linalg.cg(lap_uu, rhs, x0=x0_guess, rtol=config.tolerance,
                                       atol=0.0, maxiter=config.max_iterations, callback=_count)
    if info != 0:
        denom = max(np.linalg.norm(rhs), 1e-300)
        raise MattingConvergenceError(float(np.linalg.norm(lap_uu @ sol - rhs) / denom), n_iter)
    out = alpha[y0:y1, x0:x1].ravel().copy()
    out[flat_unknown] = np.clip(sol, 0.0, 1.0)
    alpha[y0:y1, x0:x1] = out.reshape(unk.shape)
    return alpha


@dataclass(frozen=True, eq=False)
class Extraction:
    mask: np.ndarray
    alpha: np.ndarray
    box: BoundingBox
    trimap: np.ndarray


def extract_region(img: np.ndarray, chroma_mask: np.ndarray, approx_mask: np.ndarray,
                   band_radius: int = 5, alpha_threshold: float = 0.5,
                   matting: MattingConfig = MattingConfig()) -> Extraction:
    """Final object mask, alpha matte and tight box for one capture."""
    img = as_image(img)
    chroma_mask = as_mask(chroma_mask)
    approx_mask = as_mask(approx_mask)
    if chroma_mask.shape != img.shape[:2] or approx_mask.shape != img.shape[:2]:
        raise ImageError("image, chroma mask and approximate mask dimensions differ")
    seed = largest_component(mask_and(approx_mask, chroma_mask))
    if not seed.any():
        raise ExtractionError("no object found")
    trimap = make_trimap(seed, band_radius)
    alpha = matte(img, trimap, matting)
    final = mask_and(chroma_mask, alpha > alpha_threshold)
    box = tight_box(final)
    if box is None:
        raise ExtractionError("no object found")
    return Extraction(mask=final, alpha=alpha, box=box, trimap=trimap)
