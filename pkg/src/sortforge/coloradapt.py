"""Color-domain adaptation: background synthesis, histogram matching, CLAHE."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import scale_image
from .imgcore import BoundingBox, ImageError, as_image, round_half_away, tight_box, to_uint8

LEVELS = 256


class Mode(str, Enum):
    BS = "BS"
    BS_HM = "BS+HM"
    BS_HM_EQ = "BS+HM+EQ"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        for mode in cls:
            if mode.value == text.upper():
                return mode
        raise ValueError(f"unknown adaptation mode {text!r} (expected BS, BS+HM or BS+HM+EQ)")


@dataclass(frozen=True, eq=False)
class ChannelHistogram:
    bins: np.ndarray  # int64 counts, length LEVELS
    total: int

    @property
    def cdf(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros(LEVELS)
        return np.cumsum(self.bins) / float(self.total)

    def normalized(self) -> np.ndarray:
        return self.bins / float(self.total)


@dataclass(frozen=True)
class ClaheSpec:
    tile_grid: tuple[int, int] = (8, 8)  # (cols, rows)
    clip_limit: float = 2.0

    def __post_init__(self) -> None:
        cols, rows = self.tile_grid
        if cols < 1 or rows < 1:
            raise ValueError("tile grid must be at least 1x1")
        if not self.clip_limit >= 1:
            raise ValueError("clip_limit must be >= 1")


def _region(img: np.ndarray, region: BoundingBox | None) -> np.ndarray:
    if region is None:
        return img
    if not region.within(img.shape[1], img.shape[0]):
        raise ImageError(f"region {region.as_tuple()} outside {img.shape[1]}x{img.shape[0]} image")
    return img[region.slices()]


def histogram(img: np.ndarray, region: BoundingBox | None = None) -> list[ChannelHistogram]:
    """Per-channel 256-bin histograms of the RGB samples within ``region``."""
    img = as_image(img)
    patch = _region(img, region)
    if patch.size == 0:
        raise ImageError("empty histogram region")
    out = []
    for ch in range(3):
        bins = np.bincount(patch[..., ch].ravel(), minlength=LEVELS).astype(np.int64)
        out.append(ChannelHistogram(bins=bins, total=int(bins.sum())))
    return out


def matching_lut(src: ChannelHistogram, target: ChannelHistogram) -> np.ndarray:
    """v -> min{u : cdf_t(u) >= cdf_s(v)}."""
    if target.total == 0:
        raise ValueError("target histogram is empty")
    cdf_t = target.cdf
    cdf_s = src.cdf
    # absorb float noise so identical CDFs invert to the identity
    idx = np.searchsorted(cdf_t, cdf_s - 1e-12, side="left")
    return np.minimum(idx, LEVELS - 1).astype(np.uint8)


def match_histogram(src: np.ndarray, target_hist: list[ChannelHistogram],
                    region: BoundingBox | None = None) -> np.ndarray:
    src = as_image(src)
    out = src.copy()
    patch = _region(out, region)
    src_hist = histogram(src, region)
    for ch in range(3):
        lut = matching_lut(src_hist[ch], target_hist[ch])
        patch[..., ch] = lut[patch[..., ch]]
    return out


def _tile_edges(length: int, count: int) -> np.ndarray:
    return np.floor(np.linspace(0, length, count + 1) + 1e-9).astype(int)


def _tile_lut(values: np.ndarray, clip_limit: float) -> np.ndarray:
    hist = np.bincount(values.ravel(), minlength=LEVELS).astype(np.float64)
    npix = values.size
    occupied = np.flatnonzero(hist)
    if occupied.size == 1:
        # a delta histogram has no contrast to stretch: keep the value
        return np.arange(LEVELS, dtype=np.float64)
    if np.isfinite(clip_limit):
        limit = max(clip_limit * npix / LEVELS, 1.0)
        excess = np.maximum(hist - limit, 0.0).sum()
        hist = np.minimum(hist, limit) + excess / LEVELS
    cdf = np.cumsum(hist) / npix
    return 255.0 * cdf


def equalize_lut(values: np.ndarray) -> np.ndarray:
    """Global equalization table ``round(255 * cdf(v))``."""
    return to_uint8(_tile_lut(values, np.inf))


def clahe(img: np.ndarray, spec: ClaheSpec = ClaheSpec(),
          region: BoundingBox | None = None) -> np.ndarray:
    """Contrast-limited adaptive equalization of each RGB channel inside ``region``.

    Each tile's clipped histogram (excess spread evenly over all bins) gives
    a mapping ``255 * cdf``; pixels blend the mappings of the four nearest
    tile centers bilinearly and are clamped to the outer centers at the
    border.
    """
    img = as_image(img)
    out = img.copy()
    patch = _region(out, region)
    h, w = patch.shape[:2]
    cols, rows = spec.tile_grid
    if w < cols or h < rows:
        raise ImageError(f"region {w}x{h} smaller than tile grid {cols}x{rows}")
    xe = _tile_edges(w, cols)
    ye = _tile_edges(h, rows)
    xc = (xe[:-1] + xe[1:] - 1) / 2.0
    yc = (ye[:-1] + ye[1:] - 1) / 2.0

    def _weights(coords: np.ndarray, centers: np.ndarray):
        i1 = np.searchsorted(centers, coords, side="right")
        i0 = np.clip(i1 - 1, 0, len(centers) - 1)
        i1 = np.clip(i1, 0, len(centers) - 1)
        span = centers[i1] - centers[i0]
        frac = np.where(span > 0, (coords - centers[i0]) / np.where(span > 0, span, 1.0), 0.0)
        return i0, i1, np.clip(frac, 0.0, 1.0)

    ix0, ix1, fx = _weights(np.arange(w, dtype=np.float64), xc)
    iy0, iy1, fy = _weights(np.arange(h, dtype=np.float64), yc)
    fx = fx[None, :]
    fy = fy[:, None]

    for ch in range(3):
        values = patch[..., ch].copy()
        luts = np.empty((rows, cols, LEVELS))
        for r in range(rows):
            for c in range(cols):
                luts[r, c] = _tile_lut(values[ye[r]:ye[r + 1], xe[c]:xe[c + 1]], spec.clip_limit)
        v = values
        m00 = luts[iy0[:, None], ix0[None, :], v]
        m01 = luts[iy0[:, None], ix1[None, :], v]
        m10 = luts[iy1[:, None], ix0[None, :], v]
        m11 = luts[iy1[:, None], ix1[None, :], v]
        top = m00 * (1 - fx) + m01 * fx
        bot = m10 * (1 - fx) + m11 * fx
        patch[..., ch] = to_uint8(top * (1 - fy) + bot * fy)
    return out


def blend(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray, offset: tuple[int, int] = (0, 0)) -> np.ndarray:
    """``alpha * fg + (1 - alpha) * bg`` with fg placed at ``offset`` = (x, y)."""
    fg = as_image(fg)
    bg = as_image(bg)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != fg.shape[:2]:
        raise ImageError("alpha and foreground dimensions differ")
    x, y = offset
    fh, fw = alpha.shape
    if x < 0 or y < 0 or x + fw > bg.shape[1] or y + fh > bg.shape[0]:
        raise ImageError(f"placement {fw}x{fh} at ({x}, {y}) leaves the {bg.shape[1]}x{bg.shape[0]} background")
    out = bg.copy()
    a = alpha[..., None]
    region = out[y:y + fh, x:x + fw, :3].astype(np.float64)
    mixed = a * fg[..., :3].astype(np.float64) + (1.0 - a) * region
    out[y:y + fh, x:x + fw, :3] = to_uint8(mixed)
    return out


@dataclass(frozen=True, eq=False)
class Adapted:
    image: np.ndarray
    box: BoundingBox
    mask: np.ndarray
    alpha: np.ndarray


def place_object(src: np.ndarray, alpha: np.ndarray, mask: np.ndarray, bg: np.ndarray,
                 k: float = 1.0, center: tuple[float, float] | None = None,
                 alpha_threshold: float = 0.5):
    """Scale the object by ``k`` and alpha-blend it onto ``bg``.

    The object's matte support is centered at ``center`` (default: the
    background center), clamped so the patch stays on the canvas. Returns
    the composite plus mask/alpha in background coordinates.
    """
    src = as_image(src)
    bg = as_image(bg)
    scaled, smask, salpha = scale_image(src, mask, k, alpha=alpha)
    support = tight_box(salpha > 0)
    if support is None:
        raise ImageError("alpha matte is empty")
    fg = scaled[support.slices()]
    pa = salpha[support.slices()]
    ph, pw = pa.shape
    if pw > bg.shape[1] or ph > bg.shape[0]:
        raise ImageError(f"object patch {pw}x{ph} larger than background")
    bw, bh = bg.shape[1], bg.shape[0]
    if center is None:
        center = ((bw - 1) / 2.0, (bh - 1) / 2.0)
    x = int(round_half_away(center[0] - (pw - 1) / 2.0))
    y = int(round_half_away(center[1] - (ph - 1) / 2.0))
    x = min(max(x, 0), bw - pw)
    y = min(max(y, 0), bh - ph)
    composite = blend(fg, bg, pa, (x, y))
    full_alpha = np.zeros(bg.shape[:2])
    full_alpha[y:y + ph, x:x + pw] = pa
    full_mask = np.zeros(bg.shape[:2], dtype=bool)
    full_mask[y:y + ph, x:x + pw] = smask[support.slices()] & (pa > alpha_threshold)
    return composite, full_mask, full_alpha


def adapt(src: np.ndarray, matte: np.ndarray, bg: np.ndarray, target_obj_patch: np.ndarray,
          k: float = 1.0, mode: Mode | str = Mode.BS_HM_EQ, *, mask: np.ndarray | None = None,
          clahe_spec: ClaheSpec = ClaheSpec(), center: tuple[float, float] | None = None,
          alpha_threshold: float = 0.5) -> Adapted:
    """Scale, background-synthesize, then histogram-match and equalize the object box."""
    mode = Mode.parse(mode) if isinstance(mode, str) else mode
    matte = np.asarray(matte, dtype=np.float64)
    if mask is None:
        mask = matte > alpha_threshold
    composite, full_mask, full_alpha = place_object(src, matte, mask, bg, k, center, alpha_threshold)
    box = tight_box(full_mask)
    if box is None:
        raise ImageError("object vanished after scaling")
    if mode in (Mode.BS_HM, Mode.BS_HM_EQ):
        composite = match_histogram(composite, histogram(target_obj_patch), box)
    if mode is Mode.BS_HM_EQ:
        composite = clahe(composite, clahe_spec, box)
    return Adapted(image=composite, box=box, mask=full_mask, alpha=full_alpha)
