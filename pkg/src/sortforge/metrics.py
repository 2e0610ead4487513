"""Mask-quality scores and histogram distances."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .imgcore import BoundingBox, ImageError, as_image, as_mask

INF = math.inf  # Bhattacharyya distance for disjoint supports


@dataclass(frozen=True)
class MaskEvalCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MaskScores:
    iou: float
    precision: float
    recall: float
    f_score: float


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def mask_eval(pred: np.ndarray, gt: np.ndarray) -> tuple[MaskEvalCounts, MaskScores]:
    """Pixel TP/FP/FN and IoU, precision, recall, F-score in percent (0/0 -> 0)."""
    pred, gt = as_mask(pred), as_mask(gt)
    if pred.shape != gt.shape:
        raise ImageError(f"dimension mismatch: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f_score = _ratio(2 * precision * recall, precision + recall)
    scores = MaskScores(
        iou=100.0 * _ratio(tp, tp + fp + fn),
        precision=100.0 * precision,
        recall=100.0 * recall,
        f_score=100.0 * f_score,
    )
    return MaskEvalCounts(tp, fp, fn), scores


def _check_pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 1 or p.shape != q.shape:
        raise ValueError(f"histograms must be 1-D with equal bin count, got {p.shape} and {q.shape}")
    for name, h in (("p", p), ("q", q)):
        if np.any(h < 0) or abs(h.sum() - 1.0) > 1e-9:
            raise ValueError(f"histogram {name} is not normalized")
    return p, q


def normalize(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("cannot normalize an empty histogram")
    return counts / total


def emd(p, q) -> float:
    """1-D earth mover's distance in bin units: sum |CDF_p - CDF_q|."""
    p, q = _check_pair(p, q)
    return float(np.abs(np.cumsum(p - q)).sum())


def bhattacharyya(p, q) -> float:
    """``-ln(sum sqrt(p q))``; :data:`INF` when the supports are disjoint."""
    p, q = _check_pair(p, q)
    coeff = float(np.sqrt(p * q).sum())
    if coeff <= 0.0:
        return INF
    # coefficient can exceed 1 by an ulp for identical inputs
    return max(-math.log(min(coeff, 1.0)), 0.0)


def channel_histograms(img: np.ndarray, box: BoundingBox | None = None) -> list[np.ndarray]:
    img = as_image(img)
    patch = img if box is None else img[box.slices()]
    if patch.size == 0:
        raise ImageError("empty crop")
    return [normalize(np.bincount(patch[..., ch].ravel(), minlength=256)) for ch in range(3)]


def crop_distances(img: np.ndarray, box: BoundingBox | None, reference: list[np.ndarray]) -> tuple[float, float]:
    """Channel-averaged (EMD, BD) between a crop and reference histograms."""
    hists = channel_histograms(img, box)
    emds = [emd(h, r) for h, r in zip(hists, reference)]
    bds = [bhattacharyya(h, r) for h, r in zip(hists, reference)]
    return float(np.mean(emds)), float(np.mean(bds))


@dataclass(frozen=True, eq=False)
class SimilaritySample:
    mode: str
    category: str
    image: np.ndarray
    box: BoundingBox | None


MODE_ORDER = ("Original", "BS", "BS+HM", "BS+HM+EQ")


def similarity_report(samples: list[SimilaritySample], reference) -> dict:
    """Mean channel-averaged EMD and BD per (mode, category).

    ``reference`` is either one object crop or a ``{category: crop}`` dict.
    """
    if isinstance(reference, dict):
        refs = {cat: channel_histograms(img) for cat, img in reference.items()}
    else:
        shared = channel_histograms(reference)
        refs = None
    acc: dict[str, dict[str, dict[str, list[float]]]] = {}
    for s in samples:
        ref = refs[s.category] if refs is not None else shared
        e, b = crop_distances(s.image, s.box, ref)
        cell = acc.setdefault(s.mode, {}).setdefault(s.category, {"emd": [], "bd": []})
        cell["emd"].append(e)
        cell["bd"].append(b)
    modes = [m for m in MODE_ORDER if m in acc] + sorted(m for m in acc if m not in MODE_ORDER)
    categories = sorted({s.category for s in samples})
    rows = {}
    for mode in modes:
        rows[mode] = {}
        for cat in categories:
            cell = acc[mode].get(cat)
            if cell is None:
                continue
            rows[mode][cat] = {
                "emd": float(np.mean(cell["emd"])),
                "bd": float(np.mean(cell["bd"])),
                "n": len(cell["emd"]),
            }
    return {"schema_version": 1, "modes": modes, "categories": categories, "rows": rows}


def _fmt(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4g}"


def format_similarity(report: dict) -> str:
    cats = report["categories"]
    lines = []
    for metric, title in (("emd", "EMD"), ("bd", "BD")):
        header = [title] + cats
        body = [[mode] + [_fmt(report["rows"][mode][c][metric]) if c in report["rows"][mode] else "-"
                          for c in cats] for mode in report["modes"]]
        lines.extend(align_table([header] + body))
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def align_table(table: list[list[str]]) -> list[str]:
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    out = []
    for n, row in enumerate(table):
        out.append("  ".join(cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i])
                             for i, cell in enumerate(row)))
        if n == 0:
            out.append("  ".join("-" * w for w in widths))
    return out


def similarity_json(report: dict) -> str:
    def _clean(obj):
        if isinstance(obj, float) and math.isinf(obj):
            return "inf"
        if isinstance(obj, dict):
            return {k: _clean(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [_clean(v) for v in obj]
        return obj
    return json.dumps(_clean(report), indent=2, sort_keys=True) + "\n"
