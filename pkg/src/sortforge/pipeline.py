"""Capture-manifest ingestion and the batch dataset pipeline.

Paths inside manifests and configs are resolved relative to the file that
names them; paths written into dataset indices are relative to the output
directory so that two runs produce identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .coloradapt import ClaheSpec, Mode, adapt
from .extraction import ChromaKeySpec, ExtractionError, MattingConfig, chroma_key, extract_region
from .geometry import Intrinsics, RigidPose, ScaleCalibration, compose, project_mask, scale_factor
from .imgcore import BoundingBox, ImageError, read_image, read_mask, tight_box, write_image, write_mask
from .metrics import align_table, crop_distances, channel_histograms, mask_eval

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PROVENANCE = ("AUTO", "MANUAL", "PROPAGATED")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Capture:
    id: str
    image: Path
    category: str
    source_distance: float
    marker_pose: RigidPose
    object_pose: RigidPose
    object_extent: tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class CaptureManifest:
    path: Path
    classes: tuple[str, ...]
    target_distance: float
    background: Path
    target_patches: dict  # category -> Path ("*" for the shared patch)
    chroma: ChromaKeySpec
    intrinsics: Intrinsics
    captures: tuple[Capture, ...]

    def target_patch_for(self, category: str) -> Path:
        try:
            return self.target_patches.get(category) or self.target_patches["*"]
        except KeyError:
            raise ManifestError(f"no target patch for category {category!r}") from None


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ManifestError(f"{where}: missing field {key!r}")
    return obj[key]


def _number(obj: dict, key: str, where: str, positive: bool = False) -> float:
    value = _require(obj, key, where)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ManifestError(f"{where}.{key}: expected a number, got {value!r}")
    if positive and value <= 0:
        raise ManifestError(f"{where}.{key}: must be > 0")
    return float(value)


def _vector(obj: dict, key: str, where: str, n: int = 3) -> list[float]:
    value = _require(obj, key, where)
    if (not isinstance(value, list) or len(value) != n
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ManifestError(f"{where}.{key}: expected {n} numbers")
    return [float(v) for v in value]


def _existing(base: Path, rel, where: str) -> Path:
    if not isinstance(rel, str) or not rel:
        raise ManifestError(f"{where}: expected a path string")
    path = (base / rel).resolve()
    if not path.is_file():
        raise ManifestError(f"{where}: file not found: {rel}")
    return path


def _pose(obj, where: str, from_: str, to: str) -> RigidPose:
    rot = _vector(obj, "rotation", where)
    trans = _vector(obj, "translation", where)
    try:
        return RigidPose.from_axis_angle(from_, to, rot, trans)
    except ValueError as exc:
        raise ManifestError(f"{where}: {exc}") from None


def ingest(manifest_path: str | Path) -> CaptureManifest:
    """Load and fully validate a capture manifest."""
    path = Path(manifest_path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    base = path.parent
    where = "manifest"
    classes = _require(doc, "classes", where)
    if not isinstance(classes, list) or not classes or not all(isinstance(c, str) for c in classes):
        raise ManifestError("manifest.classes: expected a non-empty list of strings")
    d_t = _number(doc, "target_distance", where, positive=True)
    background = _existing(base, _require(doc, "background", where), "manifest.background")

    patches = {}
    if "target_patch" in doc:
        patches["*"] = _existing(base, doc["target_patch"], "manifest.target_patch")
    for cat, rel in (doc.get("target_patches") or {}).items():
        if cat not in classes:
            raise ManifestError(f"manifest.target_patches.{cat}: unknown class")
        patches[cat] = _existing(base, rel, f"manifest.target_patches.{cat}")
    if "*" not in patches and set(patches) != set(classes):
        raise ManifestError("manifest: need target_patch or a target_patches entry per class")

    try:
        chroma = ChromaKeySpec(**(doc.get("chroma") or {}))
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"manifest.chroma: {exc}") from None
    intr_doc = _require(doc, "intrinsics", where)
    try:
        intr = Intrinsics(
            focal=_number(intr_doc, "focal", "manifest.intrinsics", positive=True),
            cx=_number(intr_doc, "cx", "manifest.intrinsics"),
            cy=_number(intr_doc, "cy", "manifest.intrinsics"),
            width=int(_number(intr_doc, "width", "manifest.intrinsics", positive=True)),
            height=int(_number(intr_doc, "height", "manifest.intrinsics", positive=True)),
        )
    except ValueError as exc:
        raise ManifestError(str(exc)) from None

    raw = _require(doc, "captures", where)
    if not isinstance(raw, list) or not raw:
        raise ManifestError("manifest.captures: expected a non-empty list")
    captures = []
    seen = set()
    for i, cap in enumerate(raw):
        w = f"manifest.captures[{i}]"
        cid = _require(cap, "id", w)
        if not isinstance(cid, str) or not cid or "/" in cid:
            raise ManifestError(f"{w}.id: expected a plain non-empty string")
        if cid in seen:
            raise ManifestError(f"{w}.id: duplicate id {cid!r}")
        seen.add(cid)
        category = _require(cap, "category", w)
        if category not in classes:
            raise ManifestError(f"{w}.category: {category!r} not in classes")
        if "marker_pose" not in cap:
            raise ManifestError(f"{w}: missing field 'marker_pose' (exactly one marker pose per image)")
        marker = f"marker_{cap.get('marker_id', 0)}"
        extent = _vector(cap, "object_extent", w)
        if min(extent) <= 0:
            raise ManifestError(f"{w}.object_extent: must be positive")
        captures.append(Capture(
            id=cid,
            image=_existing(base, _require(cap, "image", w), f"{w}.image"),
            category=category,
            source_distance=_number(cap, "source_distance", w, positive=True),
            marker_pose=_pose(cap["marker_pose"], f"{w}.marker_pose", "camera", marker),
            object_pose=_pose(_require(cap, "object_pose", w), f"{w}.object_pose", marker, "object"),
            object_extent=tuple(extent),
        ))
    return CaptureManifest(path=path.resolve(), classes=tuple(classes), target_distance=d_t,
                           background=background, target_patches=patches, chroma=chroma,
                           intrinsics=intr, captures=tuple(captures))


# --- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    band_radius: int = 5
    alpha_threshold: float = 0.5
    matting: MattingConfig = MattingConfig()
    mode: Mode = Mode.BS_HM_EQ
    clahe: ClaheSpec = ClaheSpec()
    invert_scale: bool = False

    @classmethod
    def from_dict(cls, doc: dict | None) -> "PipelineConfig":
        doc = doc or {}
        ext = doc.get("extraction", {})
        ada = doc.get("adaptation", {})
        clahe_doc = ada.get("clahe", {})
        return cls(
            band_radius=int(ext.get("band_radius", 5)),
            alpha_threshold=float(ext.get("alpha_threshold", 0.5)),
            matting=MattingConfig(**ext.get("matting", {})),
            mode=Mode.parse(ada.get("mode", Mode.BS_HM_EQ.value)),
            clahe=ClaheSpec(tuple(clahe_doc.get("tile_grid", (8, 8))), float(clahe_doc.get("clip_limit", 2.0))),
            invert_scale=bool(ada.get("invert_scale", False)),
        )

    def to_dict(self) -> dict:
        return {
            "extraction": {"band_radius": self.band_radius, "alpha_threshold": self.alpha_threshold,
                           "matting": vars(self.matting).copy()},
            "adaptation": {"mode": self.mode.value, "invert_scale": self.invert_scale,
                           "clahe": {"tile_grid": list(self.clahe.tile_grid),
                                     "clip_limit": self.clahe.clip_limit}},
        }


def config_hash(config: PipelineConfig, manifest: CaptureManifest) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(config.to_dict(), sort_keys=True).encode())
    h.update(manifest.path.read_bytes())
    return h.hexdigest()[:16]


# --- per-capture stages ------------------------------------------------------

class EventLog:
    """Monotonic-clock phase timings, one record per (capture, phase)."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def phase(self, capture_id: str, phase: str):
        log_ = self

        class _Span:
            def __enter__(self):
                self.start = time.monotonic()

            def __exit__(self, *exc):
                log_.records.append({"capture": capture_id, "phase": phase,
                                     "start": self.start, "end": time.monotonic()})
                return False

        return _Span()

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def approx_mask_for(capture: Capture, intr: Intrinsics) -> np.ndarray:
    return project_mask(capture.object_extent, compose(capture.marker_pose, capture.object_pose), intr)


def extract_capture(capture: Capture, manifest: CaptureManifest, config: PipelineConfig):
    img = read_image(capture.image)[..., :3]
    intr = manifest.intrinsics
    if img.shape[:2] != (intr.height, intr.width):
        raise ImageError(f"image is {img.shape[1]}x{img.shape[0]}, intrinsics say {intr.width}x{intr.height}")
    approx = approx_mask_for(capture, intr)
    chroma = chroma_key(img, manifest.chroma)
    ext = extract_region(img, chroma, approx, config.band_radius, config.alpha_threshold, config.matting)
    return img, ext


def capture_scale(capture: Capture, manifest: CaptureManifest, config: PipelineConfig) -> float:
    return scale_factor(ScaleCalibration(capture.source_distance, manifest.target_distance),
                        invert=config.invert_scale)


def write_alpha(path: str | Path, alpha: np.ndarray) -> None:
    """16-bit grayscale PNG, alpha * 65535 rounded."""
    data = np.floor(np.clip(alpha, 0.0, 1.0) * 65535.0 + 0.5).astype(np.uint16)
    Image.fromarray(data).save(Path(path), format="PNG")


def read_alpha(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im, dtype=np.float64) / 65535.0


@dataclass
class DatasetIndex:
    samples: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    classes: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {"schema_version": SCHEMA_VERSION, **self.meta, "classes": self.classes,
               "samples": self.samples, "failures": self.failures}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "DatasetIndex":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        meta = {k: v for k, v in doc.items() if k not in ("schema_version", "classes", "samples", "failures")}
        return cls(samples=doc["samples"], failures=doc.get("failures", []),
                   classes=doc.get("classes", []), meta=meta)


def _jobs(jobs: int | None) -> int:
    return max(1, int(jobs or 1))


def _run_batch(fn, captures, jobs: int):
    """Apply ``fn`` to every capture; results come back in capture order."""
    if jobs <= 1:
        return [fn(c) for c in captures]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, captures))


def run_extraction(manifest: CaptureManifest, config: PipelineConfig, out_dir: str | Path,
                   jobs: int = 1, events: EventLog | None = None) -> DatasetIndex:
    """Automatic annotation in the capture frame: mask, alpha and box per capture."""
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "alpha").mkdir(parents=True, exist_ok=True)
    events = events or EventLog()

    def _one(cap: Capture):
        try:
            with events.phase(cap.id, "extract"):
                _, ext = extract_capture(cap, manifest, config)
        except (ExtractionError, ImageError, ValueError) as exc:
            return cap, None, str(exc)
        return cap, ext, None

    index = DatasetIndex(classes=list(manifest.classes), meta={
        "tool_version": __version__, "config_hash": config_hash(config, manifest),
        "stage": "extract"})
    for cap, ext, err in _run_batch(_one, manifest.captures, _jobs(jobs)):
        if ext is None:
            index.failures.append({"capture_id": cap.id, "reason": err})
            continue
        with events.phase(cap.id, "export"):
            write_mask(out / "masks" / f"{cap.id}.png", ext.mask)
            write_alpha(out / "alpha" / f"{cap.id}.png", ext.alpha)
        index.samples.append({
            "id": cap.id, "capture_id": cap.id, "category": cap.category,
            "image": os.path.relpath(cap.image, manifest.path.parent),
            "mask": f"masks/{cap.id}.png", "alpha": f"alpha/{cap.id}.png",
            "box": list(ext.box.as_tuple()), "provenance": "AUTO",
        })
    (out / "index.json").write_text(index.to_json(), encoding="utf-8")
    return index


def run_pipeline(manifest: CaptureManifest, config: PipelineConfig, out_dir: str | Path,
                 mode: Mode | None = None, jobs: int = 1, events: EventLog | None = None) -> DatasetIndex:
    """extract -> adapt -> export for every capture; failures are recorded, not raised."""
    mode = mode or config.mode
    out = Path(out_dir)
    for sub in ("images", "masks", "alpha"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    events = events or EventLog()
    with events.phase("*", "ingest"):
        bg = read_image(manifest.background)[..., :3]
        patches = {cat: read_image(p)[..., :3] for cat, p in manifest.target_patches.items()}

    def _one(cap: Capture):
        try:
            with events.phase(cap.id, "extract"):
                img, ext = extract_capture(cap, manifest, config)
            with events.phase(cap.id, "adapt"):
                target = patches.get(cap.category, patches.get("*"))
                res = adapt(img, ext.alpha, bg, target, capture_scale(cap, manifest, config), mode,
                            mask=ext.mask, clahe_spec=config.clahe,
                            alpha_threshold=config.alpha_threshold)
        except (ExtractionError, ImageError, ValueError) as exc:
            return cap, None, str(exc)
        return cap, res, None

    index = DatasetIndex(classes=list(manifest.classes), meta={
        "tool_version": __version__, "config_hash": config_hash(config, manifest),
        "stage": "adapt", "mode": mode.value})
    for cap, res, err in _run_batch(_one, manifest.captures, _jobs(jobs)):
        if res is None:
            log.warning("capture %s failed: %s", cap.id, err)
            index.failures.append({"capture_id": cap.id, "reason": err})
            continue
        with events.phase(cap.id, "export"):
            write_image(out / "images" / f"{cap.id}.png", res.image)
            write_mask(out / "masks" / f"{cap.id}.png", res.mask)
            write_alpha(out / "alpha" / f"{cap.id}.png", res.alpha)
        index.samples.append({
            "id": cap.id, "capture_id": cap.id, "category": cap.category,
            "image": f"images/{cap.id}.png", "mask": f"masks/{cap.id}.png",
            "alpha": f"alpha/{cap.id}.png", "box": list(res.box.as_tuple()),
            "provenance": "AUTO",
        })
    (out / "index.json").write_text(index.to_json(), encoding="utf-8")
    return index


def verify_index(dataset_dir: str | Path) -> list[str]:
    """Re-load every sample and check box == tight box of its mask."""
    root = Path(dataset_dir)
    index = DatasetIndex.load(root / "index.json")
    problems = []
    for s in index.samples:
        if index.classes and s["category"] not in index.classes:
            problems.append(f"{s['id']}: category {s['category']!r} not in class list")
        if s.get("provenance") not in PROVENANCE:
            problems.append(f"{s['id']}: bad provenance {s.get('provenance')!r}")
        mask_path = root / s["mask"]
        if not mask_path.is_file():
            problems.append(f"{s['id']}: missing mask {s['mask']}")
            continue
        box = tight_box(read_mask(mask_path))
        if box is None or list(box.as_tuple()) != list(s["box"]):
            problems.append(f"{s['id']}: box {s['box']} != tight box of mask "
                            f"{None if box is None else list(box.as_tuple())}")
    return problems


# --- similarity --------------------------------------------------------------

def similarity_samples(manifest: CaptureManifest, config: PipelineConfig, jobs: int = 1):
    """Crops for every capture in Original, BS, BS+HM and BS+HM+EQ form."""
    from .metrics import SimilaritySample

    bg = read_image(manifest.background)[..., :3]
    patches = {cat: read_image(p)[..., :3] for cat, p in manifest.target_patches.items()}

    def _one(cap: Capture):
        try:
            img, ext = extract_capture(cap, manifest, config)
        except (ExtractionError, ImageError, ValueError) as exc:
            log.warning("capture %s skipped: %s", cap.id, exc)
            return []
        target = patches.get(cap.category, patches.get("*"))
        k = capture_scale(cap, manifest, config)
        out = [SimilaritySample("Original", cap.category, img, ext.box)]
        for mode in Mode:
            res = adapt(img, ext.alpha, bg, target, k, mode, mask=ext.mask,
                        clahe_spec=config.clahe, alpha_threshold=config.alpha_threshold)
            out.append(SimilaritySample(mode.value, cap.category, res.image, res.box))
        return out

    samples = [s for group in _run_batch(_one, manifest.captures, _jobs(jobs)) for s in group]
    refs = {cat: patches.get(cat, patches.get("*")) for cat in manifest.classes}
    return samples, refs


# --- video box propagation ---------------------------------------------------

def propagate_boxes(first_frame_boxes: list[tuple[BoundingBox, str]], v_c: float, fps: float,
                    px_per_m: float, n_frames: int, frame_size: tuple[int, int],
                    direction: int = 1) -> list[list[tuple[BoundingBox, str]]]:
    """Shift first-frame boxes along the belt (x axis) at constant conveyor speed.

    Frame ``t`` uses a shift of ``round(t * v_c * px_per_m / fps)`` pixels.
    Once a box has moved, it is dropped when its leading edge reaches the
    frame border: the object is leaving the view from then on.
    """
    if v_c < 0 or not fps > 0 or not px_per_m > 0:
        raise ValueError("v_c must be >= 0 and fps, px_per_m > 0")
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    width, _ = frame_size
    rate = v_c * px_per_m / fps
    frames = []
    for t in range(n_frames):
        shift = int(np.floor(t * rate + 0.5))
        kept = []
        for box, label in first_frame_boxes:
            if shift == 0:
                kept.append((box, label))
                continue
            moved = box.shifted(direction * shift, 0)
            inside = moved.x_max < width if direction > 0 else moved.x_min > 0
            if inside:
                kept.append((moved, label))
        frames.append(kept)
    return frames


# --- annotation evaluation ---------------------------------------------------

def evaluate_annotations(auto_dir: str | Path, manual_dir: str | Path) -> dict:
    """Per-category mean and population std of IoU/P/R/F between two mask sets.

    ``auto_dir`` holds an extraction ``index.json``; ``manual_dir`` holds
    ``<id>.png`` masks.
    """
    auto_dir, manual_dir = Path(auto_dir), Path(manual_dir)
    index = DatasetIndex.load(auto_dir / "index.json")
    auto = {s["id"]: s for s in index.samples}
    manual = {p.stem: p for p in sorted(manual_dir.glob("*.png"))}
    missing_manual = sorted(set(auto) - set(manual))
    missing_auto = sorted(set(manual) - set(auto))
    per_cat: dict[str, dict[str, list[float]]] = {}
    per_sample = []
    for sid in sorted(set(auto) & set(manual)):
        pred = read_mask(auto_dir / auto[sid]["mask"])
        gt = read_mask(manual[sid])
        counts, scores = mask_eval(pred, gt)
        cat = auto[sid]["category"]
        cell = per_cat.setdefault(cat, {"iou": [], "precision": [], "recall": [], "f_score": []})
        for key in cell:
            cell[key].append(getattr(scores, key))
        per_sample.append({"id": sid, "category": cat, "tp": counts.tp, "fp": counts.fp, "fn": counts.fn,
                           "iou": scores.iou, "precision": scores.precision,
                           "recall": scores.recall, "f_score": scores.f_score})
    categories = {}
    for cat in sorted(per_cat):
        categories[cat] = {key: {"mean": float(np.mean(v)), "std": float(np.std(v))}
                           for key, v in per_cat[cat].items()}
        categories[cat]["n"] = len(per_cat[cat]["iou"])
    return {"schema_version": SCHEMA_VERSION, "categories": categories, "samples": per_sample,
            "excluded": {"missing_manual": missing_manual, "missing_auto": missing_auto}}


def format_annotation_report(report: dict) -> str:
    header = ["Object", "IoU [%]", "Precision [%]", "Recall [%]", "F-score [%]", "n"]
    rows = [header]
    for cat, cell in report["categories"].items():
        rows.append([cat] + [f"{cell[k]['mean']:.1f} ± {cell[k]['std']:.1f}"
                             for k in ("iou", "precision", "recall", "f_score")] + [str(cell["n"])])
    lines = align_table(rows)
    ex = report["excluded"]
    if ex["missing_manual"] or ex["missing_auto"]:
        lines.append(f"excluded: no manual mask {ex['missing_manual']}, no auto mask {ex['missing_auto']}")
    return "\n".join(lines) + "\n"


# --- collection-time accounting -----------------------------------------------

PHASES = ("ingest", "extract", "adapt", "export")


def load_events(path: str | Path) -> list[dict]:
    text = Path(path).read_text(encoding="utf-8")
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def report_collection_time(events: list[dict]) -> dict:
    """Total and per-100-image wall time for each pipeline phase."""
    totals: dict[str, float] = {}
    captures = {e["capture"] for e in events if e["capture"] != "*"}
    for e in events:
        totals[e["phase"]] = totals.get(e["phase"], 0.0) + (float(e["end"]) - float(e["start"]))
    n = len(captures)
    rows = {}
    for phase in [p for p in PHASES if p in totals] + sorted(set(totals) - set(PHASES)):
        rows[phase] = {"total_s": totals[phase],
                       "per_100_images_s": totals[phase] / n * 100.0 if n else None}
    return {"schema_version": SCHEMA_VERSION, "images": n, "phases": rows}


def format_collection_time(report: dict) -> str:
    if not report["phases"]:
        return "(no events)\n"
    rows = [["Phase", "Total [s]", "Per 100 images [s]"]]
    for phase, cell in report["phases"].items():
        per = cell["per_100_images_s"]
        rows.append([phase, f"{cell['total_s']:.3f}", "-" if per is None else f"{per:.3f}"])
    return "\n".join(align_table(rows)) + "\n"


def distance_to_patch(img: np.ndarray, box: BoundingBox | None, patch: np.ndarray) -> tuple[float, float]:
    return crop_distances(img, box, channel_histograms(patch))
