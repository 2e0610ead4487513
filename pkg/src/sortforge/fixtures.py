"""Seeded synthetic capture sets for tests, demos and the acceptance suite.

A capture set mimics the rotating-stage rig: objects on a green screen with
a fiducial patch beside them, poses known exactly, plus a sorting-scene
background and per-category object crops photographed "on the line" under
different lighting.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import RigidPose, compose
from .imgcore import tight_box, to_uint8, write_image, write_mask

CATEGORIES = ("aluminum_can", "glass_bottle", "plastic_bottle")

# width, height, depth in meters
EXTENTS = {
    "aluminum_can": (0.066, 0.12, 0.066),
    "glass_bottle": (0.07, 0.2, 0.07),
    "plastic_bottle": (0.075, 0.21, 0.075),
}

# base RGB under the capture rig's flat lighting
CAPTURE_COLORS = {
    "aluminum_can": ((196, 44, 48), (168, 168, 174)),
    "glass_bottle": ((112, 62, 28), (92, 50, 22)),
    "plastic_bottle": ((150, 176, 206), (236, 236, 240)),
}

# the capture rig is lit brighter and flatter than the sorting line
CAPTURE_GAIN = 1.25
# fraction of the backdrop seen through the object on the capture rig
TRANSLUCENCY = {"aluminum_can": 0.0, "glass_bottle": 0.4, "plastic_bottle": 0.1}
# per-channel gain of the sorting-line lighting
SCENE_LIGHT = np.array([1.0, 0.82, 0.62])

WIDTH, HEIGHT = 200, 150
FOCAL = 300.0
SOURCE_DISTANCE = 0.5
TARGET_DISTANCE = 0.6
GREEN = np.array([46.0, 172.0, 72.0])
SUPERSAMPLE = 4


def _shape_inside(category: str, u: np.ndarray, v: np.ndarray, w: float, h: float) -> np.ndarray:
    """Object outline in local metric coordinates (u across, v along, origin at center)."""
    if category == "aluminum_can":
        r = 0.12 * w
        du = np.maximum(np.abs(u) - (w / 2 - r), 0.0)
        dv = np.maximum(np.abs(v) - (h / 2 - r), 0.0)
        return (du * du + dv * dv <= r * r) & (np.abs(u) <= w / 2) & (np.abs(v) <= h / 2)
    neck_len = 0.3 * h
    shoulder = 0.12 * h
    top = -h / 2
    half = np.where(
        v < top + neck_len, 0.18 * w,
        np.where(v < top + neck_len + shoulder,
                 0.18 * w + (0.5 - 0.18) * w * (v - top - neck_len) / shoulder, 0.5 * w))
    return (np.abs(u) <= half) & (np.abs(v) <= h / 2)


def _label_band(category: str, v: np.ndarray, h: float) -> np.ndarray:
    if category == "aluminum_can":
        return np.abs(v) > 0.3 * h
    if category == "plastic_bottle":
        return v < -0.42 * h  # cap
    return np.abs(v - 0.1 * h) < 0.12 * h


def render_object(category: str, center_px: tuple[float, float], px_per_m: float, angle: float,
                  size: tuple[int, int], lighting: str, rng: np.random.Generator):
    """Rendered RGB (float), coverage in [0, 1] and coverage >= 0.5 mask."""
    w_m, h_m, _ = EXTENTS[category]
    width, height = size
    s = SUPERSAMPLE
    offs = (np.arange(s) + 0.5) / s - 0.5
    ys = (np.arange(height)[:, None] + offs[None, :]).ravel()
    xs = (np.arange(width)[:, None] + offs[None, :]).ravel()
    gx, gy = np.meshgrid(xs, ys)
    ca, sa = np.cos(angle), np.sin(angle)
    dx = (gx - center_px[0]) / px_per_m
    dy = (gy - center_px[1]) / px_per_m
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    inside = _shape_inside(category, u, v, w_m, h_m)

    base, band = (np.array(c, dtype=np.float64) for c in CAPTURE_COLORS[category])
    color = np.where(_label_band(category, v, h_m)[..., None], band, base)
    across = np.clip(u / (w_m / 2), -1.0, 1.0)
    if lighting == "capture":
        shade = 0.93 + 0.07 * np.sqrt(1.0 - across ** 2)
        rgb = color * CAPTURE_GAIN * shade[..., None]
        spill = TRANSLUCENCY[category]
        rgb = (1 - spill) * rgb + spill * GREEN
    else:
        shade = 0.3 + 0.75 * np.sqrt(1.0 - across ** 2)
        glint = 70.0 * np.exp(-((across - 0.35) / 0.12) ** 2)
        rgb = color * SCENE_LIGHT * shade[..., None] + glint[..., None]
    cov = inside.reshape(height, s, width, s).mean(axis=(1, 3))
    acc = (rgb * inside[..., None]).reshape(height, s, width, s, 3).sum(axis=(1, 3))
    obj = acc / np.maximum(cov * s * s, 1)[..., None]
    noise = 1.5 if lighting == "capture" else 7.0
    obj = obj + rng.normal(0.0, noise, obj.shape)
    return obj, cov, cov >= 0.5


def _green_screen(rng: np.random.Generator) -> np.ndarray:
    ramp = np.linspace(-8.0, 8.0, WIDTH)[None, :, None]
    return GREEN + ramp + rng.normal(0.0, 3.0, (HEIGHT, WIDTH, 3))


def _marker_patch(img: np.ndarray, x: int, y: int, rng: np.random.Generator, size: int = 16) -> None:
    cells = rng.integers(0, 2, (4, 4))
    cell = (size - 4) // 4
    img[y:y + size, x:x + size] = 15.0
    for r in range(4):
        for c in range(4):
            if cells[r, c]:
                y0, x0 = y + 2 + r * cell, x + 2 + c * cell
                img[y0:y0 + cell, x0:x0 + cell] = 240.0


def conveyor_background(rng: np.random.Generator, size: tuple[int, int] | None = None) -> np.ndarray:
    width, height = size or (int(WIDTH * 1.4), int(HEIGHT * 1.4))
    base = np.array([78.0, 74.0, 70.0]) * SCENE_LIGHT
    stripes = 10.0 * (np.sin(np.arange(height) / 3.0) > 0.6)[:, None, None]
    img = base + stripes + rng.normal(0.0, 6.0, (height, width, 3))
    return to_uint8(img)


def target_patch(category: str, rng: np.random.Generator, margin: int = 6) -> np.ndarray:
    """Object crop as seen on the sorting line, bounding box plus a belt margin."""
    k = TARGET_DISTANCE / SOURCE_DISTANCE
    ppm = FOCAL / SOURCE_DISTANCE * k
    w_m, h_m, _ = EXTENTS[category]
    width = int(np.ceil(w_m * ppm)) + 2 * margin + 4
    height = int(np.ceil(h_m * ppm)) + 2 * margin + 4
    bg = conveyor_background(rng, (width, height)).astype(np.float64)
    obj, cov, mask = render_object(category, ((width - 1) / 2, (height - 1) / 2), ppm, 0.0,
                                   (width, height), "scene", rng)
    img = cov[..., None] * obj + (1 - cov[..., None]) * bg
    box = tight_box(mask)
    y0, y1 = max(box.y_min - margin, 0), min(box.y_max + margin, height)
    x0, x1 = max(box.x_min - margin, 0), min(box.x_max + margin, width)
    return to_uint8(img[y0:y1, x0:x1])


def _pose_doc(pose: RigidPose) -> dict:
    return {"rotation": [round(float(v), 12) for v in pose.rotvec()],
            "translation": [round(float(v), 12) for v in pose.translation]}


def make_capture(category: str, index: int, rng: np.random.Generator):
    """One rig capture: image, ground-truth mask and the two poses."""
    tilt = rng.uniform(-0.04, 0.04, 3) * np.array([1, 1, 0])
    marker = RigidPose.from_axis_angle("camera", "marker_0", tilt,
                                       [rng.uniform(-0.015, 0.015), rng.uniform(-0.01, 0.01),
                                        SOURCE_DISTANCE])
    angle = float(rng.uniform(-0.6, 0.6))
    offset = [rng.uniform(-0.02, 0.02), rng.uniform(-0.01, 0.01), 0.0]
    obj_pose = RigidPose.from_axis_angle("marker_0", "object", [0.0, 0.0, angle], offset)
    cam_obj = compose(marker, obj_pose)
    c = cam_obj.translation
    center = (FOCAL * c[0] / c[2] + (WIDTH - 1) / 2, FOCAL * c[1] / c[2] + (HEIGHT - 1) / 2)
    # in-plane angle of the object's x axis as seen by the camera
    ax = cam_obj.rotation[:, 0]
    plane_angle = float(np.arctan2(ax[1], ax[0]))
    obj, cov, gt = render_object(category, center, FOCAL / c[2], plane_angle, (WIDTH, HEIGHT),
                                 "capture", rng)
    img = _green_screen(rng)
    _marker_patch(img, 6, 6, rng)
    img = cov[..., None] * obj + (1 - cov[..., None]) * img
    return to_uint8(img), gt, marker, obj_pose


def intrinsics_doc() -> dict:
    return {"focal": FOCAL, "cx": (WIDTH - 1) / 2, "cy": (HEIGHT - 1) / 2,
            "width": WIDTH, "height": HEIGHT}


def write_capture_set(out_dir: str | Path, n_captures: int = 12, seed: int = 0) -> Path:
    """Write images, ground-truth masks, scene files and ``manifest.json``.

    Categories cycle through :data:`CATEGORIES`. Returns the manifest path.
    """
    out = Path(out_dir)
    for sub in ("captures", "manual", "scene"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    write_image(out / "scene" / "background.png", conveyor_background(rng))
    patches = {}
    for cat in CATEGORIES:
        write_image(out / "scene" / f"target_{cat}.png", target_patch(cat, rng))
        patches[cat] = f"scene/target_{cat}.png"
    captures = []
    for i in range(n_captures):
        cat = CATEGORIES[i % len(CATEGORIES)]
        cid = f"cap_{i:03d}"
        img, gt, marker, obj_pose = make_capture(cat, i, rng)
        write_image(out / "captures" / f"{cid}.png", img)
        write_mask(out / "manual" / f"{cid}.png", gt)
        captures.append({
            "id": cid, "image": f"captures/{cid}.png", "category": cat,
            "source_distance": SOURCE_DISTANCE, "marker_id": 0,
            "marker_pose": _pose_doc(marker), "object_pose": _pose_doc(obj_pose),
            "object_extent": list(EXTENTS[cat]),
        })
    manifest = {
        "schema_version": 1,
        "classes": list(CATEGORIES),
        "target_distance": TARGET_DISTANCE,
        "background": "scene/background.png",
        "target_patches": patches,
        "chroma": {"key_hue": 120.0, "hue_tolerance": 30.0, "min_saturation": 0.25, "min_value": 0.15},
        "intrinsics": intrinsics_doc(),
        "captures": captures,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_config(out_dir: str | Path, manifest: str = "manifest.json", **sections) -> Path:
    """Pipeline config next to the manifest; extra sections merge in verbatim."""
    doc = {
        "schema_version": 1,
        "manifest": manifest,
        "extraction": {"band_radius": 5, "alpha_threshold": 0.5,
                       "matting": {"window_radius": 1, "epsilon": 1e-5,
                                   "max_iterations": 2000, "tolerance": 1e-5}},
        "adaptation": {"mode": "BS+HM+EQ", "invert_scale": False,
                       "clahe": {"tile_grid": [8, 8], "clip_limit": 2.0}},
    }
    doc.update(sections)
    path = Path(out_dir) / "config.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def known_alpha_fixture(size: int = 64, radius: float = 18.0, falloff: float = 3.0):
    """Disk with a linear alpha ramp over a contrasting background.

    Returns ``(image, true_alpha, disk_mask)``; the image is the exact
    composite of constant foreground/background colors.
    """
    yy, xx = np.mgrid[:size, :size]
    c = (size - 1) / 2.0
    d = np.hypot(xx - c, yy - c)
    alpha = np.clip((radius - d) / falloff + 0.5, 0.0, 1.0)
    fg = np.array([220.0, 40.0, 30.0])
    bg = np.array([20.0, 160.0, 60.0])
    img = to_uint8(alpha[..., None] * fg + (1 - alpha[..., None]) * bg)
    return img, alpha, d < radius
