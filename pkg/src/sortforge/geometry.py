"""Rigid poses between marker/camera/object frames and capture-to-scene scaling."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.transform import Rotation

from .imgcore import ImageError, as_image, as_mask


class PoseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Transform taking coordinates in ``to`` frame into the ``from_`` frame.

    Matches the hand-eye convention where the camera-to-marker pose maps
    marker-frame points into camera coordinates, so
    ``compose(cam_to_marker, marker_to_object)`` is camera-to-object.
    """

    from_: str
    to: str
    rotation: np.ndarray = field(repr=False)
    translation: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if not self.from_ or not self.to:
            raise PoseError("frame names must be non-empty")
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9):
            raise PoseError(f"rotation {self.from_}->{self.to} is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise PoseError(f"rotation {self.from_}->{self.to} has determinant != +1")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls, from_: str, to: str) -> "RigidPose":
        return cls(from_, to, np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, from_: str, to: str, rotvec, translation) -> "RigidPose":
        rot = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()
        return cls(from_, to, rot, translation)

    def rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        return RigidPose(self.to, self.from_, rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def compose(a: RigidPose, b: RigidPose) -> RigidPose:
    if a.to != b.from_:
        raise PoseError(f"cannot compose {a.from_}->{a.to} with {b.from_}->{b.to}: "
                        f"frame {a.to!r} != {b.from_!r}")
    return RigidPose(a.from_, b.to, a.rotation @ b.rotation,
                     a.rotation @ b.translation + a.translation)


@dataclass(frozen=True)
class ScaleCalibration:
    d_s: float
    d_t: float

    def __post_init__(self) -> None:
        if not (self.d_s > 0 and self.d_t > 0):
            raise PoseError(f"board distances must be positive (d_s={self.d_s}, d_t={self.d_t})")

    @property
    def k(self) -> float:
        return self.d_t / self.d_s


def scale_factor(cal: ScaleCalibration, invert: bool = False) -> float:
    """Ratio of target to source board distance.

    ``invert=True`` returns ``d_s / d_t``, the ratio a pinhole camera
    implies for apparent size.
    """
    if not (cal.d_s > 0 and cal.d_t > 0):
        raise PoseError("board distances must be positive")
    if cal.d_s == cal.d_t:
        return 1.0
    return cal.d_s / cal.d_t if invert else cal.d_t / cal.d_s


def _bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[None, :, None]
    fy = (sy - y0)[:, None, None]
    src = img.astype(np.float64)
    if src.ndim == 2:
        src = src[:, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out if img.ndim == 3 else out[:, :, 0]


def scale_image(img: np.ndarray, mask: np.ndarray, k: float,
                alpha: np.ndarray | None = None):
    """Resample image and mask by ``k``.

    The canvas grows or shrinks with the object, so the object keeps its
    relative framing; pixel centers are aligned (``x' + 0.5 = k (x + 0.5)``).
    Image and optional alpha are sampled bilinearly, the mask by nearest
    neighbour. Returns ``(image, mask)``, plus the alpha when given.
    """
    img = as_image(img)
    mask = as_mask(mask)
    if mask.shape != img.shape[:2]:
        raise ImageError("mask and image dimensions differ")
    if not k > 0:
        raise ImageError("scale factor must be positive")
    if k == 1.0:
        out = (img.copy(), mask.copy())
        return out + (np.array(alpha, dtype=np.float64),) if alpha is not None else out

    h, w = mask.shape
    new_w = int(np.floor(w * k + 0.5))
    new_h = int(np.floor(h * k + 0.5))
    if new_w < 1 or new_h < 1:
        raise ImageError(f"scaled image would be {new_w}x{new_h}")
    sx = (np.arange(new_w) + 0.5) / k - 0.5
    sy = (np.arange(new_h) + 0.5) / k - 0.5

    out_img = np.clip(np.floor(_bilinear(img, sx, sy) + 0.5), 0, 255).astype(np.uint8)
    nx = np.clip(np.floor(sx + 0.5).astype(np.intp), 0, w - 1)
    ny = np.clip(np.floor(sy + 0.5).astype(np.intp), 0, h - 1)
    out_mask = mask[ny][:, nx]
    if alpha is None:
        return out_img, out_mask
    out_alpha = np.clip(_bilinear(np.asarray(alpha, dtype=np.float64), sx, sy), 0.0, 1.0)
    return out_img, out_mask, out_alpha


@dataclass(frozen=True)
class Intrinsics:
    focal: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not self.focal > 0:
            raise PoseError("focal length must be positive")
        if self.width < 1 or self.height < 1:
            raise PoseError("image size must be positive")


def cuboid_corners(extent) -> np.ndarray:
    w, h, d = (float(v) for v in extent)
    if min(w, h, d) <= 0:
        raise PoseError("object extent must be positive")
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                     dtype=np.float64)
    return signs * np.array([w, h, d]) / 2.0


def project_points(points_cam: np.ndarray, intr: Intrinsics) -> np.ndarray:
    z = points_cam[:, 2]
    if np.any(z <= 0):
        raise PoseError("object behind camera")
    u = intr.focal * points_cam[:, 0] / z + intr.cx
    v = intr.focal * points_cam[:, 1] / z + intr.cy
    return np.stack([u, v], axis=1)


def project_mask(model_extent, pose: RigidPose, intr: Intrinsics) -> np.ndarray:
    """Filled convex hull of the object's bounding cuboid under a pinhole camera.

    ``pose`` maps object-frame points into camera coordinates. A pixel is
    set when its center lies inside the hull.
    """
    corners = pose.apply(cuboid_corners(model_extent))
    uv = project_points(corners, intr)
    out = np.zeros((intr.height, intr.width), dtype=bool)
    try:
        hull = uv[ConvexHull(uv).vertices]  # counter-clockwise
    except QhullError:  # collinear projection has no area
        return out
    x0 = max(int(np.floor(hull[:, 0].min())), 0)
    x1 = min(int(np.ceil(hull[:, 0].max())) + 1, intr.width)
    y0 = max(int(np.floor(hull[:, 1].min())), 0)
    y1 = min(int(np.ceil(hull[:, 1].max())) + 1, intr.height)
    if x0 >= x1 or y0 >= y1:
        return out
    gx, gy = np.meshgrid(np.arange(x0, x1, dtype=np.float64),
                         np.arange(y0, y1, dtype=np.float64))
    inside = np.ones(gx.shape, dtype=bool)
    for (ax, ay), (bx, by) in zip(hull, np.roll(hull, -1, axis=0)):
        cross = (bx - ax) * (gy - ay) - (by - ay) * (gx - ax)
        inside &= cross >= -1e-9
    out[y0:y1, x0:x1] = inside
    return out
