"""Closed-form camera geometry and box encodings.

Camera frame: x right, y down, z forward (KITTI). Yaw ``theta`` rotates about
the y axis. Object-frame corner offsets follow the KITTI devkit: length along
x, height along y, width along z at ``theta = 0``, so with

    R(theta) = [[cos, 0, sin], [0, 1, 0], [-sin, 0, cos]]

the offset ``(L/2, 0, 0)`` rotates onto ``-z`` at ``theta = pi/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, DomainError, ProjectionError

# Corner order: bit 0 picks +/- along length, bit 1 along height, bit 2 along width.
CORNER_SIGNS = np.array(
    [[sx, sy, sz] for sz in (1, -1) for sy in (1, -1) for sx in (1, -1)], dtype=float
)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    u0: float
    v0: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.u0], [0.0, self.fy, self.v0], [0.0, 0.0, 1.0]])

    def project(self, points) -> np.ndarray:
        """Project (..., 3) camera points to (..., 2) pixels; every z must be positive."""
        p = np.asarray(points, dtype=float)
        z = p[..., 2]
        if np.any(z <= 0):
            raise ProjectionError("point on or behind the image plane")
        return np.stack([self.fx * p[..., 0] / z + self.u0, self.fy * p[..., 1] / z + self.v0], -1)

    def backproject(self, u, v, z):
        return (z * (u - self.u0) / self.fx, z * (v - self.v0) / self.fy, z)

    def scaled(self, sx: float, sy: float) -> "CameraIntrinsics":
        """Intrinsics after resizing the image by (sx, sy)."""
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.u0 * sx, self.v0 * sy)


@dataclass(frozen=True)
class Box2D:
    u: float
    v: float
    w: float
    h: float

    @classmethod
    def from_ltrb(cls, left, top, right, bottom) -> "Box2D":
        return cls((left + right) / 2.0, (top + bottom) / 2.0, right - left, bottom - top)

    @property
    def ltrb(self) -> tuple[float, float, float, float]:
        return (self.u - self.w / 2, self.v - self.h / 2, self.u + self.w / 2, self.v + self.h / 2)

    @property
    def area(self) -> float:
        return max(self.w, 0.0) * max(self.h, 0.0)


@dataclass(frozen=True)
class Box3D:
    """Centroid (x, y, z) in meters, dimensions (H, W, L) in meters, yaw in radians."""

    x: float
    y: float
    z: float
    H: float
    W: float
    L: float
    theta: float

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.H, self.W, self.L])

    @property
    def volume(self) -> float:
        return self.H * self.W * self.L


@dataclass(frozen=True)
class DimensionTemplate:
    """Per-category mean (H, W, L) in meters."""

    means: dict

    def __getitem__(self, category) -> np.ndarray:
        return np.asarray(self.means[category], dtype=float)

    def __contains__(self, category) -> bool:
        return category in self.means

    @property
    def categories(self) -> list:
        return list(self.means)


@dataclass(frozen=True)
class KeypointEstimate:
    u3dK: float
    v3dK: float
    category: int
    score: float
    cell: tuple[int, int] = (0, 0)  # (cu, cv) in heatmap cells


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2 * np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


# -- 2D center ------------------------------------------------------------
def decode_center2d(kp: KeypointEstimate, du2d, dv2d):
    return kp.u3dK + du2d, kp.v3dK + dv2d


def encode_center2d(kp: KeypointEstimate, u2d, v2d):
    return u2d - kp.u3dK, v2d - kp.v3dK


# -- depth ----------------------------------------------------------------
def encode_depth(d):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError(f"depth must be positive, got {d}")
    out = -np.log(d)
    return float(out) if out.ndim == 0 else out


def decode_depth(d_enc):
    out = 1.0 / sigmoid(d_enc) - 1.0
    return float(out) if np.ndim(out) == 0 else out


# -- 3D location ------------------------------------------------------------
def decode_location3d(kp: KeypointEstimate, du3d, dv3d, d_enc, K: CameraIntrinsics):
    z = decode_depth(d_enc)
    if not z > 0:
        raise DegenerateGeometryError(f"decoded depth {z} is not positive")
    u = kp.u3dK + du3d
    v = kp.v3dK + dv3d
    return z * (u - K.u0) / K.fx, z * (v - K.v0) / K.fy, z


def encode_location3d(kp: KeypointEstimate, x, y, z, K: CameraIntrinsics):
    """Inverse of :func:`decode_location3d`: (du3d, dv3d, d_enc)."""
    u, v = K.project([x, y, z])
    return u - kp.u3dK, v - kp.v3dK, encode_depth(z)


# -- dimensions -------------------------------------------------------------
def decode_dimensions(template, dH, dW, dL):
    Hb, Wb, Lb = np.asarray(template, dtype=float)
    return Hb * math.exp(dH), Wb * math.exp(dW), Lb * math.exp(dL)


def encode_dimensions(template, H, W, L):
    Hb, Wb, Lb = np.asarray(template, dtype=float)
    return math.log(H / Hb), math.log(W / Wb), math.log(L / Lb)


# -- angles -----------------------------------------------------------------
def decode_yaw(cos_a, sin_a, x, z) -> float:
    if cos_a == 0 and sin_a == 0:
        raise DegenerateGeometryError("viewing-angle pair is (0, 0)")
    return wrap_angle(math.atan2(sin_a, cos_a) + math.atan2(x, z))


def alpha_from_yaw(theta, x, z) -> float:
    return wrap_angle(theta - math.atan2(x, z))


# -- corners ----------------------------------------------------------------
def corners2d(box: Box2D) -> np.ndarray:
    """(4, 2) corners in the order TL, TR, BL, BR."""
    hw, hh = box.w / 2.0, box.h / 2.0
    return np.array(
        [
            [box.u - hw, box.v - hh],
            [box.u + hw, box.v - hh],
            [box.u - hw, box.v + hh],
            [box.u + hw, box.v + hh],
        ]
    )


def rotation_y(theta) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def corners3d(box: Box3D) -> np.ndarray:
    """(8, 3) corners: rotate the half-extent offsets by yaw, then translate."""
    offsets = CORNER_SIGNS * (np.array([box.L, box.H, box.W]) / 2.0)
    return offsets @ rotation_y(box.theta).T + box.center


def bev_corners(box: Box3D) -> np.ndarray:
    """(4, 2) footprint corners in the (x, z) plane, counter-clockwise."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    half = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=float) * (
        np.array([box.L, box.W]) / 2.0
    )
    x = c * half[:, 0] + s * half[:, 1] + box.x
    z = -s * half[:, 0] + c * half[:, 1] + box.z
    pts = np.stack([x, z], axis=1)
    # fix orientation to counter-clockwise in (x, z)
    if _signed_area(pts) < 0:
        pts = pts[::-1]
    return pts


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def remake_label_2d(box3d: Box3D, K: CameraIntrinsics) -> Box2D:
    """Tight, unclipped 2D box around the eight projected 3D corners."""
    pts = corners3d(box3d)
    if np.any(pts[:, 2] <= 0):
        raise ProjectionError("3D box extends behind the camera")
    uv = K.project(pts)
    return Box2D.from_ltrb(uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max())


def iou_ltrb(a, b) -> float:
    """Axis-aligned IoU of two (left, top, right, bottom) boxes; 0 for an empty union."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = max(a[2] - a[0], 0.0) * max(a[3] - a[1], 0.0) + max(b[2] - b[0], 0.0) * max(
        b[3] - b[1], 0.0
    ) - inter
    return inter / union if union > 0 else 0.0
