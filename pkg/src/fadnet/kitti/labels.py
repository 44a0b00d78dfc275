"""KITTI object label and calibration text formats."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ParseError
from ..geometry import Box2D, Box3D, CameraIntrinsics, alpha_from_yaw

CATEGORIES = ("Car", "Pedestrian", "Cyclist")
DONTCARE = "DontCare"
LABEL_FIELDS = 15


@dataclass(frozen=True)
class ObjectLabel:
    """One annotated object.

    ``location`` is KITTI's bottom-center point; :attr:`box3d` converts it to
    the geometric centroid (y shifted up by H/2, since y points down).
    """

    category: str
    truncation: float
    occlusion: int
    alpha: float
    bbox: tuple[float, float, float, float]  # left, top, right, bottom
    dimensions: tuple[float, float, float]  # H, W, L
    location: tuple[float, float, float]  # x, y, z (bottom center)
    yaw: float
    score: float | None = None

    @property
    def is_dontcare(self) -> bool:
        return self.category == DONTCARE

    @property
    def box2d(self) -> Box2D:
        return Box2D.from_ltrb(*self.bbox)

    @property
    def box3d(self) -> Box3D:
        H, W, L = self.dimensions
        x, y, z = self.location
        return Box3D(x, y - H / 2.0, z, H, W, L, self.yaw)

    @property
    def height_px(self) -> float:
        return self.bbox[3] - self.bbox[1]

    @classmethod
    def from_boxes(cls, category: str, box3d: Box3D, box2d: Box2D, truncation: float = 0.0,
                   occlusion: int = 0, score: float | None = None,
                   alpha: float | None = None) -> "ObjectLabel":
        if alpha is None:
            alpha = alpha_from_yaw(box3d.theta, box3d.x, box3d.z)
        return cls(
            category,
            float(truncation),
            int(occlusion),
            float(alpha),
            tuple(float(c) for c in box2d.ltrb),
            (float(box3d.H), float(box3d.W), float(box3d.L)),
            (float(box3d.x), float(box3d.y + box3d.H / 2.0), float(box3d.z)),
            float(box3d.theta),
            score,
        )

    def with_bbox(self, box2d: Box2D) -> "ObjectLabel":
        return replace(self, bbox=tuple(float(c) for c in box2d.ltrb))


@dataclass
class KittiFrame:
    image_id: str
    intrinsics: CameraIntrinsics
    objects: list[ObjectLabel] = field(default_factory=list)
    image: np.ndarray | None = None  # 3 x H x W, standardized


def _float(token: str, lineno: int, name: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"field {name!r} is not numeric: {token!r}", lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"field {name!r} is not finite: {token!r}", lineno)
    return value


def _parse_line(tokens: list[str], lineno: int) -> ObjectLabel:
    names = ("truncated", "occluded", "alpha", "left", "top", "right", "bottom",
             "height", "width", "length", "x", "y", "z", "rotation_y", "score")
    vals = [_float(t, lineno, n) for t, n in zip(tokens[1:], names)]
    occ = vals[1]
    if occ != int(occ):
        raise ParseError(f"occlusion must be an integer, got {tokens[2]!r}", lineno)
    return ObjectLabel(
        category=tokens[0],
        truncation=vals[0],
        occlusion=int(occ),
        alpha=vals[2],
        bbox=tuple(vals[3:7]),
        dimensions=tuple(vals[7:10]),
        location=tuple(vals[10:13]),
        yaw=vals[13],
        score=vals[14] if len(vals) > 14 else None,
    )


def parse_label_file(text: str, with_score: bool = False) -> list[ObjectLabel]:
    """Parse a label file (15 fields per line), or a result file with ``with_score``."""
    expected = LABEL_FIELDS + (1 if with_score else 0)
    objects = []
    for lineno, line in enumerate(text.splitlines(), 1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != expected:
            raise ParseError(f"expected {expected} fields, got {len(tokens)}", lineno)
        objects.append(_parse_line(tokens, lineno))
    return objects


def parse_result_file(text: str) -> list[ObjectLabel]:
    return parse_label_file(text, with_score=True)


def format_label(obj: ObjectLabel, with_score: bool | None = None) -> str:
    if with_score is None:
        with_score = obj.score is not None
    parts = [obj.category, f"{obj.truncation:.2f}", str(obj.occlusion), f"{obj.alpha:.2f}"]
    parts += [f"{v:.2f}" for v in obj.bbox]
    parts += [f"{v:.2f}" for v in obj.dimensions]
    parts += [f"{v:.2f}" for v in obj.location]
    parts.append(f"{obj.yaw:.2f}")
    if with_score:
        parts.append(f"{obj.score if obj.score is not None else 1.0:.4f}")
    return " ".join(parts)


def write_label_file(objects, with_score: bool | None = None) -> str:
    return "".join(format_label(o, with_score) + "\n" for o in objects)


def parse_calib(text: str) -> CameraIntrinsics:
    """Intrinsics from the ``P2:`` row; its translation column is dropped."""
    for lineno, line in enumerate(text.splitlines(), 1):
        tokens = line.split()
        if not tokens or tokens[0] != "P2:":
            continue
        if len(tokens) != 13:
            raise ParseError(f"P2 needs 12 values, got {len(tokens) - 1}", lineno)
        p = [_float(t, lineno, "P2") for t in tokens[1:]]
        return CameraIntrinsics(fx=p[0], fy=p[5], u0=p[2], v0=p[6])
    raise ParseError("no P2 row in calibration text")


def format_calib(K: CameraIntrinsics) -> str:
    """Minimal calibration text; P0..P3 share the same intrinsics and no baseline."""
    row = [K.fx, 0.0, K.u0, 0.0, 0.0, K.fy, K.v0, 0.0, 0.0, 0.0, 1.0, 0.0]
    body = " ".join(f"{v:.12e}" for v in row)
    return "".join(f"P{i}: {body}\n" for i in range(4))
