"""Heatmap peak extraction and full 2D/3D decoding into detections."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import DegenerateGeometryError, ParameterError
from .geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    DimensionTemplate,
    KeypointEstimate,
    decode_center2d,
    decode_dimensions,
    decode_location3d,
    decode_yaw,
    wrap_angle,
)
from .kitti.labels import CATEGORIES, ObjectLabel, parse_result_file, write_label_file

STRIDE = 4


@dataclass(frozen=True)
class Detection:
    category: str
    score: float
    box2d: Box2D
    box3d: Box3D
    alpha: float

    def to_label(self) -> ObjectLabel:
        return ObjectLabel.from_boxes(
            self.category, self.box3d, self.box2d, truncation=-1.0, occlusion=-1,
            score=self.score, alpha=self.alpha,
        )

    @classmethod
    def from_label(cls, obj: ObjectLabel) -> "Detection":
        score = obj.score if obj.score is not None else 1.0
        return cls(obj.category, score, obj.box2d, obj.box3d, obj.alpha)


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def peak_mask(heatmap) -> np.ndarray:
    """Cells equal to their 3x3 neighborhood max; among equal neighbors only the
    lexicographically smallest (u, v) survives."""
    hm = _as_array(heatmap)
    c, h, w = hm.shape
    padded = np.full((c, h + 2, w + 2), -np.inf)
    padded[:, 1:-1, 1:-1] = hm
    keep = np.ones(hm.shape, dtype=bool)
    for du in (-1, 0, 1):
        for dv in (-1, 0, 1):
            if du == 0 and dv == 0:
                continue
            nb = padded[:, 1 + dv : 1 + dv + h, 1 + du : 1 + du + w]
            keep &= hm >= nb
            if (du, dv) < (0, 0):
                keep &= hm != nb
    return keep


def extract_keypoints(heatmap, threshold: float = 0.25, topk: int = 100) -> list[KeypointEstimate]:
    """Local maxima above ``threshold``, at most ``topk``, best score first.

    Equal scores are ordered by (category, u, v) so the result is deterministic.
    """
    if not 0 < threshold < 1:
        raise ParameterError(f"threshold must lie in (0, 1), got {threshold}")
    if topk < 1:
        raise ParameterError(f"topk must be >= 1, got {topk}")
    hm = _as_array(heatmap)
    if hm.ndim != 3:
        raise ParameterError(f"heatmap must be [C, h, w], got shape {hm.shape}")
    cs, vs, us = np.nonzero(peak_mask(hm) & (hm >= threshold))
    scores = hm[cs, vs, us]
    order = np.lexsort((vs, us, cs, -scores))[:topk]
    return [
        KeypointEstimate(
            float(STRIDE * us[i]), float(STRIDE * vs[i]), int(cs[i]), float(scores[i]),
            (int(us[i]), int(vs[i])),
        )
        for i in order
    ]


def gather_channels(out, cell, index: int | None = None) -> dict[str, np.ndarray]:
    """The regression values of every group at one heatmap cell."""
    cu, cv = cell
    res = {}
    for name, t in out.groups.items():
        a = _as_array(t)
        if a.ndim == 4:
            a = a[0 if index is None else index]
        res[name] = a[:, cv, cu]
    return res


def decode_one(kp: KeypointEstimate, values: dict, K: CameraIntrinsics, template,
               category: str) -> Detection:
    du2d, dv2d, w, h = values["g1"]
    dH, dW, dL, ca, sa = values["g2"]
    du3d, dv3d = values["g3"]
    (d_enc,) = values["g4"]
    u2d, v2d = decode_center2d(kp, du2d, dv2d)
    H, W, L = decode_dimensions(template[category], dH, dW, dL)
    x, y, z = decode_location3d(kp, du3d, dv3d, d_enc, K)
    theta = decode_yaw(ca, sa, x, z)
    alpha = wrap_angle(math.atan2(sa, ca))
    return Detection(
        category, kp.score, Box2D(u2d, v2d, abs(w), abs(h)), Box3D(x, y, z, H, W, L, theta), alpha
    )


def decode_detections(out, kps, K: CameraIntrinsics, template: DimensionTemplate,
                      categories=CATEGORIES, index: int | None = None,
                      counter: dict | None = None) -> list[Detection]:
    """Decode every keypoint into a Detection.

    ``out`` is a NetworkOutput (batched outputs use frame ``index``). Degenerate
    decodes are dropped and tallied in ``counter["dropped"]`` when a dict is given.
    """
    dets = []
    for kp in kps:
        values = gather_channels(out, kp.cell, index)
        try:
            dets.append(decode_one(kp, values, K, template, categories[kp.category]))
        except DegenerateGeometryError:
            if counter is not None:
                counter["dropped"] = counter.get("dropped", 0) + 1
    return dets


def write_results(dets) -> str:
    """KITTI result format: the 15 label fields plus the score."""
    return write_label_file([d.to_label() for d in dets], with_score=True)


def read_results(text: str) -> list[Detection]:
    return [Detection.from_label(o) for o in parse_result_file(text)]
