"""Analysis statistics: 2D-3D consistency by depth and mean depth by image row."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ParameterError, ProjectionError
from ..geometry import CameraIntrinsics, remake_label_2d
from .iou import iou_2d

DEPTH_BUCKETS = ((0.0, 15.0), (15.0, 30.0), (30.0, 45.0))


def consistency_stat(dets, K: CameraIntrinsics, depth_buckets=DEPTH_BUCKETS) -> list:
    """Per depth bucket, the mean IoU between each detection's 2D box and its remade
    (projected 3D) box. Buckets are left-closed; empty buckets report ``None``.

    Returns ``[((lo, hi), mean_or_None, count), ...]``.
    """
    sums = [0.0] * len(depth_buckets)
    counts = [0] * len(depth_buckets)
    for d in dets:
        z = d.box3d.z
        for i, (lo, hi) in enumerate(depth_buckets):
            if lo <= z < hi:
                try:
                    remade = remake_label_2d(d.box3d, K)
                except ProjectionError:
                    value = 0.0
                else:
                    value = iou_2d(d.box2d, remade)
                sums[i] += value
                counts[i] += 1
                break
    return [
        (tuple(b), sums[i] / counts[i] if counts[i] else None, counts[i])
        for i, b in enumerate(depth_buckets)
    ]


def depth_row_stat(labels, row_bucket_px: int = 32) -> dict[int, float]:
    """Mean depth of objects grouped by the row of their 2D box center.

    Keys are bucket start rows (multiples of ``row_bucket_px``), sorted.
    ``labels`` are ObjectLabels or ``(v_center, depth)`` pairs.
    """
    if row_bucket_px < 1:
        raise ParameterError("row bucket must be at least 1 px")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for obj in labels:
        if hasattr(obj, "bbox"):
            if obj.category == "DontCare":
                continue
            v, depth = obj.box2d.v, obj.location[2]
        else:
            v, depth = obj
        key = int(math.floor(v / row_bucket_px)) * row_bucket_px
        sums[key] = sums.get(key, 0.0) + depth
        counts[key] = counts.get(key, 0) + 1
    return {k: sums[k] / counts[k] for k in sorted(sums)}


def is_monotone(values, decreasing: bool = True) -> bool:
    v = np.asarray(list(values), dtype=float)
    d = np.diff(v)
    return bool(np.all(d <= 0) if decreasing else np.all(d >= 0))
