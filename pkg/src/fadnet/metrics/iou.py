"""Axis-aligned, bird's-eye-view and 3D intersection over union."""

from __future__ import annotations

import numpy as np

from ..geometry import Box2D, Box3D, bev_corners, iou_ltrb


def iou_2d(a: Box2D, b: Box2D) -> float:
    return iou_ltrb(a.ltrb, b.ltrb)


def polygon_area(poly) -> float:
    """Shoelace area (absolute value) of a simple polygon given as (n, 2) points."""
    p = np.asarray(poly, dtype=float).reshape(-1, 2)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def clip_polygon(subject, clipper) -> np.ndarray:
    """Sutherland-Hodgman: part of ``subject`` inside convex, counter-clockwise ``clipper``."""
    output = [tuple(p) for p in np.asarray(subject, dtype=float)]
    clip = [tuple(p) for p in np.asarray(clipper, dtype=float)]
    for i in range(len(clip)):
        if not output:
            break
        a, b = clip[i], clip[(i + 1) % len(clip)]
        inputs, output = output, []
        prev = inputs[-1]
        prev_in = _cross(a, b, prev) >= 0
        for cur in inputs:
            cur_in = _cross(a, b, cur) >= 0
            if cur_in != prev_in:
                output.append(_intersect(prev, cur, a, b))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(output, dtype=float).reshape(-1, 2)


def _intersect(p, q, a, b):
    """Point where segment p-q crosses the infinite line a-b."""
    dp = _cross(a, b, p)
    dq = _cross(a, b, q)
    t = dp / (dp - dq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection(a: Box3D, b: Box3D) -> float:
    return polygon_area(clip_polygon(bev_corners(a), bev_corners(b)))


def iou_bev(a: Box3D, b: Box3D) -> float:
    area_a = a.W * a.L
    area_b = b.W * b.L
    if area_a <= 0 or area_b <= 0:
        return 0.0
    inter = bev_intersection(a, b)
    union = area_a + area_b - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


def vertical_overlap(a: Box3D, b: Box3D) -> float:
    top = max(a.y - a.H / 2.0, b.y - b.H / 2.0)
    bottom = min(a.y + a.H / 2.0, b.y + b.H / 2.0)
    return max(bottom - top, 0.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    if a.volume <= 0 or b.volume <= 0:
        return 0.0
    dy = vertical_overlap(a, b)
    if dy == 0.0:
        return 0.0
    inter = bev_intersection(a, b) * dy
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0
