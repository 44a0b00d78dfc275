"""Greedy matching, interpolated average precision and orientation similarity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from ..geometry import Box2D
from ..kitti.labels import DONTCARE, ObjectLabel
from .iou import iou_2d, iou_3d, iou_bev

DIFFICULTIES = ("easy", "moderate", "hard")
MIN_HEIGHT = (40.0, 25.0, 25.0)
MAX_OCCLUSION = (0, 1, 2)
MAX_TRUNCATION = (0.15, 0.30, 0.50)
IGNORED = "ignored"
# objects of these classes neither count nor penalize when evaluating the key class
NEIGHBOR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}
RECALL_TOL = 1e-12


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.7
    metric: str = "3d"  # 2d | bev | 3d | aos
    interpolation: str = "r40"  # r11 | r40
    difficulty: str = "moderate"
    category: str = "Car"

    def __post_init__(self):
        if not 0 < self.iou_threshold < 1:
            raise ParameterError(f"IoU threshold must lie in (0, 1), got {self.iou_threshold}")
        if self.metric not in ("2d", "bev", "3d", "aos"):
            raise ParameterError(f"unknown metric {self.metric!r}")
        if self.interpolation not in ("r11", "r40"):
            raise ParameterError(f"unknown interpolation {self.interpolation!r}")
        if self.difficulty not in DIFFICULTIES:
            raise ParameterError(f"unknown difficulty {self.difficulty!r}")

    @property
    def level(self) -> int:
        return DIFFICULTIES.index(self.difficulty)


def recall_points(interpolation: str) -> np.ndarray:
    if interpolation == "r11":
        return np.linspace(0.0, 1.0, 11)
    if interpolation == "r40":
        return np.arange(1, 41) / 40.0
    raise ParameterError(f"unknown interpolation {interpolation!r}")


def difficulty_filter(label: ObjectLabel, remade2d: Box2D | None = None) -> str:
    """Easiest KITTI level the object qualifies for, or ``"ignored"``.

    As in the devkit, a box exactly at the minimum height does not qualify.
    The height comes from ``remade2d`` when given, else from the label box.
    """
    height = remade2d.h if remade2d is not None else label.height_px
    for level, name in enumerate(DIFFICULTIES):
        if (
            height > MIN_HEIGHT[level]
            and label.occlusion <= MAX_OCCLUSION[level]
            and label.truncation <= MAX_TRUNCATION[level]
        ):
            return name
    return IGNORED


def _overlap(metric: str, det, gt) -> float:
    if metric in ("2d", "aos"):
        return iou_2d(det.box2d, gt.box2d)
    if metric == "bev":
        return iou_bev(det.box3d, gt.box3d)
    return iou_3d(det.box3d, gt.box3d)


def _dontcare_overlap(det, region: Box2D) -> float:
    """Intersection over the detection's own area."""
    l1, t1, r1, b1 = det.box2d.ltrb
    l2, t2, r2, b2 = region.ltrb
    inter = max(min(r1, r2) - max(l1, l2), 0.0) * max(min(b1, b2) - max(t1, t2), 0.0)
    area = det.box2d.area
    return inter / area if area > 0 else 0.0


@dataclass
class MatchedDetection:
    score: float
    status: str  # "tp", "fp" or "ignore"
    similarity: float = 0.0  # orientation similarity when tp


def match_image(dets, gts, cfg: EvalConfig) -> tuple[list[MatchedDetection], int]:
    """Greedy matching on one image; returns per-detection outcomes and the valid-gt count.

    Detections in descending score (stable for ties) claim the unmatched gt of
    highest overlap >= threshold, preferring counted gts over ignored ones. A
    detection matched to an ignored gt, one inside a DontCare region, or one
    lower than the difficulty's minimum height counts as neither TP nor FP.
    """
    level = cfg.level
    counted, ignored, regions = [], [], []
    for g in gts:
        if g.category == DONTCARE:
            regions.append(g.box2d)
        elif g.category == cfg.category:
            lvl = difficulty_filter(g)
            if lvl != IGNORED and DIFFICULTIES.index(lvl) <= level:
                counted.append(g)
            else:
                ignored.append(g)
        elif g.category in NEIGHBOR_CLASSES.get(cfg.category, ()):
            ignored.append(g)
    candidates = counted + ignored
    n_counted = len(counted)
    used = [False] * len(candidates)
    mine = [d for d in dets if d.category == cfg.category]
    order = sorted(range(len(mine)), key=lambda i: -mine[i].score)
    out = []
    for i in order:
        d = mine[i]
        best, best_iou, best_counted = -1, -1.0, False
        for j, g in enumerate(candidates):
            if used[j]:
                continue
            ov = _overlap(cfg.metric, d, g)
            if ov < cfg.iou_threshold:
                continue
            is_counted = j < n_counted
            if (is_counted, ov) > (best_counted, best_iou):
                best, best_iou, best_counted = j, ov, is_counted
        if best >= 0:
            used[best] = True
            if best_counted:
                sim = (1.0 + math.cos(candidates[best].alpha - d.alpha)) / 2.0
                out.append(MatchedDetection(d.score, "tp", sim))
            else:
                out.append(MatchedDetection(d.score, "ignore"))
        elif d.box2d.h <= MIN_HEIGHT[level]:
            out.append(MatchedDetection(d.score, "ignore"))
        elif any(_dontcare_overlap(d, r) > cfg.iou_threshold for r in regions):
            out.append(MatchedDetection(d.score, "ignore"))
        else:
            out.append(MatchedDetection(d.score, "fp"))
    return out, n_counted


def pr_curve(dets_per_image, gts_per_image, cfg: EvalConfig):
    """(recall, precision, similarity-precision) arrays, one point per distinct score."""
    matched: list[MatchedDetection] = []
    n_gt = 0
    for dets, gts in zip(dets_per_image, gts_per_image, strict=True):
        m, n = match_image(dets, gts, cfg)
        matched += m
        n_gt += n
    kept = sorted((m for m in matched if m.status != "ignore"), key=lambda m: -m.score)
    if n_gt == 0 or not kept:
        return np.zeros(0), np.zeros(0), np.zeros(0), n_gt
    scores = np.array([m.score for m in kept])
    tp = np.cumsum([m.status == "tp" for m in kept])
    n = np.arange(1, len(kept) + 1)
    # evaluate at the end of each group of tied scores
    ends = np.nonzero(np.append(scores[1:] != scores[:-1], True))[0]
    sim = _exact_prefix_sums([m.similarity if m.status == "tp" else 0.0 for m in kept], ends)
    return tp[ends] / n_gt, tp[ends] / n[ends], sim / n[ends], n_gt


def _exact_prefix_sums(values, ends) -> np.ndarray:
    """Correctly rounded prefix sums at ``ends``, so AOS does not depend on image order.

    Keeps Shewchuk's non-overlapping partials (the algorithm behind math.fsum).
    """
    partials: list[float] = []
    out = []
    want = iter(ends)
    nxt = next(want, None)
    for i, x in enumerate(values):
        j = 0
        for y in partials:
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo:
                partials[j] = lo
                j += 1
            x = hi
        partials[j:] = [x]
        if i == nxt:
            out.append(math.fsum(partials))
            nxt = next(want, None)
    return np.array(out)


def interpolated_mean(recall, precision, points) -> float:
    """Mean over recall points r of max precision among curve points with recall >= r."""
    if len(recall) == 0:
        return 0.0
    total = 0.0
    for r in points:
        ok = recall >= r - RECALL_TOL
        total += float(precision[ok].max()) if ok.any() else 0.0
    return total / len(points)


def average_precision(dets_per_image, gts_per_image, cfg: EvalConfig = EvalConfig()) -> float:
    recall, precision, _, n_gt = pr_curve(dets_per_image, gts_per_image, cfg)
    if n_gt == 0:
        return float("nan")
    return interpolated_mean(recall, precision, recall_points(cfg.interpolation))


def aos(dets_per_image, gts_per_image, cfg: EvalConfig = EvalConfig(metric="aos")) -> float:
    """Average orientation similarity; matching uses ``cfg.metric`` overlaps (2D for "aos")."""
    recall, _, sim_precision, n_gt = pr_curve(dets_per_image, gts_per_image, cfg)
    if n_gt == 0:
        return float("nan")
    return interpolated_mean(recall, sim_precision, recall_points(cfg.interpolation))
