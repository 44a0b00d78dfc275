"""KITTI-style evaluation and analysis statistics."""

from .ap import (
    DIFFICULTIES,
    IGNORED,
    EvalConfig,
    aos,
    average_precision,
    difficulty_filter,
    interpolated_mean,
    match_image,
    pr_curve,
    recall_points,
)
from .iou import bev_intersection, clip_polygon, iou_2d, iou_3d, iou_bev, polygon_area
from .report import evaluate, to_csv
from .stats import DEPTH_BUCKETS, consistency_stat, depth_row_stat, is_monotone
