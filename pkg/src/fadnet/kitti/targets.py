"""Training targets: keypoint heatmaps, per-object group encodings, depth-hint bins."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ProjectionError, TemplateError
from ..geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    DimensionTemplate,
    alpha_from_yaw,
    encode_depth,
    encode_dimensions,
    remake_label_2d,
)
from .labels import CATEGORIES, KittiFrame

# CenterNet's per-category means (meters), used when no training data is at hand.
DEFAULT_TEMPLATE = DimensionTemplate(
    {
        "Car": (1.52, 1.63, 3.88),
        "Pedestrian": (1.73, 0.67, 0.88),
        "Cyclist": (1.76, 0.60, 1.76),
    }
)


@dataclass(frozen=True)
class TargetConfig:
    height: int = 384
    width: int = 1280
    categories: tuple[str, ...] = CATEGORIES
    stride: int = 4
    hint_stride: int = 32
    min_overlap: float = 0.7
    # which vertical coordinate picks an object's hint bin: "box2d" or "centroid"
    hint_source: str = "box2d"

    def __post_init__(self):
        if self.height % self.hint_stride or self.width % self.hint_stride:
            raise ParameterError("input size must be divisible by the hint stride")
        if self.hint_source not in ("box2d", "centroid"):
            raise ParameterError(f"unknown hint_source {self.hint_source!r}")

    @property
    def output_shape(self) -> tuple[int, int]:
        return self.height // self.stride, self.width // self.stride

    @property
    def hint_bins(self) -> int:
        return self.height // self.hint_stride


@dataclass
class TrainingTargets:
    heatmap: np.ndarray  # C x H/4 x W/4
    cells: np.ndarray  # M x 2 integer (cu, cv)
    categories: np.ndarray  # M category indices
    g1: np.ndarray  # M x 4: du2d, dv2d, w, h
    g2: np.ndarray  # M x 5: dH, dW, dL, cos a, sin a
    g3: np.ndarray  # M x 2: du3d, dv3d
    g4: np.ndarray  # M x 1: -ln z
    depth: np.ndarray  # M
    templates: np.ndarray  # M x 3
    intrinsics: CameraIntrinsics
    hint: np.ndarray  # H/32, meters (0 where masked)
    hint_mask: np.ndarray  # H/32 in {0, 1}
    boxes2d: list[Box2D] = field(default_factory=list)
    boxes3d: list[Box3D] = field(default_factory=list)
    n_excluded: int = 0

    @property
    def n_objects(self) -> int:
        return len(self.depth)

    @property
    def keypoints(self) -> np.ndarray:
        """Keypoint pixel coordinates (u3dK, v3dK) = 4 * cell."""
        return 4.0 * self.cells


def gaussian_radius(height: float, width: float, min_overlap: float = 0.7) -> float:
    """Largest corner shift keeping IoU >= min_overlap (CornerNet's three cases)."""
    a1 = 1.0
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1**2 - 4 * a1 * c1)) / 2

    a2 = 4.0
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2**2 - 4 * a2 * c2)) / 2

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3**2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def draw_gaussian(heatmap: np.ndarray, center: tuple[int, int], radius: int) -> np.ndarray:
    """Splat an unnormalized gaussian (peak 1) at integer ``center`` by elementwise max.

    sigma = (2r + 1) / 6, so even r = 0 gives a valid single-cell peak.
    """
    radius = max(int(radius), 0)
    sigma = (2 * radius + 1) / 6.0
    ys, xs = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    g = np.exp(-(xs * xs + ys * ys) / (2 * sigma * sigma))
    cu, cv = center
    h, w = heatmap.shape
    left, right = min(cu, radius), min(w - cu, radius + 1)
    top, bottom = min(cv, radius), min(h - cv, radius + 1)
    if left + right <= 0 or top + bottom <= 0:
        return heatmap
    region = heatmap[cv - top : cv + bottom, cu - left : cu + right]
    patch = g[radius - top : radius + bottom, radius - left : radius + right]
    np.maximum(region, patch, out=region)
    return heatmap


def hint_bin_index(v, height: int, stride: int = 32) -> np.ndarray:
    """floor(v / stride), clipped into [0, height/stride - 1]; v == height lands in the last bin."""
    idx = np.floor(np.asarray(v, dtype=float) / stride).astype(int)
    return np.clip(idx, 0, height // stride - 1)


def hint_targets(v_centers, depths, height: int, stride: int = 32):
    """Per-bin mean depth and the nonempty-bin mask."""
    n_bins = height // stride
    hint = np.zeros(n_bins)
    mask = np.zeros(n_bins)
    v_centers = np.asarray(v_centers, dtype=float)
    if v_centers.size == 0:
        return hint, mask
    idx = hint_bin_index(v_centers, height, stride)
    sums = np.bincount(idx, weights=np.asarray(depths, dtype=float), minlength=n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    mask = (counts > 0).astype(float)
    hint[counts > 0] = sums[counts > 0] / counts[counts > 0]
    return hint, mask


def build_targets(frame: KittiFrame, template: DimensionTemplate = DEFAULT_TEMPLATE,
                  cfg: TargetConfig = TargetConfig()) -> TrainingTargets:
    """Encode one frame's labels into heatmap, group and hint targets.

    Objects are skipped (and counted in ``n_excluded``) when their centroid is
    behind the camera, projects outside the image, or has a corner behind the
    camera. DontCare rows and categories outside ``cfg.categories`` are dropped
    silently.
    """
    K = frame.intrinsics
    ho, wo = cfg.output_shape
    heatmap = np.zeros((len(cfg.categories), ho, wo))
    rows = []
    excluded = 0
    for obj in frame.objects:
        if obj.is_dontcare or obj.category not in cfg.categories:
            continue
        if obj.category not in template:
            raise TemplateError(f"no dimension template for category {obj.category!r}")
        box3d = obj.box3d
        if box3d.z <= 0:
            excluded += 1
            continue
        u3d, v3d = K.project(box3d.center)
        if not (0 <= u3d < cfg.width and 0 <= v3d < cfg.height):
            excluded += 1
            continue
        try:
            box2d = remake_label_2d(box3d, K)
        except ProjectionError:
            warnings.warn(f"{frame.image_id}: object with a corner behind the camera skipped")
            excluded += 1
            continue
        cu, cv = int(u3d // cfg.stride), int(v3d // cfg.stride)
        ku, kv = cfg.stride * cu, cfg.stride * cv
        tmpl = template[obj.category]
        a = alpha_from_yaw(box3d.theta, box3d.x, box3d.z)
        cat = cfg.categories.index(obj.category)
        radius = gaussian_radius(box2d.h / cfg.stride, box2d.w / cfg.stride, cfg.min_overlap)
        draw_gaussian(heatmap[cat], (cu, cv), int(max(0.0, radius)))
        rows.append(
            dict(
                cell=(cu, cv),
                cat=cat,
                g1=(box2d.u - ku, box2d.v - kv, box2d.w, box2d.h),
                g2=encode_dimensions(tmpl, box3d.H, box3d.W, box3d.L) + (math.cos(a), math.sin(a)),
                g3=(u3d - ku, v3d - kv),
                g4=(encode_depth(box3d.z),),
                depth=box3d.z,
                tmpl=tuple(tmpl),
                box2d=box2d,
                box3d=box3d,
                v_hint=box2d.v if cfg.hint_source == "box2d" else v3d,
            )
        )

    def col(key, width):
        return np.array([r[key] for r in rows], dtype=float).reshape(len(rows), width)

    hint, mask = hint_targets(
        [r["v_hint"] for r in rows], [r["depth"] for r in rows], cfg.height, cfg.hint_stride
    )
    return TrainingTargets(
        heatmap=heatmap,
        cells=np.array([r["cell"] for r in rows], dtype=int).reshape(len(rows), 2),
        categories=np.array([r["cat"] for r in rows], dtype=int),
        g1=col("g1", 4),
        g2=col("g2", 5),
        g3=col("g3", 2),
        g4=col("g4", 1),
        depth=np.array([r["depth"] for r in rows], dtype=float),
        templates=col("tmpl", 3),
        intrinsics=K,
        hint=hint,
        hint_mask=mask,
        boxes2d=[r["box2d"] for r in rows],
        boxes3d=[r["box3d"] for r in rows],
        n_excluded=excluded,
    )


@dataclass
class TargetBatch:
    """Targets of several frames, with per-object arrays concatenated."""

    heatmap: np.ndarray  # N x C x h x w
    batch_index: np.ndarray  # M
    cells: np.ndarray  # M x 2
    categories: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    g4: np.ndarray
    depth: np.ndarray
    templates: np.ndarray
    intrinsics: np.ndarray  # M x 4: fx, fy, u0, v0
    hint: np.ndarray  # N x h32
    hint_mask: np.ndarray  # N x h32

    @property
    def n_objects(self) -> int:
        return len(self.depth)

    @property
    def keypoints(self) -> np.ndarray:
        return 4.0 * self.cells


def collate(targets: list[TrainingTargets]) -> TargetBatch:
    def cat(key, width):
        parts = [getattr(t, key).reshape(t.n_objects, width) for t in targets]
        return np.concatenate(parts, axis=0)

    intr = [
        np.tile([t.intrinsics.fx, t.intrinsics.fy, t.intrinsics.u0, t.intrinsics.v0], (t.n_objects, 1))
        for t in targets
    ]
    return TargetBatch(
        heatmap=np.stack([t.heatmap for t in targets]),
        batch_index=np.concatenate([np.full(t.n_objects, i, dtype=int) for i, t in enumerate(targets)]),
        cells=cat("cells", 2).astype(int),
        categories=np.concatenate([t.categories for t in targets]).astype(int),
        g1=cat("g1", 4),
        g2=cat("g2", 5),
        g3=cat("g3", 2),
        g4=cat("g4", 1),
        depth=np.concatenate([t.depth for t in targets]),
        templates=cat("templates", 3),
        intrinsics=np.concatenate(intr, axis=0).reshape(-1, 4),
        hint=np.stack([t.hint for t in targets]),
        hint_mask=np.stack([t.hint_mask for t in targets]),
    )


def dimension_templates(frames, categories=None) -> DimensionTemplate:
    """Per-category mean (H, W, L) over all labeled objects of ``frames``."""
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for frame in frames:
        for obj in frame.objects:
            if obj.is_dontcare:
                continue
            sums[obj.category] = sums.get(obj.category, np.zeros(3)) + np.array(obj.dimensions)
            counts[obj.category] = counts.get(obj.category, 0) + 1
    wanted = list(categories) if categories is not None else sorted(sums)
    missing = [c for c in wanted if counts.get(c, 0) == 0]
    if missing or not wanted:
        raise TemplateError(f"no labeled objects for categories {missing or wanted}")
    return DimensionTemplate({c: tuple(sums[c] / counts[c]) for c in wanted})
