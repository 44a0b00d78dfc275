"""Reproducible desk-scale scenes whose images make the label mapping learnable.

Each object paints its remade 2D box (drawn far to near, so near objects
occlude far ones) with a depth shade in channel 0 and its viewing-angle pair
in channels 1 and 2. A one-row marker of three pixels is stamped at the
projected centroid; it is negative in channel 0 and carries the object's
log-dimension offsets (relative to the default template) in all channels,
so shape is recoverable from pixels as well.
Objects are placed so that the projected row grows as depth shrinks, which
mimics a road scene seen from a car.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import GenerationError, ParameterError, ProjectionError
from ..geometry import Box3D, CameraIntrinsics, alpha_from_yaw, iou_ltrb, remake_label_2d
from .labels import KittiFrame, ObjectLabel, format_calib, parse_calib, parse_label_file, write_label_file
from .targets import DEFAULT_TEMPLATE


@dataclass(frozen=True)
class SyntheticConfig:
    height: int = 64
    width: int = 128
    categories: tuple[str, ...] = ("Car",)
    z_range: tuple[float, float] = (3.0, 60.0)
    dim_jitter: float = 0.2
    row_jitter: float = 0.04  # fraction of image height
    max_overlap: float = 0.3  # IoU ceiling between remade boxes of one frame
    max_retries: int = 200
    focal_scale: float = 1.0  # fx = fy = focal_scale * width

    def __post_init__(self):
        lo, hi = self.z_range
        if not 0 < lo < hi:
            raise ParameterError(f"bad depth range {self.z_range}")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        f = self.focal_scale * self.width
        return CameraIntrinsics(f, f, self.width / 2.0, self.height / 2.0)


@dataclass
class SyntheticScene:
    image_id: str
    intrinsics: CameraIntrinsics
    objects: list[ObjectLabel]
    image: np.ndarray = field(repr=False)

    @property
    def boxes3d(self) -> list[Box3D]:
        return [o.box3d for o in self.objects]

    def to_frame(self) -> KittiFrame:
        return KittiFrame(self.image_id, self.intrinsics, list(self.objects), self.image)


def nominal_row(z: float, height: int, z_min: float = 3.0) -> float:
    """Projected row of an object at depth z on the synthetic 'road'; decreasing in z."""
    return height * (0.25 + 0.7 * math.sqrt(z_min / z))


def depth_shade(z: float, z_range=(3.0, 60.0)) -> float:
    lo, hi = z_range
    return 1.0 - (z - lo) / (hi - lo)


def _sample_object(rng: np.random.Generator, cfg: SyntheticConfig, K: CameraIntrinsics):
    category = cfg.categories[rng.integers(len(cfg.categories))]
    tmpl = DEFAULT_TEMPLATE[category]
    dims = tmpl * rng.uniform(1.0 - cfg.dim_jitter, 1.0 + cfg.dim_jitter, size=3)
    z = rng.uniform(*cfg.z_range)
    v = nominal_row(z, cfg.height, cfg.z_range[0]) + rng.normal(0.0, cfg.row_jitter * cfg.height)
    u = rng.uniform(0.05 * cfg.width, 0.95 * cfg.width)
    theta = rng.uniform(-math.pi, math.pi)
    x, y, _ = K.backproject(u, v, z)
    return category, Box3D(x, y, z, dims[0], dims[1], dims[2], theta)


def _scene(rng, cfg: SyntheticConfig, image_id: str, n_objects: int) -> SyntheticScene:
    K = cfg.intrinsics
    objects: list[ObjectLabel] = []
    for _ in range(n_objects):
        for _attempt in range(cfg.max_retries):
            category, box = _sample_object(rng, cfg, K)
            u, v = K.project(box.center)
            if not (0 <= u < cfg.width and 0 <= v < cfg.height):
                continue
            try:
                box2d = remake_label_2d(box, K)
            except ProjectionError:
                continue
            cell = (int(u // 4), int(v // 4))
            if any(iou_ltrb(box2d.ltrb, o.bbox) > cfg.max_overlap for o in objects):
                continue
            # neighboring cells would suppress each other as heatmap peaks
            if any(max(abs(a - b) for a, b in zip(_cell(o, K), cell)) <= 1 for o in objects):
                continue
            objects.append(ObjectLabel.from_boxes(category, box, box2d))
            break
        else:
            raise GenerationError(
                f"could not place object {len(objects) + 1} of {n_objects} in {image_id} "
                f"after {cfg.max_retries} attempts"
            )
    return SyntheticScene(image_id, K, objects, render(objects, K, cfg))


def _cell(obj: ObjectLabel, K: CameraIntrinsics) -> tuple[int, int]:
    u, v = K.project(obj.box3d.center)
    return int(u // 4), int(v // 4)


def render(objects, K: CameraIntrinsics, cfg: SyntheticConfig) -> np.ndarray:
    image = np.zeros((3, cfg.height, cfg.width))
    for obj in sorted(objects, key=lambda o: -o.location[2]):
        box = obj.box3d
        left, top, right, bottom = obj.bbox
        c0, c1 = max(int(math.floor(left)), 0), min(int(math.ceil(right)), cfg.width)
        r0, r1 = max(int(math.floor(top)), 0), min(int(math.ceil(bottom)), cfg.height)
        a = alpha_from_yaw(box.theta, box.x, box.z)
        image[0, r0:r1, c0:c1] = 0.2 + 0.8 * depth_shade(box.z, cfg.z_range)
        image[1, r0:r1, c0:c1] = math.cos(a)
        image[2, r0:r1, c0:c1] = math.sin(a)
        u, v = K.project(box.center)
        iu, iv = int(u), int(v)
        code = dimension_code(obj)
        cols = slice(max(iu - 1, 0), iu + 2)
        image[0, iv, cols] = -1.0 - 0.5 * code[2]
        image[1, iv, cols] = code[0]
        image[2, iv, cols] = code[1]
    return image


def dimension_code(obj: ObjectLabel) -> np.ndarray:
    """(H, W, L) log-ratios to the default template, scaled to roughly [-1, 1]."""
    tmpl = DEFAULT_TEMPLATE[obj.category] if obj.category in DEFAULT_TEMPLATE else obj.dimensions
    return np.log(np.asarray(obj.dimensions) / np.asarray(tmpl)) / 0.2


def standardize(image: np.ndarray, mean=None, std=None) -> np.ndarray:
    """Zero-mean, unit-variance per channel (statistics of ``image`` unless given)."""
    image = np.asarray(image, dtype=float)
    if mean is None:
        mean = image.mean(axis=(1, 2))
    if std is None:
        std = image.std(axis=(1, 2))
    std = np.where(np.asarray(std) > 0, std, 1.0)
    return (image - np.asarray(mean)[:, None, None]) / np.asarray(std)[:, None, None]


def channel_stats(images) -> tuple[np.ndarray, np.ndarray]:
    stack = np.stack(list(images))
    return stack.mean(axis=(0, 2, 3)), stack.std(axis=(0, 2, 3))


def generate_synthetic(seed: int, n_frames: int, objects_per_frame: int = 3,
                       cfg: SyntheticConfig = SyntheticConfig()) -> list[SyntheticScene]:
    if n_frames < 1:
        raise ParameterError("n_frames must be >= 1")
    if objects_per_frame < 0:
        raise ParameterError("objects_per_frame must be >= 0")
    rng = np.random.default_rng(seed)
    return [_scene(rng, cfg, f"{i:06d}", objects_per_frame) for i in range(n_frames)]


def write_scenes(scenes, root) -> None:
    """KITTI-like layout: label_2/, calib/, image_2/ (.npy arrays)."""
    root = Path(root)
    for sub in ("label_2", "calib", "image_2"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in scenes:
        (root / "label_2" / f"{s.image_id}.txt").write_text(write_label_file(s.objects, False))
        (root / "calib" / f"{s.image_id}.txt").write_text(format_calib(s.intrinsics))
        np.save(root / "image_2" / f"{s.image_id}.npy", s.image)


def read_frames(root, ids=None, with_images: bool = True) -> list[KittiFrame]:
    root = Path(root)
    if ids is None:
        ids = sorted(p.stem for p in (root / "label_2").glob("*.txt"))
    frames = []
    for i in ids:
        objects = parse_label_file((root / "label_2" / f"{i}.txt").read_text())
        K = parse_calib((root / "calib" / f"{i}.txt").read_text())
        image = None
        npy = root / "image_2" / f"{i}.npy"
        if with_images and npy.exists():
            image = np.load(npy)
        frames.append(KittiFrame(i, K, objects, image))
    return frames
