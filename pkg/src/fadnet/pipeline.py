"""Glue shared by the command line and the end-to-end checks: desk-scale configs,
dataset preparation, inference and per-object error summaries."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .decode import Detection, decode_detections, extract_keypoints
from .errors import ParameterError
from .geometry import DimensionTemplate
from .kitti.labels import KittiFrame
from .kitti.synthetic import SyntheticConfig, channel_stats, generate_synthetic, standardize
from .kitti.targets import TargetConfig, dimension_templates
from .metrics.iou import iou_3d
from .model import FADNet, ModelConfig, parse_config_values, parse_key_values
from .train import Sample, StageSchedule, TrainConfig, TrainResult, make_samples, train

# Reduced widths and input size used for CPU runs; the paper-scale values stay
# the ModelConfig defaults.
DESK_MODEL = dict(
    height=64, width=64, backbone_width=32, feature_channels=16, kp_head_channels=32,
    reg_head_channels=32,
)


@dataclass(frozen=True)
class RunConfig:
    """Settings of a training run; read from a flat key=value file."""

    variant: str = "full"
    frames: int = 8
    objects: int = 3
    seed: int = 0
    repeats: int = 200
    batch_size: int = 2
    epoch_scale: float = 1.0
    time_budget: float = 0.0  # seconds, 0 = unlimited
    hint_source: str = "box2d"
    max_depth: float = 45.0  # synthetic scenes stay inside the consistency buckets
    height: int = DESK_MODEL["height"]
    width: int = DESK_MODEL["width"]
    backbone_width: int = DESK_MODEL["backbone_width"]
    feature_channels: int = DESK_MODEL["feature_channels"]
    kp_head_channels: int = DESK_MODEL["kp_head_channels"]
    reg_head_channels: int = DESK_MODEL["reg_head_channels"]

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        raw = parse_key_values(text)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ParameterError(f"unknown config keys {unknown}")
        return cls(**parse_config_values(text, cls))

    def model_config(self, categories: int) -> ModelConfig:
        return ModelConfig.variant(
            self.variant,
            categories=categories,
            height=self.height,
            width=self.width,
            backbone_width=self.backbone_width,
            feature_channels=self.feature_channels,
            kp_head_channels=self.kp_head_channels,
            reg_head_channels=self.reg_head_channels,
        )

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(height=self.height, width=self.width, z_range=(3.0, self.max_depth))

    def schedule(self) -> StageSchedule:
        sched = StageSchedule.desk()
        return sched if self.epoch_scale == 1.0 else sched.scaled(self.epoch_scale)

    def train_config(self, **kw) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, seed=self.seed, repeats=self.repeats,
            time_budget=self.time_budget or None, **kw,
        )


@dataclass
class DataInfo:
    """What inference needs besides the weights."""

    categories: tuple[str, ...]
    template: DimensionTemplate
    mean: np.ndarray
    std: np.ndarray
    hint_source: str = "box2d"

    def to_text(self) -> str:
        lines = [f"categories={','.join(self.categories)}", f"hint_source={self.hint_source}"]
        lines += [f"mean={','.join(repr(float(v)) for v in self.mean)}"]
        lines += [f"std={','.join(repr(float(v)) for v in self.std)}"]
        for c in self.template.categories:
            lines.append(f"template.{c}={','.join(repr(float(v)) for v in self.template[c])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DataInfo":
        raw = parse_key_values(text)

        def floats(s):
            return np.array([float(v) for v in s.split(",")])

        means = {k[len("template."):]: tuple(floats(v)) for k, v in raw.items() if k.startswith("template.")}
        return cls(
            tuple(raw["categories"].split(",")),
            DimensionTemplate(means),
            floats(raw["mean"]),
            floats(raw["std"]),
            raw.get("hint_source", "box2d"),
        )

    def save(self, directory) -> None:
        Path(directory, "data.cfg").write_text(self.to_text())

    @classmethod
    def load(cls, directory) -> "DataInfo":
        return cls.from_text(Path(directory, "data.cfg").read_text())


def synthetic_frames(run: RunConfig, seed: int | None = None, n_frames: int | None = None) -> list[KittiFrame]:
    scenes = generate_synthetic(
        run.seed if seed is None else seed,
        run.frames if n_frames is None else n_frames,
        run.objects,
        run.synthetic_config(),
    )
    return [s.to_frame() for s in scenes]


def prepare(frames, categories=("Car",), hint_source: str = "box2d",
            info: DataInfo | None = None) -> tuple[list[Sample], DataInfo]:
    """Training samples plus the template and image statistics they were built with."""
    frames = list(frames)
    if info is None:
        template = dimension_templates(frames, categories)
        mean, std = channel_stats(f.image for f in frames)
        info = DataInfo(tuple(categories), template, mean, std, hint_source)
    h, w = frames[0].image.shape[-2:]
    tcfg = TargetConfig(h, w, info.categories, hint_source=info.hint_source)
    return make_samples(frames, info.template, tcfg, (info.mean, info.std)), info


def fit(run: RunConfig, frames, checkpoint_dir=None, log_path=None, model_seed: int | None = None,
        resume: bool = False) -> tuple[TrainResult, DataInfo]:
    samples, info = prepare(frames, hint_source=run.hint_source)
    model = FADNet(run.model_config(len(info.categories)), seed=run.seed if model_seed is None else model_seed)
    cfg = run.train_config(
        checkpoint_dir=str(checkpoint_dir) if checkpoint_dir else None,
        log_path=str(log_path) if log_path else None,
    )
    if checkpoint_dir:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        info.save(checkpoint_dir)
    return train(model, samples, run.schedule(), cfg, resume=resume), info


def predict(model: FADNet, frames, info: DataInfo, threshold: float = 0.25,
            topk: int = 100) -> list[list[Detection]]:
    out_all = []
    for f in frames:
        image = Tensor(standardize(f.image, info.mean, info.std)[None])
        out = model.predict(image)
        kps = extract_keypoints(out.heatmap.data[0], threshold, topk)
        out_all.append(
            decode_detections(out, kps, f.intrinsics, info.template, info.categories, index=0)
        )
    return out_all


@dataclass
class ObjectError:
    center_px: float  # projected-centroid distance of the best detection
    depth_m: float
    iou3d: float
    matched: bool


def object_errors(dets_per_image, frames, max_center_px: float = 8.0) -> list[ObjectError]:
    """For every labeled object, the detection whose projected centroid is nearest."""
    errors = []
    for dets, frame in zip(dets_per_image, frames, strict=True):
        K = frame.intrinsics
        for obj in frame.objects:
            if obj.is_dontcare:
                continue
            gt = obj.box3d
            gu, gv = K.project(gt.center)
            best, best_d = None, np.inf
            for d in dets:
                if d.category != obj.category:
                    continue
                du, dv = K.project(d.box3d.center)
                dist = float(np.hypot(du - gu, dv - gv))
                if dist < best_d:
                    best, best_d = d, dist
            if best is None or best_d > max_center_px:
                errors.append(ObjectError(np.inf, np.inf, 0.0, False))
            else:
                errors.append(
                    ObjectError(best_d, abs(best.box3d.z - gt.z), iou_3d(best.box3d, gt), True)
                )
    return errors


def mean_depth_error(errors, unmatched_penalty: float | None = None) -> float:
    vals = [e.depth_m for e in errors if e.matched]
    if unmatched_penalty is not None:
        vals += [unmatched_penalty for e in errors if not e.matched]
    return float(np.mean(vals)) if vals else float("inf")
