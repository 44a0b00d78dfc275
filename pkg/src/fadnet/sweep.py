"""Gradient-check sweep over every primitive, every loss and the full model."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import GradcheckReport, Tensor, gradcheck
from .kitti.synthetic import SyntheticConfig, generate_synthetic, standardize
from .kitti.targets import DEFAULT_TEMPLATE, TargetConfig, build_targets, collate
from .losses import (
    LossConfig,
    compute_losses,
    depth_hint_loss,
    disentangled_reg2d,
    disentangled_reg3d,
    keypoint_loss,
)
from .model import FADNet, ModelConfig

Case = tuple[str, Callable, list]


def _t(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape))


def _weighted(out: Tensor, seed: int = 99) -> Tensor:
    """Reduce to a scalar with fixed random weights so every output entry matters."""
    w = np.random.default_rng(seed).uniform(0.5, 1.5, size=out.shape)
    return ad.tsum(out * w)


def primitive_cases(seed: int = 0) -> list[Case]:
    rng = np.random.default_rng(seed)
    pos = lambda *s: _t(rng, *s, lo=0.5, hi=2.0)  # noqa: E731
    adv = (np.array([0, 2, 2]), np.array([1, 0, 1]))
    cases: list[Case] = [
        ("add", lambda x: _weighted(x[0] + x[1]), [_t(rng, 3, 4), _t(rng, 4)]),
        ("sub", lambda x: _weighted(x[0] - x[1]), [_t(rng, 3, 4), _t(rng, 3, 1)]),
        ("mul", lambda x: _weighted(x[0] * x[1]), [_t(rng, 3, 4), _t(rng, 3, 4)]),
        ("div", lambda x: _weighted(x[0] / x[1]), [_t(rng, 3, 4), pos(3, 4)]),
        ("neg", lambda x: _weighted(-x[0]), [_t(rng, 5)]),
        ("power", lambda x: _weighted(x[0] ** 2.5), [pos(4, 3)]),
        ("exp", lambda x: _weighted(ad.exp(x[0])), [_t(rng, 4, 3)]),
        ("log", lambda x: _weighted(ad.log(x[0])), [pos(4, 3)]),
        ("abs", lambda x: _weighted(ad.tabs(x[0])), [pos(4, 3) * np.sign(rng.uniform(-1, 1, (4, 3)))]),
        ("sqrt", lambda x: _weighted(ad.sqrt(x[0])), [pos(6)]),
        ("sin", lambda x: _weighted(ad.sin(x[0])), [_t(rng, 6)]),
        ("cos", lambda x: _weighted(ad.cos(x[0])), [_t(rng, 6)]),
        ("atan2", lambda x: _weighted(ad.atan2(x[0], x[1])), [_t(rng, 6), pos(6)]),
        ("sigmoid", lambda x: _weighted(ad.sigmoid(x[0])), [_t(rng, 2, 5, lo=-4, hi=4)]),
        ("tanh", lambda x: _weighted(ad.tanh(x[0])), [_t(rng, 2, 5, lo=-2, hi=2)]),
        ("relu", lambda x: _weighted(ad.relu(x[0])), [pos(2, 5) * np.sign(rng.uniform(-1, 1, (2, 5)))]),
        ("clip", lambda x: _weighted(ad.clip(x[0], -0.5, 0.5)), [_t(rng, 8, lo=-0.45, hi=0.45)]),
        ("sum", lambda x: _weighted(ad.tsum(x[0], axis=1)), [_t(rng, 3, 4, 2)]),
        ("mean", lambda x: _weighted(ad.mean(x[0], axis=(0, 2))), [_t(rng, 3, 4, 2)]),
        ("reshape", lambda x: _weighted(x[0].reshape(6, 4)), [_t(rng, 2, 3, 4)]),
        ("transpose", lambda x: _weighted(x[0].transpose(2, 0, 1)), [_t(rng, 2, 3, 4)]),
        ("broadcast_to", lambda x: _weighted(ad.broadcast_to(x[0], (3, 4, 5))), [_t(rng, 4, 1)]),
        ("getitem_basic", lambda x: _weighted(x[0][1:, ::2]), [_t(rng, 3, 5)]),
        ("getitem_advanced", lambda x: _weighted(ad.getitem(x[0], adv)), [_t(rng, 3, 2)]),
        ("concat", lambda x: _weighted(ad.concat([x[0], x[1]], axis=1)), [_t(rng, 2, 3), _t(rng, 2, 2)]),
        ("stack", lambda x: _weighted(ad.stack([x[0], x[1]], axis=-1)), [_t(rng, 2, 3), _t(rng, 2, 3)]),
        (
            "conv2d",
            lambda x: _weighted(ad.conv2d(x[0], x[1], x[2], stride=1, padding=1)),
            [_t(rng, 2, 3, 5, 5), _t(rng, 4, 3, 3, 3), _t(rng, 4)],
        ),
        (
            "conv2d_strided",
            lambda x: _weighted(ad.conv2d(x[0], x[1], x[2], stride=2, padding=(0, 1))),
            [_t(rng, 1, 2, 6, 6), _t(rng, 3, 2, 3, 3), _t(rng, 3)],
        ),
        (
            "conv2d_1x1_unbatched",
            lambda x: _weighted(ad.conv2d(x[0], x[1], x[2])),
            [_t(rng, 3, 4, 4), _t(rng, 2, 3, 1, 1), _t(rng, 2)],
        ),
        (
            "conv_transpose2d",
            lambda x: _weighted(ad.conv_transpose2d(x[0], x[1], x[2], factor=2)),
            [_t(rng, 1, 2, 3, 3), _t(rng, 2, 3, 2, 2), _t(rng, 3)],
        ),
        ("upsample_bilinear", lambda x: _weighted(ad.upsample_bilinear(x[0], 4)), [_t(rng, 1, 2, 3, 2)]),
        (
            "group_norm",
            lambda x: _weighted(ad.group_norm(x[0], 2, x[1], x[2])),
            [_t(rng, 2, 4, 3, 3), pos(4), _t(rng, 4)],
        ),
    ]
    return cases


def _toy_scene(height: int = 64, width: int = 64, seed: int = 3):
    scfg = SyntheticConfig(height=height, width=width)
    scenes = generate_synthetic(seed, 2, 2, scfg)
    tcfg = TargetConfig(height, width, ("Car",))
    targets = [build_targets(s.to_frame(), DEFAULT_TEMPLATE, tcfg) for s in scenes]
    images = np.stack([standardize(s.image) for s in scenes])
    return images, collate(targets)


def loss_cases(seed: int = 0) -> list[Case]:
    rng = np.random.default_rng(seed)
    _, batch = _toy_scene()
    m = batch.n_objects
    hm_target = batch.heatmap[:, :, :6, :6].copy()
    hm_target[0, 0, 2, 3] = 1.0
    pred_g1 = Tensor(batch.g1 + rng.normal(0, 2.0, batch.g1.shape))
    pred = {
        "g2": Tensor(batch.g2 + rng.normal(0, 0.2, batch.g2.shape)),
        "g3": Tensor(batch.g3 + rng.normal(0, 1.0, batch.g3.shape)),
        "g4": Tensor(batch.g4 + rng.normal(0, 0.2, batch.g4.shape)),
    }
    gt = {"g2": batch.g2, "g3": batch.g3, "g4": batch.g4}
    kp = batch.keypoints

    def reg3d(x):
        return disentangled_reg3d(
            {"g2": x[0], "g3": x[1], "g4": x[2]}, gt, kp, batch.intrinsics, batch.templates
        )

    return [
        (
            "keypoint_loss",
            lambda x: keypoint_loss(x[0], hm_target, 2),
            [Tensor(rng.uniform(0.05, 0.95, hm_target.shape))],
        ),
        ("reg2d", lambda x: disentangled_reg2d(x[0], batch.g1, kp, batch.depth), [pred_g1]),
        ("reg3d", reg3d, [pred["g2"], pred["g3"], pred["g4"]]),
        (
            "depth_hint_loss",
            lambda x: depth_hint_loss(x[0], np.array([10.0, 20.0, 30.0]), np.array([1.0, 0.0, 1.0])),
            [Tensor(np.array([12.0, 5.0, 27.0]))],
        ),
    ] if m else []


def toy_model_config(**overrides) -> ModelConfig:
    base = dict(
        categories=1, height=64, width=64, backbone_width=16, feature_channels=8,
        kp_head_channels=8, reg_head_channels=8, gn_groups=2,
    )
    base.update(overrides)
    return ModelConfig(**base)


def model_case(cfg: ModelConfig | None = None, seed: int = 0) -> tuple[Callable, list, list[str]]:
    """L_total through the whole network as a function of every parameter and the image."""
    cfg = cfg or toy_model_config()
    model = FADNet(cfg, seed=seed)
    images, batch = _toy_scene(cfg.height, cfg.width)
    named = list(model.named_parameters())
    image = Tensor(images)

    def f(_inputs):
        return compute_losses(model(image), batch, LossConfig())["total"]

    return f, [p for _, p in named] + [image], [n for n, _ in named] + ["image"]


def run_sweep(eps: float = 1e-5, tol: float = 1e-4, model_coords: int | None = 6,
              include_model: bool = True) -> list[tuple[str, GradcheckReport]]:
    results = []
    for name, f, inputs in primitive_cases() + loss_cases():
        results.append((name, gradcheck(f, inputs, eps=eps, tol=tol)))
    if include_model:
        for variant in ("full", "baseline"):
            f, inputs, _ = model_case(toy_model_config(**_variant_flags(variant)))
            results.append(
                (f"model_{variant}", gradcheck(f, inputs, eps=eps, tol=tol, max_coords=model_coords))
            )
    return results


def _variant_flags(name: str) -> dict:
    from .model import VARIANTS

    return dict(VARIANTS[name])
