"""Training losses: focal keypoint loss, disentangled corner losses, depth hint, total."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import (
    Tensor,
    as_tensor,
    atan2,
    clip,
    concat,
    cos,
    exp,
    getitem,
    log,
    sin,
    stack,
    tabs,
    tsum,
)
from .errors import DomainError, ParameterError, TrainingDivergenceError
from .geometry import CORNER_SIGNS

LOSS_TERMS = ("kp", "reg2d", "reg3d", "dh")
# heatmap predictions are clipped away from 0 and 1 before taking logs
PROB_EPS = 1e-12
MIN_DEPTH = 1e-3

REG2D_SUBSETS = ("offset", "size")
REG3D_SUBSETS = ("angle", "dims", "offset", "depth")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 2.0
    beta: float = 4.0
    gamma: float = 0.4
    lambda1: float = 5.0
    lambda2: float = 2.0
    lambda3: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (value >= 0 and math.isfinite(value)):
                raise ParameterError(f"{f.name} must be finite and nonnegative, got {value}")

    @property
    def weights(self) -> dict[str, float]:
        return {"kp": 1.0, "reg2d": self.lambda1, "reg3d": self.lambda2, "dh": self.lambda3}


# -- keypoint ---------------------------------------------------------------
def keypoint_loss(pred, target, n_objects: int, alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """Penalty-reduced focal loss over every heatmap cell, divided by the object count."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ParameterError(f"prediction {pred.shape} and target {target.shape} differ")
    if n_objects <= 0:
        warnings.warn("keypoint loss on a frame without objects is defined as 0")
        return Tensor(np.array(0.0)) + tsum(pred) * 0.0
    p = clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    pos = (target == 1.0).astype(float)
    neg = 1.0 - pos
    pos_term = (1.0 - p) ** alpha * log(p) * pos
    neg_term = ((1.0 - target) ** beta * neg) * p**alpha * log(1.0 - p)
    return -tsum(pos_term + neg_term) / float(n_objects)


# -- gathering --------------------------------------------------------------
def gather(feature: Tensor, batch_index, cells) -> Tensor:
    """Values of an [N, C, h, w] map at per-object cells -> [M, C]."""
    cells = np.asarray(cells, dtype=int).reshape(-1, 2)
    b = np.asarray(batch_index, dtype=int)
    return getitem(feature, (b, slice(None), cells[:, 1], cells[:, 0]))


def _col(t, i: int) -> Tensor:
    return getitem(as_tensor(t), (slice(None), slice(i, i + 1)))


def _mix(pred: Tensor, gt: np.ndarray, use_pred: bool) -> Tensor:
    return pred if use_pred else Tensor(np.asarray(gt, dtype=float))


# -- 2D -----------------------------------------------------------------------
def box_corners2d(kp, g1: Tensor) -> Tensor:
    """Corner transform F: (keypoint, du, dv, w, h) -> [M, 4, 2] in TL, TR, BL, BR order."""
    kp = np.asarray(kp, dtype=float).reshape(-1, 2)
    u = _col(g1, 0) + kp[:, :1]
    v = _col(g1, 1) + kp[:, 1:]
    hw, hh = _col(g1, 2) * 0.5, _col(g1, 3) * 0.5
    us = concat([u - hw, u + hw, u - hw, u + hw], axis=1)
    vs = concat([v - hh, v - hh, v + hh, v + hh], axis=1)
    return stack([us, vs], axis=2)


def reg2d_terms(pred_g1, gt_g1, kp) -> Tensor:
    """[M, 2] per-object terms for the (center offset, size) subsets.

    Each term swaps one subset of predicted values into the ground truth,
    builds corners and takes per-corner L1 (summed over u, v) averaged over
    the four corners.
    """
    pred_g1 = as_tensor(pred_g1)
    gt = np.asarray(gt_g1, dtype=float).reshape(-1, 4)
    gt_corners = box_corners2d(kp, Tensor(gt)).data
    terms = []
    for chans in ((0, 1), (2, 3)):
        cols = [_mix(_col(pred_g1, i), gt[:, i : i + 1], i in chans) for i in range(4)]
        corners = box_corners2d(kp, concat(cols, axis=1))
        terms.append(tsum(tabs(corners - gt_corners), axis=2).mean(axis=1))
    return stack(terms, axis=1)


def depth_aware_weight(d, gamma: float = 0.4):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("depth-aware weight needs positive depths")
    w = d**gamma
    return float(w) if w.ndim == 0 else w


def disentangled_reg2d(pred_g1, gt_g1, kp, depth=None, gamma: float = 0.4) -> Tensor:
    """Sum of subset terms, averaged over objects; weighted by d**gamma when ``depth`` is given."""
    per_object = tsum(reg2d_terms(pred_g1, gt_g1, kp), axis=1)
    if depth is not None:
        per_object = per_object * depth_aware_weight(depth, gamma)
    return per_object.mean()


# -- 3D -----------------------------------------------------------------------
def box_corners3d(kp, g2: Tensor, g3: Tensor, g4: Tensor, intrinsics, templates) -> Tensor:
    """Corner transform G: decode location, dimensions and yaw, then [M, 8, 3] corners.

    Decoded depth is clamped at ``MIN_DEPTH``; the clamp blocks the gradient.
    """
    kp = np.asarray(kp, dtype=float).reshape(-1, 2)
    K = np.asarray(intrinsics, dtype=float).reshape(-1, 4)
    tm = np.asarray(templates, dtype=float).reshape(-1, 3)
    fx, fy, u0, v0 = (K[:, i : i + 1] for i in range(4))
    # 1 / sigmoid(d) - 1 == exp(-d)
    z = clip(exp(-_col(g4, 0)), MIN_DEPTH, None)
    x = z * ((_col(g3, 0) + kp[:, :1] - u0) / fx)
    y = z * ((_col(g3, 1) + kp[:, 1:] - v0) / fy)
    H = exp(_col(g2, 0)) * tm[:, 0:1]
    W = exp(_col(g2, 1)) * tm[:, 1:2]
    L = exp(_col(g2, 2)) * tm[:, 2:3]
    theta = atan2(_col(g2, 4), _col(g2, 3)) + atan2(x, z)
    c, s = cos(theta), sin(theta)
    ox = L * (0.5 * CORNER_SIGNS[:, 0])  # M x 8
    oy = H * (0.5 * CORNER_SIGNS[:, 1])
    oz = W * (0.5 * CORNER_SIGNS[:, 2])
    cx = c * ox + s * oz + x
    cy = oy + y
    cz = c * oz - s * ox + z
    return stack([cx, cy, cz], axis=2)


_REG3D_CHANNELS = {
    "angle": ("g2", (3, 4)),
    "dims": ("g2", (0, 1, 2)),
    "offset": ("g3", (0, 1)),
    "depth": ("g4", (0,)),
}


def reg3d_terms(pred: dict, gt: dict, kp, intrinsics, templates) -> Tensor:
    """[M, 4] per-object terms for the (angle, dims, 3D offset, depth) subsets."""
    gtv = {g: np.asarray(gt[g], dtype=float) for g in ("g2", "g3", "g4")}
    gt_corners = box_corners3d(
        kp, Tensor(gtv["g2"]), Tensor(gtv["g3"]), Tensor(gtv["g4"]), intrinsics, templates
    ).data
    terms = []
    for subset in REG3D_SUBSETS:
        group, chans = _REG3D_CHANNELS[subset]
        mixed = {}
        for g in ("g2", "g3", "g4"):
            if g != group:
                mixed[g] = Tensor(gtv[g])
                continue
            p = as_tensor(pred[g])
            mixed[g] = concat(
                [_mix(_col(p, i), gtv[g][:, i : i + 1], i in chans) for i in range(p.shape[1])],
                axis=1,
            )
        corners = box_corners3d(kp, mixed["g2"], mixed["g3"], mixed["g4"], intrinsics, templates)
        terms.append(tsum(tabs(corners - gt_corners), axis=2).mean(axis=1))
    return stack(terms, axis=1)


def disentangled_reg3d(pred: dict, gt: dict, kp, intrinsics, templates) -> Tensor:
    return tsum(reg3d_terms(pred, gt, kp, intrinsics, templates), axis=1).mean()


# -- depth hint ---------------------------------------------------------------
def depth_hint_loss(pred, target, mask) -> Tensor:
    """Mean absolute error over active bins; 0 when no bin is active."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if pred.shape != target.shape or target.shape != mask.shape:
        raise ParameterError(f"shapes differ: {pred.shape}, {target.shape}, {mask.shape}")
    active = mask.sum()
    # masked bins are replaced by their target so their values never reach the graph
    diff = tabs(pred * mask + target * (1.0 - mask) - target)
    if active == 0:
        return tsum(diff) * 0.0
    return tsum(diff) / float(active)


# -- total ----------------------------------------------------------------------
def total_loss(parts: dict, cfg: LossConfig = LossConfig(), exclude=()) -> Tensor:
    """L_kp + lambda1 * reg2d + lambda2 * reg3d + lambda3 * L_dh over non-excluded terms.

    ``parts["reg2d"]`` is expected to already carry the per-object d**gamma factor.
    """
    total = None
    for name in LOSS_TERMS:
        if name in exclude or name not in parts:
            continue
        value = as_tensor(parts[name])
        if not np.all(np.isfinite(value.data)):
            raise TrainingDivergenceError(name, value.data)
        term = value * cfg.weights[name]
        total = term if total is None else total + term
    return total if total is not None else Tensor(np.array(0.0))


def compute_losses(out, batch, cfg: LossConfig = LossConfig(), exclude=()) -> dict:
    """All loss parts of a batched network output against collated targets.

    Returns a dict with one tensor per term in ``LOSS_TERMS`` (terms that
    cannot be computed are omitted) plus ``"total"``.
    """
    parts = {}
    n = batch.n_objects
    if "kp" not in exclude:
        parts["kp"] = keypoint_loss(out.heatmap, batch.heatmap, n, cfg.alpha, cfg.beta)
    if n > 0:
        kp = batch.keypoints
        pred = {g: gather(out.groups[g], batch.batch_index, batch.cells) for g in ("g1", "g2", "g3", "g4")}
        if "reg2d" not in exclude:
            parts["reg2d"] = disentangled_reg2d(pred["g1"], batch.g1, kp, batch.depth, cfg.gamma)
        if "reg3d" not in exclude:
            gt = {"g2": batch.g2, "g3": batch.g3, "g4": batch.g4}
            parts["reg3d"] = disentangled_reg3d(pred, gt, kp, batch.intrinsics, batch.templates)
    if "dh" not in exclude and out.hint_vector is not None:
        parts["dh"] = depth_hint_loss(out.hint_vector, batch.hint, batch.hint_mask)
    parts["total"] = total_loss(parts, cfg, exclude)
    return parts
