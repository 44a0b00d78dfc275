"""Stage-wise training: Adam, freezing, loss-term exclusion, CSV logs, resumable checkpoints."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ParameterError, TrainingDivergenceError
from .kitti.targets import TargetBatch, TrainingTargets, collate
from .losses import LOSS_TERMS, LossConfig, compute_losses
from .model import FADNet, parameter_groups

log = logging.getLogger(__name__)

LOG_COLUMNS = ("stage", "epoch", "lr", "L_kp", "L_reg2d", "L_reg3d", "L_dh", "total")


@dataclass(frozen=True)
class Stage:
    epochs: int
    lr: float
    halve_every: int = 0  # 0 keeps the rate constant
    frozen: tuple[str, ...] = ()
    excluded: tuple[str, ...] = ()
    weight_decay: float = 0.0

    def lr_at(self, epoch: int) -> float:
        if self.halve_every <= 0:
            return self.lr
        return self.lr * 0.5 ** (epoch // self.halve_every)


@dataclass(frozen=True)
class StageSchedule:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        if not self.stages:
            raise ParameterError("a schedule needs at least one stage")
        for s in self.stages:
            if s.epochs < 0 or s.lr <= 0:
                raise ParameterError(f"bad stage {s}")
            unknown = set(s.excluded) - set(LOSS_TERMS)
            if unknown:
                raise ParameterError(f"unknown loss terms {sorted(unknown)}")

    @classmethod
    def three_stage(cls, epochs=(9, 3, 3), lrs=(2e-4, 3e-5, 3e-5), halve_every: int = 3,
                    weight_decay: float = 1e-5) -> "StageSchedule":
        e1, e2, e3 = epochs
        l1, l2, l3 = lrs
        return cls(
            (
                Stage(e1, l1, halve_every),
                Stage(e2, l2, halve_every, frozen=("depth_hint",), excluded=("dh",)),
                Stage(
                    e3,
                    l3,
                    halve_every,
                    frozen=("depth_hint", "keypoint_head", "head_g1"),
                    excluded=("dh", "kp", "reg2d"),
                    weight_decay=weight_decay,
                ),
            )
        )

    @classmethod
    def desk(cls) -> "StageSchedule":
        return cls.three_stage()

    @classmethod
    def paper(cls) -> "StageSchedule":
        return cls.three_stage((90, 30, 30), halve_every=30)

    def scaled(self, factor: float) -> "StageSchedule":
        """Same structure with every epoch count (and halving period) multiplied."""
        return StageSchedule(
            tuple(
                replace(s, epochs=int(round(s.epochs * factor)),
                        halve_every=int(round(s.halve_every * factor)))
                for s in self.stages
            )
        )

    @property
    def total_epochs(self) -> int:
        return sum(s.epochs for s in self.stages)


class Adam:
    """Adam with L2 weight decay added to the gradient (coupled, as in classic Adam)."""

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([float(self.t)])}
        for k in self.params:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"][0])
        for k in self.params:
            self.m[k] = np.array(state[f"m.{k}"], dtype=float)
            self.v[k] = np.array(state[f"v.{k}"], dtype=float)


@dataclass
class Sample:
    image: np.ndarray  # 3 x H x W, standardized
    targets: TrainingTargets


@dataclass
class TrainConfig:
    batch_size: int = 2
    seed: int = 0
    repeats: int = 1  # passes over the dataset per epoch
    loss: LossConfig = field(default_factory=LossConfig)
    log_path: str | None = None
    checkpoint_dir: str | None = None
    time_budget: float | None = None  # seconds; stop early (logged) when exceeded


@dataclass
class TrainResult:
    model: FADNet
    log: list[dict]
    completed: bool = True
    seconds: float = 0.0

    @property
    def final_total(self) -> float:
        return self.log[-1]["total"] if self.log else float("nan")


def param_checksum(model: FADNet, names) -> str:
    h = hashlib.sha256()
    params = dict(model.named_parameters())
    for n in sorted(names):
        h.update(n.encode())
        h.update(np.ascontiguousarray(params[n].data).tobytes())
    return h.hexdigest()


def _frozen_names(model: FADNet, frozen) -> list[str]:
    groups = parameter_groups(model)
    names = []
    for g in frozen:
        if g not in groups:
            # a variant without the block has nothing to freeze
            if g in ("depth_hint", "gru"):
                continue
            raise ParameterError(f"no parameter group {g!r} in model")
        names += groups[g]
    return names


def epoch_order(n: int, seed: int, stage: int, epoch: int, repeats: int) -> np.ndarray:
    rng = np.random.default_rng([seed, stage, epoch])
    return np.concatenate([rng.permutation(n) for _ in range(repeats)])


def _batch(samples: list[Sample]) -> tuple[Tensor, TargetBatch]:
    return Tensor(np.stack([s.image for s in samples])), collate([s.targets for s in samples])


def train_step(model: FADNet, samples: list[Sample], opt: Adam, loss_cfg: LossConfig,
               excluded=()) -> dict[str, float]:
    image, batch = _batch(samples)
    model.zero_grad()
    out = model(image)
    parts = compute_losses(out, batch, loss_cfg, excluded)
    for name, value in parts.items():
        if not np.isfinite(value.data).all():
            raise TrainingDivergenceError(name, float(value.data))
    backward(parts["total"])
    opt.step()
    return {k: float(v.data) for k, v in parts.items()}


def evaluate_losses(model: FADNet, samples: list[Sample], loss_cfg: LossConfig = LossConfig(),
                    excluded=(), batch_size: int = 2) -> dict[str, float]:
    """Loss parts over ``samples`` without updating anything (object-count weighted)."""
    from .autodiff import no_grad

    sums: dict[str, float] = {}
    count = 0
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            image, batch = _batch(chunk)
            parts = compute_losses(model(image), batch, loss_cfg, excluded)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v.data) * len(chunk)
            count += len(chunk)
    return {k: v / count for k, v in sums.items()}


def _log_row(stage: int, epoch: int, lr: float, means: dict[str, float]) -> dict:
    row = {"stage": stage + 1, "epoch": epoch + 1, "lr": lr}
    for term in LOSS_TERMS:
        row[f"L_{term}"] = means.get(term, 0.0)
    row["total"] = means.get("total", 0.0)
    return row


def write_log(rows, path) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LOG_COLUMNS)
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in LOG_COLUMNS})
    Path(path).write_text(buf.getvalue())


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {k: (int(v) if k in ("stage", "epoch") else float(v)) for k, v in r.items()} for r in rows
    ]


def train(model: FADNet, dataset: list[Sample], schedule: StageSchedule,
          cfg: TrainConfig = TrainConfig(), resume: bool = False) -> TrainResult:
    """Run every stage of ``schedule``.

    Each stage starts a fresh optimizer over the non-frozen parameters and
    drops its excluded loss terms. With ``checkpoint_dir`` set, the model,
    optimizer moments and log are saved after every epoch; ``resume`` picks up
    from the last one and reproduces the uninterrupted trajectory exactly. A
    non-finite loss restores the last good checkpoint (when there is one) and
    re-raises.
    """
    if not dataset:
        raise ParameterError("empty dataset")
    start = time.perf_counter()
    rows: list[dict] = []
    first_stage, first_epoch, opt_state = 0, 0, None
    ckpt = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if resume and ckpt is not None and (ckpt / "manifest.txt").exists():
        state = load_checkpoint(ckpt)
        model.load_state_dict(state.params)
        rows = state.log
        first_stage, first_epoch = state.stage, state.epoch
        opt_state = state.optimizer

    all_params = dict(model.named_parameters())
    for si in range(first_stage, len(schedule.stages)):
        stage = schedule.stages[si]
        frozen = set(_frozen_names(model, stage.frozen))
        trainable = {k: p for k, p in all_params.items() if k not in frozen}
        frozen_sum = param_checksum(model, frozen)
        opt = Adam(trainable, stage.lr, weight_decay=stage.weight_decay)
        e0 = first_epoch if si == first_stage else 0
        if opt_state is not None and si == first_stage:
            opt.load_state(opt_state)
            opt_state = None
        for epoch in range(e0, stage.epochs):
            opt.lr = stage.lr_at(epoch)
            order = epoch_order(len(dataset), cfg.seed, si, epoch, cfg.repeats)
            sums: dict[str, float] = {}
            steps = 0
            for b in range(0, len(order), cfg.batch_size):
                chunk = [dataset[j] for j in order[b : b + cfg.batch_size]]
                try:
                    parts = train_step(model, chunk, opt, cfg.loss, stage.excluded)
                except TrainingDivergenceError:
                    if ckpt is not None and (ckpt / "manifest.txt").exists():
                        model.load_state_dict(load_checkpoint(ckpt).params)
                        log.error("divergence; restored last good checkpoint from %s", ckpt)
                    raise
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + v
                steps += 1
            row = _log_row(si, epoch, opt.lr, {k: v / steps for k, v in sums.items()})
            rows.append(row)
            log.info("stage %d epoch %d total %.6f", si + 1, epoch + 1, row["total"])
            nxt = (si, epoch + 1) if epoch + 1 < stage.epochs else (si + 1, 0)
            if ckpt is not None:
                save_checkpoint(ckpt, model, opt.state() if nxt[0] == si else None, nxt[0], nxt[1], rows)
            if cfg.log_path:
                write_log(rows, cfg.log_path)
            if cfg.time_budget is not None and time.perf_counter() - start > cfg.time_budget:
                log.warning("time budget exhausted after stage %d epoch %d", si + 1, epoch + 1)
                return TrainResult(model, rows, False, time.perf_counter() - start)
        if param_checksum(model, frozen) != frozen_sum:
            raise RuntimeError(f"frozen parameters changed during stage {si + 1}")
    return TrainResult(model, rows, True, time.perf_counter() - start)


def make_samples(frames, template, target_cfg, stats=None) -> list[Sample]:
    """Standardize images (with dataset-wide channel stats unless given) and build targets."""
    from .kitti.synthetic import channel_stats, standardize
    from .kitti.targets import build_targets

    frames = list(frames)
    if any(f.image is None for f in frames):
        raise ParameterError("every training frame needs an image array")
    mean, std = stats if stats is not None else channel_stats(f.image for f in frames)
    return [
        Sample(standardize(f.image, mean, std), build_targets(f, template, target_cfg))
        for f in frames
    ]
