"""Checkpoints: a text manifest plus one little-endian float64 payload.

manifest.txt holds ``stage``/``epoch`` header lines followed by one line per
tensor: ``<kind> <name> <shape> <offset>`` where kind is ``param`` or
``optim``, shape is comma-separated and offset counts float64 elements into
payload.bin. model.cfg is the model config; log.csv the training log so far.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError
from .model import FADNet, ModelConfig

DTYPE = np.dtype("<f8")


@dataclass
class CheckpointState:
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] | None
    stage: int
    epoch: int
    log: list[dict] = field(default_factory=list)
    config: ModelConfig | None = None


def _shape_text(shape) -> str:
    return ",".join(str(int(s)) for s in shape) if len(shape) else "-"


def _parse_shape(text: str) -> tuple[int, ...]:
    return () if text == "-" else tuple(int(s) for s in text.split(","))


def save_checkpoint(directory, model: FADNet, optimizer: dict | None, stage: int, epoch: int,
                    log_rows=()) -> None:
    """Write atomically enough for resume: the manifest is replaced last."""
    from .train import write_log

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = [("param", k, v) for k, v in model.state_dict().items()]
    if optimizer is not None:
        entries += [("optim", k, v) for k, v in optimizer.items()]
    lines = [f"stage {stage}", f"epoch {epoch}"]
    offset = 0
    chunks = []
    for kind, name, value in entries:
        arr = np.asarray(value, dtype=DTYPE, order="C")  # ascontiguousarray would promote 0-d to 1-d
        lines.append(f"{kind} {name} {_shape_text(arr.shape)} {offset}")
        chunks.append(arr.reshape(-1))
        offset += arr.size
    payload = np.concatenate(chunks) if chunks else np.zeros(0, DTYPE)
    payload.astype(DTYPE).tofile(d / "payload.bin.tmp")
    os.replace(d / "payload.bin.tmp", d / "payload.bin")
    model.cfg.save(d / "model.cfg")
    write_log(list(log_rows), d / "log.csv")
    (d / "manifest.txt.tmp").write_text("\n".join(lines) + "\n")
    os.replace(d / "manifest.txt.tmp", d / "manifest.txt")


def load_checkpoint(directory) -> CheckpointState:
    from .train import read_log

    d = Path(directory)
    payload = np.fromfile(d / "payload.bin", dtype=DTYPE)
    params: dict[str, np.ndarray] = {}
    optim: dict[str, np.ndarray] = {}
    stage = epoch = 0
    for lineno, line in enumerate((d / "manifest.txt").read_text().splitlines(), 1):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] in ("stage", "epoch") and len(tokens) == 2:
            if tokens[0] == "stage":
                stage = int(tokens[1])
            else:
                epoch = int(tokens[1])
            continue
        if len(tokens) != 4 or tokens[0] not in ("param", "optim"):
            raise ParseError(f"malformed manifest entry {line!r}", lineno)
        kind, name, shape_text, off = tokens
        shape = _parse_shape(shape_text)
        start = int(off)
        size = int(np.prod(shape)) if shape else 1
        if start + size > payload.size:
            raise ParseError(f"{name} runs past the end of the payload", lineno)
        value = payload[start : start + size].reshape(shape).astype(np.float64)
        (params if kind == "param" else optim)[name] = value
    cfg = ModelConfig.load(d / "model.cfg") if (d / "model.cfg").exists() else None
    rows = read_log(d / "log.csv") if (d / "log.csv").exists() else []
    return CheckpointState(params, optim or None, stage, epoch, rows, cfg)


def load_model(directory) -> FADNet:
    state = load_checkpoint(directory)
    if state.config is None:
        raise ParseError(f"{directory} has no model.cfg")
    model = FADNet(state.config)
    model.load_state_dict(state.params)
    return model
