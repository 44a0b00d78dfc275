"""Train/val splitting of frame ids."""

from __future__ import annotations

from importlib import resources

import numpy as np

from ..errors import ParameterError

KITTI_TRAIN_FRAMES = 7481


def _bundled(name: str) -> list[str]:
    text = resources.files(__package__).joinpath("data", name).read_text()
    return [line.strip() for line in text.splitlines() if line.strip()]


def bundled_split() -> tuple[list[str], list[str]]:
    """The bundled (train, val) id lists over the 7481 training frames."""
    return _bundled("train.txt"), _bundled("val.txt")


def _key(i) -> str:
    return f"{int(i):06d}" if str(i).isdigit() else str(i)


def split_3dop(ids, seed: int = 0) -> tuple[list, list]:
    """Split frame ids into (train, val).

    The full KITTI id set uses the bundled lists (3712 / 3769 frames). Any
    other id set gets a seeded half split, with the extra id going to val.
    Output order follows the input order.
    """
    ids = list(ids)
    keys = [_key(i) for i in ids]
    if len(set(keys)) != len(keys):
        raise ParameterError("duplicate frame ids")
    train_ids, val_ids = bundled_split()
    if set(keys) == set(train_ids) | set(val_ids):
        train_set = set(train_ids)
    else:
        order = np.random.default_rng(seed).permutation(len(ids))
        train_set = {keys[j] for j in order[: len(ids) // 2]}
    train = [i for i, k in zip(ids, keys) if k in train_set]
    val = [i for i, k in zip(ids, keys) if k not in train_set]
    return train, val
