"""Central-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ParameterError
from .tensor import Tensor, backward, no_grad, record_branches


@dataclass
class GradcheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    # (input index, flat coordinate, message) for coordinates whose perturbed evaluation failed
    eval_errors: list[tuple[int, int, str]] = field(default_factory=list)
    worst: tuple[int, int] | None = None
    # (input index, flat coordinate) whose stencil crossed a relu/abs/clip kink
    kinks: list[tuple[int, int]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.eval_errors and self.max_rel_error <= self.tol

    def __bool__(self) -> bool:
        return self.passed


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(
    f: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-5,
    floor: float = 1e-8,
    max_coords: int | None = None,
    seed: int = 0,
    skip_kinks: bool = True,
) -> GradcheckReport:
    """Compare backward() gradients of scalar ``f(inputs)`` with central differences.

    The error per coordinate is ``|a - n| / max(|a|, |n|, floor)``. With
    ``max_coords`` set, at most that many coordinates per input are sampled
    (without replacement, seeded); otherwise every coordinate is checked.

    Central differences are meaningless when ``x - eps`` and ``x + eps`` fall on
    different pieces of a piecewise primitive. With ``skip_kinks`` the branch
    pattern of every relu/abs/clip is recorded at ``x``, ``x + eps`` and
    ``x - eps``; coordinates where the patterns differ are listed in
    ``kinks`` and left out of the error.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ParameterError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    for t in inputs:
        if not np.all(np.isfinite(t.data)):
            raise ParameterError("gradcheck inputs must be finite")

    saved = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with record_branches() as base_branches:
        out = f(inputs)
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    for t in inputs:
        t.grad = None

    rng = np.random.default_rng(seed)
    worst, worst_at, n_checked = 0.0, None, 0
    errors: list[tuple[int, int, str]] = []
    kinks: list[tuple[int, int]] = []
    with no_grad():
        for i, t in enumerate(inputs):
            if not t.data.flags.c_contiguous:
                t.data = np.ascontiguousarray(t.data)
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for j in coords:
                orig = flat[j]
                flat[j] = orig + eps
                with record_branches() as bp:
                    fp = float(f(inputs).data.sum())
                flat[j] = orig - eps
                with record_branches() as bm:
                    fm = float(f(inputs).data.sum())
                flat[j] = orig
                n_checked += 1
                if skip_kinks and not (bp == base_branches and bm == base_branches):
                    kinks.append((i, int(j)))
                    continue
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    errors.append((i, int(j), f"non-finite value f(+)={fp}, f(-)={fm}"))
                    continue
                numeric = (fp - fm) / (2 * eps)
                err = relative_error(float(analytic[i].reshape(-1)[j]), numeric, floor)
                if err > worst:
                    worst, worst_at = err, (i, int(j))
    for t, flag in zip(inputs, saved):
        t.requires_grad = flag
    return GradcheckReport(worst, tol, n_checked, errors, worst_at, kinks)
