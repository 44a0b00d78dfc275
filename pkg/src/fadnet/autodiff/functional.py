"""Spatial primitives over ``[C,H,W]`` or batched ``[N,C,H,W]`` tensors."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, GeometryError, ParameterError
from .tensor import Tensor, _record, as_tensor, concat, getitem


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected [C,H,W] or [N,C,H,W], got shape {x.shape}")
    return x, False


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return y.reshape(y.shape[1:]) if squeeze else y


def _pads(padding) -> tuple[int, int]:
    if isinstance(padding, (tuple, list)):
        before, after = padding
        return int(before), int(after)
    return int(padding), int(padding)


def conv_output_size(n: int, k: int, stride: int, padding) -> int:
    before, after = _pads(padding)
    span = n + before + after - k
    if stride < 1 or span < 0 or span % stride:
        raise GeometryError(
            f"extent {n} with kernel {k}, stride {stride}, padding {padding} "
            "does not give an integer output size"
        )
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding=0) -> Tensor:
    """Cross-correlation with square kernels (im2col + one matmul).

    ``padding`` is either symmetric or a ``(before, after)`` pair applied to
    both spatial axes. Output extents must come out integral.
    """
    x, squeeze = _batched(as_tensor(x))
    weight = as_tensor(weight)
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if k != k2 or k < 1:
        raise DimensionError(f"kernel must be square, got {weight.shape}")
    if wcin != cin:
        raise DimensionError(f"input has {cin} channels but weight expects {wcin}")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)

    pb, pa = _pads(padding)
    # channel-major layout so the column matrix is (C*k*k, N*Ho*Wo)
    xp = np.pad(x.data.transpose(1, 0, 2, 3), ((0, 0), (0, 0), (pb, pa), (pb, pa)))
    if k == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :ho, :wo].reshape(cin, n * ho * wo)
    else:
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        win = win[:, :, :ho, :wo].transpose(0, 4, 5, 1, 2, 3)
        cols = np.ascontiguousarray(win).reshape(cin * k * k, n * ho * wo)
    wmat = weight.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data[:, None]
    out = out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
        gw = (gm @ cols.T).reshape(weight.shape)
        dcols = wmat.T @ gm
        gxp = np.zeros_like(xp)
        if k == 1:
            gxp[:, :, : stride * ho : stride, : stride * wo : stride] = dcols.reshape(
                cin, n, ho, wo
            )
        else:
            dcols = dcols.reshape(cin, k, k, n, ho, wo)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        dcols[:, i, j]
                    )
        gx = gxp[:, :, pb : pb + h, pb : pb + w].transpose(1, 0, 2, 3)
        gb = gm.sum(axis=1) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _unbatch(_record(out, parents, bw), squeeze)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     factor: int = 2) -> Tensor:
    """Transposed convolution with kernel size == stride == ``factor``.

    ``weight`` has shape ``[C_in, C_out, factor, factor]``; each input cell
    paints one non-overlapping ``factor x factor`` output patch.
    """
    if factor < 1:
        raise ParameterError(f"upsampling factor must be >= 1, got {factor}")
    x, squeeze = _batched(as_tensor(x))
    weight = as_tensor(weight)
    n, cin, h, w = x.shape
    wcin, cout, k, k2 = weight.shape
    if wcin != cin:
        raise DimensionError(f"input has {cin} channels but weight expects {wcin}")
    if k != factor or k2 != factor:
        raise DimensionError(f"kernel {weight.shape[2:]} must equal factor {factor}")
    xd, wd = x.data, weight.data
    out = np.einsum("ncij,coab->noiajb", xd, wd, optimize=True)
    out = out.reshape(n, cout, h * factor, w * factor)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]

    def bw(g):
        g6 = g.reshape(n, cout, h, factor, w, factor)
        gx = np.einsum("noiajb,coab->ncij", g6, wd, optimize=True)
        gw = np.einsum("noiajb,ncij->coab", g6, xd, optimize=True)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _unbatch(_record(out, parents, bw), squeeze)


def bilinear_matrix(n_in: int, factor: int) -> np.ndarray:
    """Interpolation weights (n_in*factor, n_in), half-pixel centers, edge clamped."""
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ParameterError(f"upsampling factor must be >= 1, got {factor}")
    x, squeeze = _batched(as_tensor(x))
    _, _, h, w = x.shape
    mh = bilinear_matrix(h, factor)
    mw = bilinear_matrix(w, factor)
    out = np.einsum("yh,nchw,xw->ncyx", mh, x.data, mw, optimize=True)
    return _unbatch(
        _record(out, (x,), lambda g: (np.einsum("yh,ncyx,xw->nchw", mh, g, mw, optimize=True),)),
        squeeze,
    )


def upsample(x: Tensor, factor: int, mode: str = "bilinear", weight: Tensor | None = None,
             bias: Tensor | None = None) -> Tensor:
    """Increase resolution by ``factor`` (bilinear, or learned transposed conv)."""
    if factor < 1:
        raise ParameterError(f"upsampling factor must be >= 1, got {factor}")
    if mode == "bilinear":
        return upsample_bilinear(x, factor)
    if mode == "transposed":
        if weight is None:
            raise ParameterError("transposed upsampling needs a weight tensor")
        return conv_transpose2d(x, weight, bias, factor)
    raise ParameterError(f"unknown upsampling mode {mode!r}")


conv_transpose2d_or_upsample = upsample


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x, squeeze = _batched(as_tensor(x))
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ParameterError(f"{c} channels cannot be split into {groups} groups")
    if eps <= 0:
        raise ParameterError("eps must be positive")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(n, c, h, w)
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def bw(g):
        gg = g * gamma.data[None, :, None, None]
        gg = gg.reshape(n, groups, -1)
        xh = xhat.reshape(n, groups, -1)
        gx = inv * (gg - gg.mean(axis=2, keepdims=True) - xh * (gg * xh).mean(axis=2, keepdims=True))
        return (
            gx.reshape(n, c, h, w),
            (g * xhat).sum(axis=(0, 2, 3)),
            g.sum(axis=(0, 2, 3)),
        )

    return _unbatch(_record(out, (x, gamma, beta), bw), squeeze)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.shape[-2:] != b.shape[-2:] or a.shape[:-3] != b.shape[:-3]:
        raise DimensionError(f"spatial mismatch: {a.shape} vs {b.shape}")
    return concat([a, b], axis=-3)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    index = (Ellipsis, slice(start, stop), slice(None), slice(None))
    return getitem(x, index)
