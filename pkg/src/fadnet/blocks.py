"""Network building blocks: heads, convolutional GRU, depth-hint module, backbone."""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    broadcast_to,
    concat_channels,
    conv2d,
    getitem,
    group_norm,
    parameter,
    relu,
    sigmoid,
    tanh,
    upsample,
)
from .errors import DimensionError, GeometryError, ParameterError


class Module:
    """Parameter container; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, dict):
                for key, sub in value.items():
                    if isinstance(sub, Module):
                        yield from sub.named_parameters(f"{prefix}{name}.{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        bound = np.sqrt(1.0 / (cin * k * k))
        self.weight = parameter(rng.uniform(-bound, bound, size=(cout, cin, k, k)))
        self.bias = parameter(rng.uniform(-bound, bound, size=cout))
        self.stride = stride
        self.padding = padding

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int, eps: float = 1e-5):
        if channels % groups:
            raise ParameterError(f"{channels} channels not divisible into {groups} groups")
        self.weight = parameter(np.ones(channels))
        self.bias = parameter(np.zeros(channels))
        self.groups = groups
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.weight, self.bias, self.eps)


class HeadBlock(Module):
    """conv3x3 -> GN -> ReLU -> conv1x1, spatial size preserved."""

    def __init__(self, cin: int, mid: int, cout: int, rng: np.random.Generator, groups: int = 8):
        self.conv3x3 = Conv2d(cin, mid, 3, rng, padding=1)
        self.gn = GroupNorm(mid, min(groups, mid))
        self.conv1x1 = Conv2d(mid, cout, 1, rng)

    @property
    def in_channels(self) -> int:
        return self.conv3x3.in_channels

    def __call__(self, feature: Tensor) -> Tensor:
        if feature.shape[-3] != self.in_channels:
            raise DimensionError(
                f"head expects {self.in_channels} input channels, got {feature.shape[-3]}"
            )
        return self.conv1x1(relu(self.gn(self.conv3x3(feature))))


def head_forward(block: HeadBlock, feature: Tensor) -> Tensor:
    return block(feature)


class ConvGRUCell(Module):
    """Single-layer GRU whose matrix products are 3x3 stride-1 convolutions."""

    def __init__(self, cin: int, hidden: int, rng: np.random.Generator):
        self.update = Conv2d(cin + hidden, hidden, 3, rng, padding=1)
        self.reset = Conv2d(cin + hidden, hidden, 3, rng, padding=1)
        self.candidate = Conv2d(cin + hidden, hidden, 3, rng, padding=1)
        self.hidden = hidden

    def gates(self, x: Tensor, h_prev: Tensor) -> tuple[Tensor, Tensor]:
        xh = concat_channels(x, h_prev)
        return sigmoid(self.update(xh)), sigmoid(self.reset(xh))

    def __call__(self, x: Tensor, h_prev: Tensor) -> Tensor:
        if x.shape[-3] + self.hidden != self.update.in_channels or h_prev.shape != (
            x.shape[:-3] + (self.hidden,) + x.shape[-2:]
        ):
            raise DimensionError(f"convGRU shapes do not match: x {x.shape}, h {h_prev.shape}")
        z, r = self.gates(x, h_prev)
        cand = tanh(self.candidate(concat_channels(x, r * h_prev)))
        return (1.0 - z) * h_prev + z * cand


def convgru_step(cell: ConvGRUCell, x: Tensor, h_prev: Tensor) -> Tensor:
    return cell(x, h_prev)


class DepthHintModule(Module):
    """Squeeze channels, then collapse the width axis, leaving one value per row band.

    ``hint_vector`` has one entry per stride-32 row (meters); ``hint_map``
    replicates entry ``i`` over the eight stride-4 rows ``8i..8i+7`` and over
    the full width.
    """

    def __init__(self, cin: int, width32: int, rng: np.random.Generator,
                 scale: float = 1.0, shift: float = 0.0):
        self.squeeze = Conv2d(cin, 1, 1, rng)
        self.column = Conv2d(width32, 1, 1, rng)
        # fixed affine from the raw conv output to meters
        self.scale = scale
        self.shift = shift

    def __call__(self, deep: Tensor) -> tuple[Tensor, Tensor]:
        batched = deep.ndim == 4
        if not batched:
            deep = deep.reshape((1,) + deep.shape)
        n, _, h32, w32 = deep.shape
        if w32 != self.column.in_channels:
            raise DimensionError(
                f"depth-hint module built for width {self.column.in_channels}, got {w32}"
            )
        squeezed = self.squeeze(deep)  # N,1,h,w
        by_column = squeezed.transpose(0, 3, 2, 1)  # N,w,h,1
        vec = self.column(by_column).reshape(n, h32)
        if self.scale != 1.0 or self.shift != 0.0:
            vec = vec * self.scale + self.shift
        rows = np.arange(h32 * 8) // 8
        hint = getitem(vec, (slice(None), rows)).reshape(n, 1, h32 * 8, 1)
        hint = broadcast_to(hint, (n, 1, h32 * 8, w32 * 8))
        if not batched:
            return vec.reshape(h32), hint.reshape(1, h32 * 8, w32 * 8)
        return vec, hint


def depth_hint_forward(module: DepthHintModule, deep_feature: Tensor):
    return module(deep_feature)


class Backbone(Module):
    """Plain strided-convolution stand-in: five stride-2 3x3 convs to stride 32,
    then upsampling back to stride 4.

    The upsampler enlarges the stride-32 map by 8 (fixed bilinear, or a learned
    transposed convolution), optionally concatenates the stride-4 activation
    of the downsampling path, and fuses with a learned 3x3 convolution.
    """

    widths = (16, 32, 64, 128)

    def __init__(self, rng: np.random.Generator, width: int = 128, out_channels: int = 64,
                 upsample_mode: str = "bilinear", skip: bool = True):
        if upsample_mode not in ("bilinear", "transposed"):
            raise ParameterError(f"unknown upsample mode {upsample_mode!r}")
        chans = (3,) + self.widths + (width,)
        self.conv1 = Conv2d(chans[0], chans[1], 3, rng, stride=2, padding=(0, 1))
        self.conv2 = Conv2d(chans[1], chans[2], 3, rng, stride=2, padding=(0, 1))
        self.conv3 = Conv2d(chans[2], chans[3], 3, rng, stride=2, padding=(0, 1))
        self.conv4 = Conv2d(chans[3], chans[4], 3, rng, stride=2, padding=(0, 1))
        self.conv5 = Conv2d(chans[4], chans[5], 3, rng, stride=2, padding=(0, 1))
        self.upsample_mode = upsample_mode
        if upsample_mode == "transposed":
            bound = np.sqrt(1.0 / width)
            self.up_weight = parameter(rng.uniform(-bound, bound, size=(width, width, 8, 8)))
            self.up_bias = parameter(rng.uniform(-bound, bound, size=width))
        self.skip = skip
        fuse_in = width + (chans[2] if skip else 0)
        self.fuse = Conv2d(fuse_in, out_channels, 3, rng, padding=1)
        self.width = width

    def __call__(self, image: Tensor) -> tuple[Tensor, Tensor]:
        h, w = image.shape[-2:]
        if h % 32 or w % 32:
            raise GeometryError(f"input {h}x{w} is not divisible by 32")
        x1 = relu(self.conv1(image))
        x2 = relu(self.conv2(x1))  # stride 4
        x3 = relu(self.conv3(x2))
        x4 = relu(self.conv4(x3))
        deep = relu(self.conv5(x4))  # stride 32
        if self.upsample_mode == "transposed":
            up = upsample(deep, 8, "transposed", self.up_weight, self.up_bias)
        else:
            up = upsample(deep, 8, "bilinear")
        if self.skip:
            up = concat_channels(up, x2)
        return deep, relu(self.fuse(up))


def backbone_forward(bb: Backbone, image: Tensor):
    return bb(image)
