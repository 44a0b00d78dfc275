"""Full detector: backbone, keypoint head, sequential feature association over the
four regression groups, and depth-hint augmentation of the depth head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat_channels, no_grad, sigmoid
from .blocks import Backbone, ConvGRUCell, DepthHintModule, HeadBlock, Module
from .errors import GeometryError, ParameterError

# Regression groups, ordered from easiest to hardest.
GROUPS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("g1", ("du2d", "dv2d", "w", "h")),
    ("g2", ("dH", "dW", "dL", "cos_a", "sin_a")),
    ("g3", ("du3d", "dv3d")),
    ("g4", ("depth_enc",)),
)
GROUP_NAMES = tuple(name for name, _ in GROUPS)
GROUP_CHANNELS = {name: len(symbols) for name, symbols in GROUPS}
CHANNEL_INDEX = {
    sym: (name, i) for name, symbols in GROUPS for i, sym in enumerate(symbols)
}

VARIANTS = {
    "full": dict(enable_fa=True, enable_dh=True, reversed_order=False),
    "baseline": dict(enable_fa=False, enable_dh=False, reversed_order=False),
    "fa": dict(enable_fa=True, enable_dh=False, reversed_order=False),
    "dh": dict(enable_fa=False, enable_dh=True, reversed_order=False),
    "reversed": dict(enable_fa=True, enable_dh=True, reversed_order=True),
}


@dataclass(frozen=True)
class ModelConfig:
    categories: int = 3
    height: int = 384
    width: int = 1280
    enable_fa: bool = True
    enable_dh: bool = True
    reversed_order: bool = False
    backbone_width: int = 128
    feature_channels: int = 64
    kp_head_channels: int = 256
    reg_head_channels: int = 32
    gn_groups: int = 8
    upsample_mode: str = "bilinear"
    skip_fusion: bool = True

    def __post_init__(self):
        if self.height % 32 or self.width % 32 or self.height <= 0 or self.width <= 0:
            raise ParameterError(f"input {self.height}x{self.width} must be divisible by 32")
        if self.categories < 1:
            raise ParameterError("need at least one category")
        if self.reversed_order and not self.enable_fa:
            raise ParameterError("reversed_order requires enable_fa")
        if self.upsample_mode not in ("bilinear", "transposed"):
            raise ParameterError(f"unknown upsample_mode {self.upsample_mode!r}")

    @classmethod
    def variant(cls, name: str, **overrides) -> "ModelConfig":
        try:
            flags = VARIANTS[name]
        except KeyError:
            raise ParameterError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None
        return cls(**{**flags, **overrides})

    @property
    def group_order(self) -> tuple[str, ...]:
        """Group assigned to each GRU timestep."""
        return tuple(reversed(GROUP_NAMES)) if self.reversed_order else GROUP_NAMES

    @property
    def output_shape(self) -> tuple[int, int]:
        return self.height // 4, self.width // 4

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls(**parse_config_values(text, cls))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())


def parse_key_values(text: str) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_config_values(text: str, cls) -> dict:
    """Parse key=value text into typed keyword arguments for dataclass ``cls``."""
    raw = parse_key_values(text)
    types = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in types:
            continue
        kind = types[key]
        if kind in (bool, "bool"):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ParameterError(f"{key}: expected a boolean, got {value!r}")
            kwargs[key] = value.lower() in ("true", "1", "yes")
        elif kind in (int, "int"):
            kwargs[key] = int(value)
        elif kind in (float, "float"):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return kwargs


def output_affine(cfg: ModelConfig) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Fixed (scale, shift) per regression channel so raw head outputs stay O(1).

    Decoded quantities are ``shift + scale * raw``; the constants are not trained.
    """
    box = cfg.height / 8.0
    table = {
        "g1": ((4.0, 4.0, box, box), (0.0, 0.0, box, box)),
        "g2": ((0.2, 0.2, 0.2, 1.0, 1.0), (0.0, 0.0, 0.0, 0.0, 0.0)),
        "g3": ((2.0, 2.0), (2.0, 2.0)),
        "g4": ((1.0,), (-np.log(20.0),)),
    }
    return {
        g: (np.array(s, dtype=float)[:, None, None], np.array(b, dtype=float)[:, None, None])
        for g, (s, b) in table.items()
    }


HINT_SCALE = 10.0
HINT_SHIFT = 20.0


@dataclass
class NetworkOutput:
    heatmap: Tensor  # [N,C,H/4,W/4] or [C,H/4,W/4], in (0,1)
    groups: dict[str, Tensor]  # g1..g4, decoded units
    hint_vector: Tensor | None = None  # [N,H/32] meters

    def __getitem__(self, name: str) -> Tensor:
        return self.groups[name]


class FADNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        fc = cfg.feature_channels
        self.backbone = Backbone(rng, cfg.backbone_width, fc, cfg.upsample_mode, cfg.skip_fusion)
        self.keypoint_head = HeadBlock(fc, cfg.kp_head_channels, cfg.categories, rng, cfg.gn_groups)
        if cfg.enable_fa:
            self.gru = ConvGRUCell(fc, fc, rng)
        if cfg.enable_dh:
            self.depth_hint = DepthHintModule(
                cfg.backbone_width, cfg.width // 32, rng, HINT_SCALE, HINT_SHIFT
            )
        self.heads = {}
        for name in GROUP_NAMES:
            cin = fc + (1 if (name == "g4" and cfg.enable_dh) else 0)
            self.heads[name] = HeadBlock(
                cin, cfg.reg_head_channels, GROUP_CHANNELS[name], rng, cfg.gn_groups
            )
        self._affine = output_affine(cfg)

    def features(self, image: Tensor) -> dict:
        """Intermediate features; useful for tests."""
        cfg = self.cfg
        if image.shape[-3:] != (3, cfg.height, cfg.width):
            raise GeometryError(
                f"image shape {image.shape} does not match config {cfg.height}x{cfg.width}"
            )
        deep, feat = self.backbone(image)
        out = {"deep": deep, "feat": feat}
        if cfg.enable_fa:
            h = Tensor(np.zeros(feat.shape))
            states = []
            for _ in range(4):
                h = self.gru(feat, h)
                states.append(h)
            out["states"] = states
            out["head_inputs"] = dict(zip(cfg.group_order, states))
        else:
            out["head_inputs"] = {g: feat for g in GROUP_NAMES}
        if cfg.enable_dh:
            out["hint_vector"], out["hint_map"] = self.depth_hint(deep)
            out["head_inputs"]["g4"] = concat_channels(out["head_inputs"]["g4"], out["hint_map"])
        return out

    def __call__(self, image: Tensor) -> NetworkOutput:
        f = self.features(image)
        heatmap = sigmoid(self.keypoint_head(f["feat"]))
        groups = {}
        for name in GROUP_NAMES:
            scale, shift = self._affine[name]
            groups[name] = self.heads[name](f["head_inputs"][name]) * scale + shift
        return NetworkOutput(heatmap, groups, f.get("hint_vector"))

    def predict(self, image) -> NetworkOutput:
        with no_grad():
            return self(image if isinstance(image, Tensor) else Tensor(image))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise ParameterError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            if name in state:
                value = np.asarray(state[name], dtype=np.float64)
                if value.shape != p.shape:
                    raise ParameterError(f"{name}: shape {value.shape} != {p.shape}")
                p.data = value.copy()


def forward(cfg: ModelConfig, params: dict[str, np.ndarray], image: Tensor) -> NetworkOutput:
    model = FADNet(cfg)
    model.load_state_dict(params)
    return model(image)


def parameter_inventory(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Sorted (name, shape) list of every trainable tensor of ``cfg``'s model."""
    model = FADNet(cfg)
    return sorted((name, p.shape) for name, p in model.named_parameters())


def parameter_groups(model: FADNet) -> dict[str, list[str]]:
    """Named parameter groups used by the stage-wise schedule."""
    groups: dict[str, list[str]] = {}
    for name, _ in model.named_parameters():
        if name.startswith("depth_hint."):
            key = "depth_hint"
        elif name.startswith("keypoint_head."):
            key = "keypoint_head"
        elif name.startswith("heads."):
            key = "head_" + name.split(".")[1]
        elif name.startswith("gru."):
            key = "gru"
        else:
            key = "backbone"
        groups.setdefault(key, []).append(name)
    return groups
