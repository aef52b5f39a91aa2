"""
Hierarchical Lite-Conv-SSM detector

patch embedding -> 4 stages of dual-branch blocks with patch merging in between ->
detection head emitting one (confidence, x1, y1, x2, y2) tuple per class
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from autodiff import (
    Conv2d,
    LayerNorm,
    Linear,
    Module,
    Tensor,
    channel_shuffle,
    concatenate,
    maximum,
    minimum,
    reduce_mean_pool,
    split,
)
from errors import ConfigurationError, DimensionError
from ssm import D_STATE, EXPAND, LiteSS2D

logger = logging.getLogger(__name__)

NUM_CLASSES = 3
CLASS_NAMES = ("red", "blue", "black")
FEATURE_STAGE = 2  # zero-based: output of the third stage feeds feature distillation


@dataclass
class ModelConfig:
    depths: List[int] = field(default_factory=lambda: [2, 2, 4, 2])
    channels: List[int] = field(default_factory=lambda: [32, 64, 128, 256])
    num_classes: int = NUM_CLASSES
    patch_size: int = 4
    input_size: int = 224
    head_width: int = 448
    d_state: int = D_STATE
    expand: int = EXPAND
    scan_method: str = "chunked"
    name: str = "student"

    def validate(self) -> None:
        if len(self.depths) != 4 or len(self.channels) != 4:
            raise ConfigurationError("depths and channels must each list 4 stages")
        if any(d < 1 for d in self.depths):
            raise ConfigurationError(f"every stage needs at least one block, got depths {self.depths}")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigurationError(f"channels must be strictly increasing, got {self.channels}")
        if any(c % 2 for c in self.channels):
            raise ConfigurationError(f"block channels must be even to split into two branches, got {self.channels}")
        if any(b != 2 * a for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigurationError(f"patch merging doubles channels, got {self.channels}")
        stride = self.patch_size * 2**3
        if self.input_size % stride != 0:
            raise ConfigurationError(f"input_size {self.input_size} must be divisible by patch_size*8 = {stride}")
        if self.num_classes < 1 or self.head_width < 1:
            raise ConfigurationError("num_classes and head_width must be positive")

    def stage_sizes(self) -> List[int]:
        first = self.input_size // self.patch_size
        return [first // 2**i for i in range(4)]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def student_config(input_size: int = 224, scan_method: str = "chunked") -> ModelConfig:
    return ModelConfig(input_size=input_size, scan_method=scan_method, name="student")


def teacher_config(input_size: int = 224, scan_method: str = "chunked") -> ModelConfig:
    return ModelConfig(
        channels=[64, 128, 256, 512],
        head_width=896,
        input_size=input_size,
        scan_method=scan_method,
        name="teacher",
    )


def conv_macs(conv: Conv2d, out_h: int, out_w: int) -> int:
    kh, kw = conv.kernel_size
    return conv.out_channels * (conv.in_channels // conv.groups) * kh * kw * out_h * out_w


# ======================================================================
# Layers
# ======================================================================


class PatchEmbed(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.input_size = cfg.input_size
        self.proj = Conv2d(3, cfg.channels[0], cfg.patch_size, rng, stride=cfg.patch_size)
        self.norm = LayerNorm(cfg.channels[0])

    def forward(self, img: Tensor) -> Tensor:
        if img.ndim != 4 or img.shape[1] != 3:
            raise DimensionError(f"patch_embed expects [N,3,H,W], got {img.shape}")
        if img.shape[2] != self.input_size or img.shape[3] != self.input_size:
            raise DimensionError(
                f"patch_embed expects {self.input_size}x{self.input_size} input, got {img.shape[2]}x{img.shape[3]}"
            )
        return self.norm(self.proj(img))

    def macs(self) -> int:
        side = self.input_size // self.proj.stride
        return conv_macs(self.proj, side, side)


class ConvBranch(Module):
    """Depthwise 3x3 + pointwise + SiLU"""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.depthwise = Conv2d(channels, channels, 3, rng, padding=1, groups=channels)
        self.pointwise = Conv2d(channels, channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x)).silu()

    def macs(self, height: int, width: int) -> int:
        return conv_macs(self.depthwise, height, width) + conv_macs(self.pointwise, height, width)


class LiteConvSsmBlock(Module):
    """Split channels, local conv branch + global LiteSS2D branch, concat, shuffle"""

    def __init__(self, channels: int, cfg: ModelConfig, rng: np.random.Generator):
        if channels % 2:
            raise ConfigurationError(f"Lite-Conv-SSM block needs an even channel count, got {channels}")
        half = channels // 2
        self.channels = channels
        self.conv_branch = ConvBranch(half, rng)
        self.ssm_branch = LiteSS2D(half, rng, d_state=cfg.d_state, expand=cfg.expand, scan_method=cfg.scan_method)

    def forward(self, x: Tensor) -> Tensor:
        local, global_ = split(x, 2, axis=1)
        fused = concatenate([self.conv_branch(local), self.ssm_branch(global_)], axis=1)
        return channel_shuffle(fused, 2)

    def macs(self, height: int, width: int) -> int:
        return self.conv_branch.macs(height, width) + self.ssm_branch.macs(height, width)


class Stage(Module):
    def __init__(self, channels: int, depth: int, cfg: ModelConfig, rng: np.random.Generator):
        self.blocks = [LiteConvSsmBlock(channels, cfg, rng) for _ in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x

    def macs(self, height: int, width: int) -> int:
        return sum(block.macs(height, width) for block in self.blocks)


class PatchMerge(Module):
    """2x2 neighborhood concat (4C) + norm + pointwise projection to 2C"""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.channels = channels
        self.norm = LayerNorm(4 * channels)
        self.reduction = Conv2d(4 * channels, 2 * channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        n, c, height, width = x.shape
        if height % 2 or width % 2:
            raise DimensionError(f"patch_merge needs even spatial dims, got axis 2 = {height}, axis 3 = {width}")
        h2, w2 = height // 2, width // 2
        # channel blocks ordered (row 0, col 0), (row 1, col 0), (row 0, col 1), (row 1, col 1)
        grouped = x.reshape(n, c, h2, 2, w2, 2).transpose(0, 5, 3, 1, 2, 4)
        stacked = grouped.reshape(n, 4 * c, h2, w2)
        return self.reduction(self.norm(stacked))

    def macs(self, out_h: int, out_w: int) -> int:
        return conv_macs(self.reduction, out_h, out_w)


class DetectHead(Module):
    """Depthwise + pointwise conv, global mean pool, linear to num_classes * 5 logits"""

    def __init__(self, channels: int, width: int, num_classes: int, rng: np.random.Generator):
        self.num_classes = num_classes
        self.depthwise = Conv2d(channels, channels, 3, rng, padding=1, groups=channels)
        self.pointwise = Conv2d(channels, width, 1, rng)
        self.fc = Linear(width, num_classes * 5, rng)

    def forward(self, feat: Tensor) -> Tensor:
        pooled = reduce_mean_pool(self.pointwise(self.depthwise(feat)).silu())
        return self.fc(pooled).reshape(feat.shape[0], self.num_classes, 5)

    def macs(self, height: int, width: int) -> int:
        return (
            conv_macs(self.depthwise, height, width)
            + conv_macs(self.pointwise, height, width)
            + self.fc.in_features * self.fc.out_features
        )


# ======================================================================
# Model
# ======================================================================


@dataclass(frozen=True)
class Detection:
    class_id: int
    confidence: float
    bbox: Tuple[float, float, float, float]  # normalized (x1, y1, x2, y2)


@dataclass
class DetectorOutput:
    raw: Tensor  # [N, n, 5] logits: (conf, tx1, ty1, tx2, ty2)
    features: Tensor  # stage-3 feature map


class DetectorModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg, rng)
        self.stages: List[Stage] = []
        self.merges: List[PatchMerge] = []
        for i, (channels, depth) in enumerate(zip(cfg.channels, cfg.depths)):
            self.stages.append(Stage(channels, depth, cfg, rng))
            if i < 3:
                self.merges.append(PatchMerge(channels, rng))
        self.head = DetectHead(cfg.channels[-1], cfg.head_width, cfg.num_classes, rng)
        self.norm_mean = np.zeros(3)
        self.norm_std = np.ones(3)

    def forward(self, img: Tensor) -> DetectorOutput:
        x = self.patch_embed(img)
        features: Optional[Tensor] = None
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i == FEATURE_STAGE:
                features = x
            if i < 3:
                x = self.merges[i](x)
        assert features is not None
        return DetectorOutput(self.head(x), features)

    def macs(self) -> int:
        sizes = self.cfg.stage_sizes()
        total = self.patch_embed.macs()
        for i, stage in enumerate(self.stages):
            total += stage.macs(sizes[i], sizes[i])
            if i < 3:
                total += self.merges[i].macs(sizes[i + 1], sizes[i + 1])
        total += self.head.macs(sizes[3], sizes[3])
        return total

    def set_normalization(self, mean: Sequence[float], std: Sequence[float]) -> None:
        self.norm_mean = np.asarray(mean, dtype=np.float64)
        self.norm_std = np.asarray(std, dtype=np.float64)


def build_model(cfg: ModelConfig, seed: int = 0) -> DetectorModel:
    model = DetectorModel(cfg, np.random.default_rng(seed))
    logger.info(f"built {cfg.name} detector: {model.num_parameters():,} params")
    return model


def count_params_flops(model: DetectorModel) -> Tuple[int, int]:
    """Exact parameter census and FLOPs (2 x MACs) for one forward at cfg.input_size"""
    return model.num_parameters(), 2 * model.macs()


def head_outputs(raw: Tensor) -> Tuple[Tensor, Tensor]:
    """Split raw logits into confidence logits [N,n] and ordered sigmoid corners [N,n,4]"""
    conf_logits = raw[:, :, 0]
    corners = raw[:, :, 1:5].sigmoid()
    x_a, y_a, x_b, y_b = corners[:, :, 0], corners[:, :, 1], corners[:, :, 2], corners[:, :, 3]
    boxes = concatenate(
        [
            minimum(x_a, x_b).reshape(*x_a.shape, 1),
            minimum(y_a, y_b).reshape(*y_a.shape, 1),
            maximum(x_a, x_b).reshape(*x_a.shape, 1),
            maximum(y_a, y_b).reshape(*y_a.shape, 1),
        ],
        axis=2,
    )
    return conf_logits, boxes
