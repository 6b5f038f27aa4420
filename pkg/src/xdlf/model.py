"""Two-stream spatio-temporal detector with region-guided enhancement.

Wiring per level (low, mid, high): both stream stages run; at the low level
each stream's features pass through its own :class:`~xdlf.fgfe.FGFE`; cross
attention re-weights both streams and its outputs continue down the streams;
feature fusion branches off to produce that level's fused features. The three
fused levels go through the ensemble, 3D global average pooling and a
fully connected layer to one logit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ShapeError
from .fgfe import FGFE
from .frequency import BandFilters, BandWeights, band_components, build_band_filters, decompose
from .fslr import project_boxes
from .fusion import CrossAttention, FeatureEnsemble, FeatureFusion
from .tensor import BatchNorm3d, Conv3d, matmul, pool, read_tensor, relu, write_tensor

VARIANTS = ("full", "no_fgfe", "no_cross_attention", "concat_fusion", "freq_freq", "rgb_rgb",
            "no_time_2d")
LEVELS = ("low", "mid", "high")


@dataclass(frozen=True)
class BackboneConfig:
    stem_channels: int = 8
    widths: tuple[int, int, int] = (16, 32, 64)
    blocks: tuple[int, int, int] = (1, 1, 1)
    strides: tuple[tuple[int, int, int], ...] = ((1, 1, 1), (2, 2, 2), (2, 2, 2))
    stem_stride: tuple[int, int, int] = (1, 2, 2)

    def __post_init__(self):
        if len(self.widths) != 3 or len(self.blocks) != 3 or len(self.strides) != 3:
            raise ConfigError("backbone needs exactly three stages (low, mid, high taps)")
        if not all(a < b for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigError(f"stage widths must strictly increase, got {self.widths}")
        if min(self.blocks) < 1 or self.stem_channels < 1:
            raise ConfigError("block counts and stem width must be positive")


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    variant: str = "full"
    fslr_pool: int = 7
    reduction: int = 16

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")

    @property
    def temporal(self) -> bool:
        return self.variant != "no_time_2d"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        bb = dict(d.get("backbone", {}))
        for k in ("widths", "blocks", "stem_stride"):
            if k in bb:
                bb[k] = tuple(bb[k])
        if "strides" in bb:
            bb["strides"] = tuple(tuple(s) for s in bb["strides"])
        rest = {k: v for k, v in d.items() if k != "backbone"}
        return cls(backbone=BackboneConfig(**bb), **rest)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride, kt: int):
        super().__init__()
        pad = (kt // 2, 1, 1)
        self.conv_a = Conv3d(cin, cout, (kt, 3, 3), stride, pad, bias=False)
        self.bn_a = BatchNorm3d(cout)
        self.conv_b = Conv3d(cout, cout, (kt, 3, 3), 1, pad, bias=False)
        self.bn_b = BatchNorm3d(cout)
        if cin != cout or tuple(stride) != (1, 1, 1):
            self.short_conv = Conv3d(cin, cout, 1, stride, bias=False)
            self.short_bn = BatchNorm3d(cout)
        else:
            self.short_conv = None

    def forward(self, x):
        y = relu(self.bn_a(self.conv_a(x)))
        y = self.bn_b(self.conv_b(y))
        s = x if self.short_conv is None else self.short_bn(self.short_conv(x))
        return relu(y + s)


class Stream(nn.Module):
    """One backbone: stem plus three stages of basic residual blocks."""

    def __init__(self, in_channels: int, cfg: BackboneConfig, temporal: bool = True):
        super().__init__()
        kt = 3 if temporal else 1

        def st(s):
            return tuple(s) if temporal else (1, s[1], s[2])

        self.stem_conv = Conv3d(in_channels, cfg.stem_channels, (kt, 3, 3), st(cfg.stem_stride),
                                (kt // 2, 1, 1), bias=False)
        self.stem_bn = BatchNorm3d(cfg.stem_channels)
        stages = []
        cin = cfg.stem_channels
        for width, nblocks, stride in zip(cfg.widths, cfg.blocks, cfg.strides):
            blocks = [BasicBlock(cin, width, st(stride), kt)]
            blocks += [BasicBlock(width, width, (1, 1, 1), kt) for _ in range(nblocks - 1)]
            stages.append(nn.Sequential(*blocks))
            cin = width
        self.stages = nn.ModuleList(stages)

    def stem(self, x):
        return relu(self.stem_bn(self.stem_conv(x)))


class XdlfModel(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config = config or ModelConfig()
        v = config.variant
        bb = config.backbone
        temporal = config.temporal
        kt = 3 if temporal else 1
        self.uses_frequency = v != "rgb_rgb"
        self.in_a = 9 if v == "freq_freq" else 3
        self.in_b = 3 if v == "rgb_rgb" else 9

        self.band_weights = BandWeights() if self.uses_frequency else None
        self.stream_a = Stream(self.in_a, bb, temporal)
        self.stream_b = Stream(self.in_b, bb, temporal)
        c_low = bb.widths[0]
        pool_hw = (config.fslr_pool, config.fslr_pool)
        if v == "no_fgfe":
            self.fgfe_a = self.fgfe_b = None
        else:
            self.fgfe_a = FGFE(c_low, pool_hw)
            self.fgfe_b = FGFE(c_low, pool_hw)
        if v == "no_cross_attention":
            self.cross = None
        else:
            self.cross = nn.ModuleList(CrossAttention(c, kt) for c in bb.widths)
        self.fusion = nn.ModuleList(
            FeatureFusion(c, config.reduction, gated=v != "concat_fusion") for c in bb.widths)
        self.ensemble = FeatureEnsemble()
        self.fc_weight = nn.Parameter(torch.randn(1, sum(bb.widths)) * 1e-3)
        self.fc_bias = nn.Parameter(torch.zeros(1))
        self._filters: dict[tuple[int, int], BandFilters] = {}

    # ------------------------------------------------------------------
    def band_filters(self, h: int, w: int) -> BandFilters:
        if (h, w) not in self._filters:
            self._filters[(h, w)] = build_band_filters(h, w)
        return self._filters[(h, w)]

    def frequency_map(self, clip_rgb: torch.Tensor) -> torch.Tensor:
        """Band-weighted frequency map of batched clips ``[n, 3, d, h, w]``."""
        h, w = clip_rgb.shape[-2:]
        return decompose(clip_rgb, self.band_filters(h, w), self.band_weights, channel_dim=1)

    def forward(self, clip_rgb: torch.Tensor, boxes, clip_freq: torch.Tensor | None = None,
                trace: dict | None = None) -> torch.Tensor:
        """Logits for clips ``[n, 3, d, h, w]`` (or one clip ``[3, d, h, w]``).

        ``boxes`` are per-frame box matrices in image coordinates,
        ``[n, d, 4, 4]`` (or ``[d, 4, 4]``). ``clip_freq`` optionally supplies
        a precomputed frequency map; by default it is computed with this
        model's band weights. When ``trace`` is a dict it receives the
        intermediate maps used by inspection tools.
        """
        boxes = np.asarray(boxes, dtype=np.int64)
        unbatched = clip_rgb.dim() == 4
        if unbatched:
            clip_rgb = clip_rgb.unsqueeze(0)
            boxes = boxes[None]
            if clip_freq is not None:
                clip_freq = clip_freq.unsqueeze(0)
        if clip_rgb.dim() != 5 or clip_rgb.shape[1] != 3:
            raise ShapeError(f"clip_rgb must be [n, 3, d, h, w], got {tuple(clip_rgb.shape)}")
        n, _, d, h, w = clip_rgb.shape
        if boxes.shape != (n, d, 4, 4):
            raise ShapeError(f"boxes {boxes.shape} do not match clips: expected {(n, d, 4, 4)} "
                             "(temporal length mismatch?)")

        if self.uses_frequency and clip_freq is None:
            clip_freq = self.frequency_map(clip_rgb)
        v = self.config.variant
        a = clip_freq if v == "freq_freq" else clip_rgb
        b = clip_rgb if v == "rgb_rgb" else clip_freq
        if trace is not None and clip_freq is not None:
            trace["frequency_map"] = clip_freq.detach()

        if not self.config.temporal:
            # fold time into the batch axis; every frame becomes a depth-1 clip
            a = a.transpose(1, 2).reshape(n * d, a.shape[1], 1, h, w)
            b = b.transpose(1, 2).reshape(n * d, b.shape[1], 1, h, w)
            boxes = boxes.reshape(n * d, 1, 4, 4)

        a = self.stream_a.stem(a)
        b = self.stream_b.stem(b)
        fused = []
        for lvl in range(3):
            a = self.stream_a.stages[lvl](a)
            b = self.stream_b.stages[lvl](b)
            if lvl == 0 and self.fgfe_a is not None:
                pb = project_boxes(boxes, (h, w), tuple(a.shape[-2:]))
                a = self.fgfe_a(a, pb)
                b = self.fgfe_b(b, pb)
                if trace is not None:
                    trace["fgfe_a"] = self.fgfe_a.last_attention
                    trace["fgfe_b"] = self.fgfe_b.last_attention
            if self.cross is not None:
                a, b = self.cross[lvl](a, b)
                if trace is not None:
                    trace[f"cross_{LEVELS[lvl]}"] = self.cross[lvl].last_maps
            fused.append(self.fusion[lvl](a, b))

        e = self.ensemble(*fused)
        g = pool(e, "global_avg").reshape(e.shape[0], e.shape[1])
        if not self.config.temporal:
            g = g.reshape(n, d, -1).mean(dim=1)
        logits = matmul(g, self.fc_weight.T).reshape(n) + self.fc_bias
        if trace is not None:
            if not self.config.temporal:
                for k in [k for k in trace if k.startswith(("fgfe", "cross"))]:
                    m = trace[k]
                    trace[k] = m.reshape(n, d, *m.shape[1:]).transpose(1, 2).squeeze(3)
            trace["ensemble"] = e.detach()
        return logits[0] if unbatched else logits


def predict_prob(model: XdlfModel, clip_rgb: torch.Tensor, boxes, clip_freq=None) -> torch.Tensor:
    """Sigmoid of the logit, computed with eval-mode normalization."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            return torch.sigmoid(model(clip_rgb, boxes, clip_freq))
    finally:
        model.train(was_training)


def ablate(base: XdlfModel | ModelConfig, variant: str) -> XdlfModel:
    """Build ``variant`` from a config, or from a model whose compatible weights are copied."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; valid: {', '.join(VARIANTS)}")
    if isinstance(base, ModelConfig):
        return XdlfModel(replace(base, variant=variant))
    model = XdlfModel(replace(base.config, variant=variant))
    src = base.state_dict()
    dst = model.state_dict()
    dst.update({k: v for k, v in src.items() if k in dst and dst[k].shape == v.shape})
    model.load_state_dict(dst)
    return model.to(next(base.parameters()).dtype)


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# ---------------------------------------------------------------------------
# ".ckpt" checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"XDLF"
CKPT_VERSION = 1


def write_checkpoint(path, tensors: dict[str, torch.Tensor]) -> None:
    with open(Path(path), "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(tensors)))
        for name, t in tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            write_tensor(fh, t)


def read_checkpoint(path) -> dict[str, torch.Tensor]:
    with open(Path(path), "rb") as fh:
        if fh.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: not an XDLF checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", fh.read(2))
            name = fh.read(ln).decode("utf-8")
            out[name] = read_tensor(fh)
        return out


def config_path(ckpt_path) -> Path:
    return Path(ckpt_path).with_suffix(".json")


def save_model(model: XdlfModel, path) -> None:
    """Write ``path`` (weights, running stats, raw band/ensemble scalars) and its config sidecar."""
    write_checkpoint(path, {k: v for k, v in model.state_dict().items()})
    config_path(path).write_text(json.dumps(model.config.to_dict(), indent=2))


def load_model(path) -> XdlfModel:
    cfg = ModelConfig.from_dict(json.loads(config_path(path).read_text()))
    model = XdlfModel(cfg)
    state = read_checkpoint(path)
    dtype = next(iter(state.values())).dtype
    model.to(dtype)
    model.load_state_dict(state)
    model.eval()
    return model
