"""Cross-domain merging: cross attention, channel-gated fusion, level ensemble."""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigError, ShapeError
from .frequency import RAW_LIMIT
from .tensor import (BatchNorm3d, Conv3d, add, channel_scale, matmul, pool, relu, scale,
                     sigmoid)


class CrossAttention(nn.Module):
    """Mutual spatial attention between the RGB and frequency streams.

    ``U = [x, x_f]`` -> ``ReLU(BN(conv1x1x1(U)))`` -> ``sigmoid(conv3x3x3(.))``
    with two output channels; channel 0 gates ``x`` and channel 1 gates
    ``x_f``, each map shared across that stream's channels.
    """

    def __init__(self, channels: int, temporal_kernel: int = 3):
        super().__init__()
        self.conv1 = Conv3d(2 * channels, channels, 1)
        self.bn = BatchNorm3d(channels)
        kt = temporal_kernel
        self.conv3 = Conv3d(channels, 2, (kt, 3, 3), padding=(kt // 2, 1, 1))
        self.last_maps: torch.Tensor | None = None

    def maps(self, x: torch.Tensor, x_f: torch.Tensor) -> torch.Tensor:
        if x.shape != x_f.shape:
            raise ShapeError(f"cross attention needs equal shapes, got {tuple(x.shape)} and {tuple(x_f.shape)}")
        u = torch.cat([x, x_f], dim=1)
        u = relu(self.bn(self.conv1(u)))
        return sigmoid(self.conv3(u))

    def forward(self, x: torch.Tensor, x_f: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        unbatched = x.dim() == 4
        if unbatched:
            x, x_f = x.unsqueeze(0), x_f.unsqueeze(0)
        m = self.maps(x, x_f)
        self.last_maps = m.detach()
        xc = channel_scale(x, m[:, 0:1])
        xfc = channel_scale(x_f, m[:, 1:2])
        if unbatched:
            return xc[0], xfc[0]
        return xc, xfc


class FeatureFusion(nn.Module):
    """Squeeze-and-excitation style merge of two streams.

    Channel attention ``A_c = sigmoid(W2 ReLU(W1 v_avg) + W2 ReLU(W1 v_max))``
    over the concatenated ``2C`` channels, then
    ``ReLU(BN(conv1x1x1(U + U * A_c)))`` down to ``out_channels``. With
    ``gated=False`` the attention is skipped and ``U`` feeds the conv directly
    (plain concatenation).
    """

    def __init__(self, channels: int, reduction: int = 16, out_channels: int | None = None,
                 gated: bool = True):
        super().__init__()
        two_c = 2 * channels
        if gated and (reduction < 1 or two_c % reduction):
            raise ConfigError(f"reduction ratio {reduction} must divide 2C = {two_c}")
        hidden = two_c // reduction
        self.gated = gated
        if gated:
            self.W1 = nn.Parameter(torch.empty(hidden, two_c))
            self.W2 = nn.Parameter(torch.empty(two_c, hidden))
            nn.init.kaiming_uniform_(self.W1, a=5 ** 0.5)
            nn.init.kaiming_uniform_(self.W2, a=5 ** 0.5)
        self.conv = Conv3d(two_c, out_channels or channels, 1)
        self.bn = BatchNorm3d(out_channels or channels)

    def channel_attention(self, u: torch.Tensor) -> torch.Tensor:
        n, c2 = u.shape[:2]
        v_avg = pool(u, "global_avg").reshape(n, c2, 1)
        v_max = pool(u, "global_max").reshape(n, c2, 1)
        W1 = self.W1.expand(n, -1, -1)
        W2 = self.W2.expand(n, -1, -1)
        z = matmul(W2, relu(matmul(W1, v_avg))) + matmul(W2, relu(matmul(W1, v_max)))
        return sigmoid(z.reshape(n, c2))

    def pre_conv(self, x: torch.Tensor, x_f: torch.Tensor) -> torch.Tensor:
        if x.shape != x_f.shape:
            raise ShapeError(f"feature fusion needs equal shapes, got {tuple(x.shape)} and {tuple(x_f.shape)}")
        u = torch.cat([x, x_f], dim=1)
        if not self.gated:
            return u
        return add(u, channel_scale(u, self.channel_attention(u)))

    def forward(self, x: torch.Tensor, x_f: torch.Tensor) -> torch.Tensor:
        unbatched = x.dim() == 4
        if unbatched:
            x, x_f = x.unsqueeze(0), x_f.unsqueeze(0)
        out = relu(self.bn(self.conv(self.pre_conv(x, x_f))))
        return out[0] if unbatched else out


class FeatureEnsemble(nn.Module):
    """Pool low/mid fused features to the high level's grid, weight, concatenate."""

    def __init__(self):
        super().__init__()
        self.raw = nn.Parameter(torch.zeros(3))

    @property
    def lambdas(self) -> torch.Tensor:
        # clamped so the weight stays strictly inside (0, 1) even in float32
        return torch.sigmoid(self.raw.clamp(-RAW_LIMIT, RAW_LIMIT))

    def forward(self, x_low: torch.Tensor, x_mid: torch.Tensor, x_high: torch.Tensor,
                weights: torch.Tensor | None = None) -> torch.Tensor:
        """``weights`` overrides the learned lambdas with explicit scales."""
        target = tuple(x_high.shape[-3:])
        for name, t in (("low", x_low), ("mid", x_mid)):
            if any(a < b for a, b in zip(t.shape[-3:], target)):
                raise ShapeError(f"{name}-level dims {tuple(t.shape[-3:])} are smaller than high-level {target}")
        if any(a < b for a, b in zip(x_low.shape[-3:], x_mid.shape[-3:])):
            raise ShapeError(f"low-level dims {tuple(x_low.shape[-3:])} smaller than mid-level {tuple(x_mid.shape[-3:])}")
        lam = self.lambdas if weights is None else weights
        lam = lam.to(x_high.dtype)
        parts = [
            scale(pool(x_low, "adaptive_avg", target), lam[0]),
            scale(pool(x_mid, "adaptive_avg", target), lam[1]),
            scale(x_high, lam[2]),
        ]
        return torch.cat(parts, dim=-4)
