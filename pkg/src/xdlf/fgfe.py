"""Region-guided enhancement of low-level stream features."""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .errors import ShapeError
from .fslr import region_pool
from .tensor import BatchNorm3d, Conv3d, add, bilinear_upsample2d, matmul, mul, relu


class FGFE(nn.Module):
    """Attention from region-pooled features back onto the full feature map.

    For features ``x [n, c, d, h, w]`` and boxes already projected to
    ``h x w``:

    1. ``R`` = region pooling of ``x`` to ``[n, 4, c, d, H, W]``.
    2. ``X'`` = temporal mean of ``x``, flattened to ``[n, c, h*w]``;
       ``R'`` = ``R`` flattened row-major to ``[n, 4c, d*H*W]``.
    3. ``S = X'^T W R'`` (``[n, hw, dHW]``) and ``A = X' S`` (``[n, c, dHW]``),
       with no normalization.
    4. ``A`` is reshaped to ``[n, c, d, H, W]``, bilinearly resized to
       ``h x w``, and passed through a 1x1x1 conv, BN and ReLU to give ``A'``.
    5. Output ``x + x * A'``.

    ``last_attention`` keeps the most recent ``A'`` (detached) for inspection.
    """

    def __init__(self, channels: int, pool_size: tuple[int, int] = (7, 7),
                 conv_init_std: float = 1e-2, bn_gamma_init: float = 0.1):
        super().__init__()
        self.channels = channels
        self.pool_size = tuple(pool_size)
        bound = 1.0 / math.sqrt(4 * channels)
        self.W = nn.Parameter(torch.empty(channels, 4 * channels).uniform_(-bound, bound))
        self.conv1 = Conv3d(channels, channels, 1, init_std=conv_init_std)
        self.bn = BatchNorm3d(channels, gamma_init=bn_gamma_init)
        self.last_attention: torch.Tensor | None = None

    def attention(self, x: torch.Tensor, boxes) -> torch.Tensor:
        """Return ``A'`` for batched input (see class docstring)."""
        n, c, d, h, w = x.shape
        if c != self.W.shape[0]:
            raise ShapeError(f"FGFE built for {self.W.shape[0]} channels, input has {c}")
        ph, pw = self.pool_size
        R = region_pool(x, boxes, ph, pw)                       # [n, 4, c, d, H, W]
        Xp = x.mean(dim=2).reshape(n, c, h * w)                 # [n, c, hw]
        Rp = R.reshape(n, 4 * c, d * ph * pw)                   # [n, 4c, dHW]
        S = matmul(matmul(Xp.transpose(1, 2), self.W.expand(n, -1, -1)), Rp)
        A = matmul(Xp, S).reshape(n, c, d, ph, pw)
        A = bilinear_upsample2d(A, h, w)
        return relu(self.bn(self.conv1(A)))

    def forward(self, x: torch.Tensor, boxes) -> torch.Tensor:
        unbatched = x.dim() == 4
        if unbatched:
            x = x.unsqueeze(0)
            boxes = np.asarray(boxes)[None]
        if x.dim() != 5:
            raise ShapeError(f"FGFE expects [c,d,h,w] or [n,c,d,h,w], got {tuple(x.shape)}")
        a = self.attention(x, boxes)
        self.last_attention = a.detach()
        out = add(x, mul(x, a))
        return out[0] if unbatched else out
