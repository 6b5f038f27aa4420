"""Multi-band DCT decomposition of RGB frames into a 9-channel frequency map.

Each color channel is transformed with the orthonormal 2D DCT, split into
low/mid/high bands by anti-diagonal masks (``u + v`` thresholds at 1/16 and
1/8 of ``h + w``), inverted back to the pixel domain, and scaled by a
learnable band weight in ``(0, 1)``. Output channel order is
``[low R, low G, low B, mid R, mid G, mid B, high R, high G, high B]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .tensor import dct2d, idct2d

BANDS = ("low", "mid", "high")
RAW_LIMIT = 15.0


@dataclass(frozen=True)
class BandFilters:
    f_low: np.ndarray
    f_mid: np.ndarray
    f_high: np.ndarray
    tau1: int
    tau2: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.f_low.shape

    def stack(self, dtype=torch.float32, device=None) -> torch.Tensor:
        """Masks as a ``[3, h, w]`` tensor in band order."""
        return torch.as_tensor(np.stack([self.f_low, self.f_mid, self.f_high]), dtype=dtype,
                               device=device)


def build_band_filters(h: int, w: int) -> BandFilters:
    if h < 2 or w < 2:
        raise ValueError(f"band filters need h, w >= 2, got {(h, w)}")
    tau1 = math.ceil((h + w) / 16)
    tau2 = math.ceil((h + w) / 8)
    s = np.add.outer(np.arange(h), np.arange(w))
    low = (s < tau1).astype(np.float64)
    mid = ((s >= tau1) & (s < tau2)).astype(np.float64)
    high = (s >= tau2).astype(np.float64)
    return BandFilters(low, mid, high, tau1, tau2)


class BandWeights(nn.Module):
    """Learnable band weights; ``alpha = sigmoid(raw)`` keeps each in (0, 1)."""

    def __init__(self):
        super().__init__()
        self.raw = nn.Parameter(torch.zeros(3))

    @property
    def alpha(self) -> torch.Tensor:
        # clamped so the weight stays strictly inside (0, 1) even in float32
        return torch.sigmoid(self.raw.clamp(-RAW_LIMIT, RAW_LIMIT))


def band_components(x: torch.Tensor, filters: BandFilters) -> list[torch.Tensor]:
    """Unweighted spatial components ``[Y_low, Y_mid, Y_high]``, each shaped like ``x``.

    Transforms run in float64 and each component is rounded back to ``x``'s
    dtype once, so the float32 components still sum to ``x`` within 1e-6.
    """
    if tuple(x.shape[-2:]) != filters.shape:
        raise ValueError(f"filters built for {filters.shape}, input is {tuple(x.shape[-2:])}")
    spec = dct2d(x.to(torch.float64))
    masks = filters.stack(torch.float64, x.device)
    return [idct2d(spec * m).to(x.dtype) for m in masks]


def decompose(x: torch.Tensor, filters: BandFilters, weights: BandWeights | torch.Tensor | None = None,
              channel_dim: int = -3) -> torch.Tensor:
    """Frequency map of ``x``.

    ``x`` holds 3 color channels on ``channel_dim`` and the image plane on the
    last two axes, e.g. ``[3, h, w]`` or ``[n, 3, d, h, w]`` with
    ``channel_dim=1``. ``weights`` may be a :class:`BandWeights`, a length-3
    tensor of band scales, or ``None`` for unit scales.
    """
    if x.shape[channel_dim] != 3:
        raise ValueError(f"expected 3 color channels on axis {channel_dim}, got shape {tuple(x.shape)}")
    comps = band_components(x, filters)
    if weights is None:
        alpha = torch.ones(3, dtype=x.dtype, device=x.device)
    elif isinstance(weights, BandWeights):
        alpha = weights.alpha.to(x.dtype)
    else:
        alpha = weights.to(x.dtype)
    return torch.cat([alpha[i] * comps[i] for i in range(3)], dim=channel_dim)
