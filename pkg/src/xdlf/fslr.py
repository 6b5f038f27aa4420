"""Forgery-sensitive local regions: landmark boxes, projection, region pooling.

Box matrices are integer arrays with rows ordered
``(left eye, right eye, nose, mouth)`` and columns ``(h1, h2, w1, w2)``,
half-open on the high side. A clip carries one ``4x4`` matrix per frame.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeError

REGIONS = ("left_eye", "right_eye", "nose", "mouth")

# iBUG-68 index groups, in REGIONS order
LANDMARK_GROUPS = (
    tuple(range(36, 42)),
    tuple(range(42, 48)),
    tuple(range(27, 36)),
    tuple(range(48, 68)),
)

REFERENCE_SIZE = 224
PRESET_SIZES = (30, 30, 30, 40)


def preset_box_sizes(img_h: int, img_w: int) -> tuple[int, ...]:
    """Preset box sizes rescaled from the 224x224 reference crop.

    At 224x224 this is exactly ``(30, 30, 30, 40)``.
    """
    s = min(img_h, img_w) / REFERENCE_SIZE
    return tuple(max(2, int(np.floor(p * s + 0.5))) for p in PRESET_SIZES)


def extract_boxes(landmarks, img_h: int, img_w: int, sizes: Sequence[int] | None = None) -> np.ndarray:
    """Box matrix for one frame (``[68, 2]`` landmarks) or a clip (``[d, 68, 2]``).

    Landmarks are ``(x, y)`` = (width, height) pixel coordinates. Each box is
    centred on the mean of its landmark group and shifted inward at image
    borders so its preset size is preserved.
    """
    lm = np.asarray(landmarks, dtype=np.float64)
    single = lm.ndim == 2
    if single:
        lm = lm[None]
    if lm.ndim != 3 or lm.shape[1:] != (68, 2):
        raise ShapeError(f"landmarks must be [68, 2] or [d, 68, 2], got {lm.shape}")
    if sizes is None:
        sizes = preset_box_sizes(img_h, img_w)
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 4:
        raise ConfigError(f"need four box sizes, got {sizes}")
    for s in sizes:
        if s > img_h or s > img_w:
            raise ConfigError(f"preset box size {s} exceeds image {img_h}x{img_w}")
    lm = np.stack([np.clip(lm[..., 0], 0, img_w - 1), np.clip(lm[..., 1], 0, img_h - 1)], axis=-1)

    out = np.empty((lm.shape[0], 4, 4), dtype=np.int64)
    for r, (idx, size) in enumerate(zip(LANDMARK_GROUPS, sizes)):
        cx = lm[:, idx, 0].mean(axis=1)
        cy = lm[:, idx, 1].mean(axis=1)
        h1 = np.floor(cy - size / 2 + 0.5).astype(np.int64)
        w1 = np.floor(cx - size / 2 + 0.5).astype(np.int64)
        h1 = np.clip(h1, 0, img_h - size)
        w1 = np.clip(w1, 0, img_w - size)
        out[:, r] = np.stack([h1, h1 + size, w1, w1 + size], axis=1)
    return out[0] if single else out


def project_boxes(boxes, from_hw: tuple[int, int], to_hw: tuple[int, int]) -> np.ndarray:
    """Rescale boxes from one grid to a smaller one.

    Low edges round down, high edges round up, and every projected box keeps
    at least one cell per axis.
    """
    b = np.asarray(boxes, dtype=np.int64)
    fh, fw = from_hw
    th, tw = to_hw
    if th > fh or tw > fw:
        raise ShapeError(f"cannot project boxes from {from_hw} up to {to_hw}")
    out = np.empty_like(b)

    def lo(v, t, f):
        return (v * t) // f

    def hi(v, t, f):
        return -((-v * t) // f)

    out[..., 0] = lo(b[..., 0], th, fh)
    out[..., 1] = hi(b[..., 1], th, fh)
    out[..., 2] = lo(b[..., 2], tw, fw)
    out[..., 3] = hi(b[..., 3], tw, fw)
    for a, z, n in ((0, 1, th), (2, 3, tw)):
        empty = out[..., z] <= out[..., a]
        out[..., z] = np.where(empty, out[..., a] + 1, out[..., z])
        over = out[..., z] > n
        out[..., a] = np.where(over, n - 1, out[..., a])
        out[..., z] = np.where(over, n, out[..., z])
    return out


def _check_in_bounds(boxes: np.ndarray, h: int, w: int) -> None:
    bad = ((boxes[..., 0] < 0) | (boxes[..., 1] > h) | (boxes[..., 0] >= boxes[..., 1])
           | (boxes[..., 2] < 0) | (boxes[..., 3] > w) | (boxes[..., 2] >= boxes[..., 3]))
    if bad.any():
        raise ShapeError(f"box outside feature bounds {h}x{w}: {boxes[bad][0].tolist()}")


def region_pool(x: torch.Tensor, boxes, out_h: int = 7, out_w: int = 7) -> torch.Tensor:
    """Crop each region per frame and adaptive-max-pool it to ``out_h x out_w``.

    ``x`` is ``[c, d, h, w]`` with boxes ``[d, 4, 4]`` (result ``[4, c, d, H, W]``),
    or batched ``[n, c, d, h, w]`` with boxes ``[n, d, 4, 4]`` (result
    ``[n, 4, c, d, H, W]``). Boxes must already be on the ``h x w`` grid. Boxes
    smaller than the output grid are pooled with overlapping bins, as in ROI
    pooling.
    """
    b = np.asarray(boxes, dtype=np.int64)
    unbatched = x.dim() == 4
    if unbatched:
        x = x.unsqueeze(0)
        b = b[None]
    if x.dim() != 5:
        raise ShapeError(f"region_pool expects [c,d,h,w] or [n,c,d,h,w], got {tuple(x.shape)}")
    n, c, d, h, w = x.shape
    if b.shape != (n, d, 4, 4):
        raise ShapeError(f"region_pool boxes must be {(n, d, 4, 4)}, got {b.shape}")
    _check_in_bounds(b, h, w)
    # crops of equal size are gathered and pooled together
    flat = b.reshape(-1, 4)                                   # rows ordered (i, t, r)
    ii, tt, rr = np.unravel_index(np.arange(flat.shape[0]), (n, d, 4))
    sizes = np.stack([flat[:, 1] - flat[:, 0], flat[:, 3] - flat[:, 2]], axis=1)
    pooled = [None] * flat.shape[0]
    for bh, bw in np.unique(sizes, axis=0):
        sel = np.nonzero((sizes[:, 0] == bh) & (sizes[:, 1] == bw))[0]
        hh = torch.as_tensor(flat[sel, 0][:, None] + np.arange(bh))          # [g, bh]
        ww = torch.as_tensor(flat[sel, 2][:, None] + np.arange(bw))          # [g, bw]
        xi = x.permute(0, 2, 3, 4, 1)                                        # [n, d, h, w, c]
        crops = xi[torch.as_tensor(ii[sel])[:, None, None], torch.as_tensor(tt[sel])[:, None, None],
                   hh[:, :, None], ww[:, None, :]]                           # [g, bh, bw, c]
        p = F.adaptive_max_pool2d(crops.permute(0, 3, 1, 2), (out_h, out_w))  # [g, c, H, W]
        for k, j in enumerate(sel):
            pooled[j] = p[k]
    out = torch.stack(pooled, dim=0).reshape(n, d, 4, c, out_h, out_w).permute(0, 2, 3, 1, 4, 5)
    return out[0] if unbatched else out


# ---------------------------------------------------------------------------
# landmark CSV: one row per frame, x0,y0,...,x67,y67
# ---------------------------------------------------------------------------

def write_landmarks_csv(path, landmarks) -> None:
    lm = np.asarray(landmarks, dtype=np.float64)
    if lm.ndim != 3 or lm.shape[1:] != (68, 2):
        raise ShapeError(f"landmarks must be [d, 68, 2], got {lm.shape}")
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        for frame in lm:
            wr.writerow([repr(float(v)) for v in frame.reshape(-1)])


def read_landmarks_csv(path) -> np.ndarray:
    rows = []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if len(row) != 136:
                raise ValueError(f"{path}: expected 136 values per row, got {len(row)}")
            rows.append([float(v) for v in row])
    return np.asarray(rows, dtype=np.float64).reshape(-1, 68, 2)
