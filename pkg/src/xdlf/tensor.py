"""Differentiable kernel set and tensor serialization.

Every model component in this package is composed from the functions below.
Tensors are ``torch.Tensor`` values; autograd supplies reverse-mode gradients.
Kernels accept either an unbatched ``[c, ...]`` layout or a batched
``[n, c, ...]`` layout where noted, and validate shapes up front so that a
mismatch surfaces as :class:`~xdlf.errors.ShapeError` rather than a backend
error deep inside the call.

Conventions fixed here:

* DCT is the orthonormal type-II transform, applied separably to the last two
  axes (so Parseval holds and ``idct2d`` is the exact inverse).
* Bilinear upsampling uses the align-corners convention.
* Adaptive pooling bins on an axis of length ``n`` into ``t`` bins use
  ``[floor(i*n/t), ceil((i+1)*n/t))``.
"""

from __future__ import annotations

import functools
import math
import struct
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError

__all__ = [
    "conv3d",
    "batch_norm3d",
    "relu",
    "sigmoid",
    "add",
    "mul",
    "scale",
    "channel_scale",
    "pool",
    "bilinear_upsample2d",
    "dct_matrix",
    "dct2d",
    "idct2d",
    "matmul",
    "backward",
    "zero_grad",
    "Conv3d",
    "BatchNorm3d",
    "write_tensor",
    "read_tensor",
    "save_tensor",
    "load_tensor",
]


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(i) for i in v)
    if len(t) != 3:
        raise ShapeError(f"expected an int or a 3-tuple, got {v!r}")
    return t


# ---------------------------------------------------------------------------
# convolution / normalization
# ---------------------------------------------------------------------------

def conv3d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None,
           stride=1, padding=0) -> torch.Tensor:
    """3D cross-correlation.

    ``x`` is ``[c_in, d, h, w]`` or ``[n, c_in, d, h, w]``; ``weight`` is
    ``[c_out, c_in, kd, kh, kw]``. Output spatial size per axis is
    ``floor((n + 2p - k) / s) + 1``.
    """
    if weight.dim() != 5:
        raise ShapeError(f"conv3d weight must be 5-D, got shape {tuple(weight.shape)}")
    unbatched = x.dim() == 4
    if unbatched:
        x = x.unsqueeze(0)
    if x.dim() != 5:
        raise ShapeError(f"conv3d input must be 4-D or 5-D, got shape {tuple(x.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv3d channel mismatch: input has {x.shape[1]} channels "
            f"(shape {tuple(x.shape)}), weight expects {weight.shape[1]} "
            f"(shape {tuple(weight.shape)})")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv3d bias must have shape ({weight.shape[0]},), got {tuple(bias.shape)}")
    stride = _triple(stride)
    padding = _triple(padding)
    if min(stride) < 1:
        raise ShapeError(f"conv3d stride must be >= 1, got {stride}")
    for ax in range(3):
        if x.shape[2 + ax] + 2 * padding[ax] < weight.shape[2 + ax]:
            raise ShapeError(
                f"conv3d kernel {tuple(weight.shape[2:])} does not fit padded input "
                f"{tuple(x.shape[2:])} with padding {padding}")
    out = F.conv3d(x, weight, bias, stride=stride, padding=padding)
    return out.squeeze(0) if unbatched else out


def batch_norm3d(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor,
                 running_mean: torch.Tensor, running_var: torch.Tensor,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> torch.Tensor:
    """Per-channel normalization of ``x`` shaped ``[n, c, d, h, w]``.

    In training mode the batch mean and biased variance over ``(n, d, h, w)``
    normalize the input, and the running buffers are updated in place:
    ``running = (1 - momentum) * running + momentum * batch`` (the variance
    update uses the unbiased estimate). Eval mode normalizes with the running
    buffers.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if x.dim() != 5:
        raise ShapeError(f"batch_norm3d expects [n, c, d, h, w], got {tuple(x.shape)}")
    c = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta),
                    ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (c,):
            raise ShapeError(f"batch_norm3d {name} must have shape ({c},), got {tuple(t.shape)}")
    shape = (1, c, 1, 1, 1)
    if training:
        count = x.numel() // c
        if count <= 1:
            raise ValueError(
                "batch_norm3d in training mode needs more than one value per channel; "
                f"got input of shape {tuple(x.shape)}")
        dims = (0, 2, 3, 4)
        mean = x.mean(dim=dims)
        var = x.var(dim=dims, unbiased=False)
        with torch.no_grad():
            running_mean.mul_(1 - momentum).add_(momentum * mean.detach())
            running_var.mul_(1 - momentum).add_(momentum * var.detach() * count / (count - 1))
    else:
        mean, var = running_mean, running_var
    xhat = (x - mean.view(shape)) / torch.sqrt(var.view(shape) + eps)
    return xhat * gamma.view(shape) + beta.view(shape)


# ---------------------------------------------------------------------------
# pointwise
# ---------------------------------------------------------------------------

def _same_shape(op: str, x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"{op}: shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def add(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    _same_shape("add", x, y)
    return x + y


def mul(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Element-wise product of two identically shaped tensors."""
    _same_shape("mul", x, y)
    return x * y


def scale(x: torch.Tensor, s) -> torch.Tensor:
    """Multiply by a scalar (a Python number or a 0-d tensor)."""
    if isinstance(s, torch.Tensor) and s.dim() != 0:
        raise ShapeError(f"scale expects a scalar, got shape {tuple(s.shape)}")
    return x * s


def channel_scale(x: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    """Scale ``x [n, c, ...]`` by per-sample, per-channel factors.

    ``s`` is ``[n, c]`` (one factor per channel) or ``[n, 1, ...]`` matching
    ``x``'s trailing axes (one map shared by every channel). This is the only
    broadcasting the engine performs.
    """
    if s.dim() == 2:
        if s.shape != x.shape[:2]:
            raise ShapeError(f"channel_scale: factors {tuple(s.shape)} do not match {tuple(x.shape[:2])}")
        return x * s.reshape(*s.shape, *([1] * (x.dim() - 2)))
    if s.dim() == x.dim() and s.shape[1] == 1 and s.shape[0] == x.shape[0] and s.shape[2:] == x.shape[2:]:
        return x * s
    raise ShapeError(f"channel_scale: cannot apply factors {tuple(s.shape)} to {tuple(x.shape)}")


# ---------------------------------------------------------------------------
# pooling / resampling
# ---------------------------------------------------------------------------

_ADAPTIVE = {
    ("adaptive_avg", 1): F.adaptive_avg_pool1d,
    ("adaptive_avg", 2): F.adaptive_avg_pool2d,
    ("adaptive_avg", 3): F.adaptive_avg_pool3d,
    ("adaptive_max", 1): F.adaptive_max_pool1d,
    ("adaptive_max", 2): F.adaptive_max_pool2d,
    ("adaptive_max", 3): F.adaptive_max_pool3d,
}


def adaptive_bins(n: int, t: int) -> list[tuple[int, int]]:
    """Bin edges used by adaptive pooling of an axis of length ``n`` into ``t`` bins."""
    return [((i * n) // t, -((-(i + 1) * n) // t)) for i in range(t)]


def pool(x: torch.Tensor, kind: str, target_dims: Sequence[int] | None = None,
         spatial_ndim: int | None = None, allow_upsample: bool = False) -> torch.Tensor:
    """Adaptive or global pooling over the trailing spatial axes of ``x``.

    ``kind`` is one of ``adaptive_avg``, ``adaptive_max``, ``global_avg``,
    ``global_max``. Adaptive kinds pool the last ``len(target_dims)`` axes;
    global kinds reduce the last ``spatial_ndim`` axes (default 3) to size 1.
    A target larger than the input is rejected unless ``allow_upsample``.
    """
    if kind in ("global_avg", "global_max"):
        k = 3 if spatial_ndim is None else spatial_ndim
        if k < 1 or k > x.dim():
            raise ShapeError(f"pool: cannot reduce {k} axes of shape {tuple(x.shape)}")
        dims = tuple(range(x.dim() - k, x.dim()))
        if kind == "global_avg":
            return x.mean(dim=dims, keepdim=True)
        return x.amax(dim=dims, keepdim=True)
    if kind not in ("adaptive_avg", "adaptive_max"):
        raise ValueError(f"unknown pool kind {kind!r}")
    if target_dims is None:
        raise ValueError("adaptive pooling needs target_dims")
    target = tuple(int(t) for t in target_dims)
    k = len(target)
    if not 1 <= k <= 3 or k > x.dim():
        raise ShapeError(f"pool: unsupported target {target} for shape {tuple(x.shape)}")
    spatial = tuple(x.shape[-k:])
    if min(target) < 1:
        raise ShapeError(f"pool: target dims must be >= 1, got {target}")
    if not allow_upsample and any(t > n for t, n in zip(target, spatial)):
        raise ShapeError(f"pool: target {target} exceeds input spatial dims {spatial}")
    lead = x.shape[:-k]
    flat = x.reshape(-1, 1, *spatial)
    fn = _ADAPTIVE[(kind, k)]
    out = fn(flat, target)
    if kind == "adaptive_max":
        # the 1-d/2-d/3-d max variants return values only when return_indices is False
        out = out[0] if isinstance(out, tuple) else out
    return out.reshape(*lead, *target)


def bilinear_upsample2d(x: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Align-corners bilinear resampling of the last two axes."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_upsample2d: output size must be >= 1, got {(out_h, out_w)}")
    if x.dim() < 2:
        raise ShapeError(f"bilinear_upsample2d: need at least 2 axes, got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    lead = x.shape[:-2]
    flat = x.reshape(-1, 1, h, w)
    if (h, w) == (1, 1):
        out = flat.expand(-1, -1, out_h, out_w)
    else:
        out = F.interpolate(flat, size=(out_h, out_w), mode="bilinear", align_corners=True)
    return out.reshape(*lead, out_h, out_w)


# ---------------------------------------------------------------------------
# DCT
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def _dct_matrix_np(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    m[0] /= math.sqrt(2.0)
    return m


def dct_matrix(n: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """Orthonormal DCT-II basis; row ``k`` holds frequency ``k``."""
    if n < 1:
        raise ShapeError(f"dct size must be >= 1, got {n}")
    return torch.as_tensor(_dct_matrix_np(n), dtype=dtype, device=device)


def dct2d(x: torch.Tensor) -> torch.Tensor:
    """Orthonormal 2D DCT-II over the last two axes."""
    h, w = x.shape[-2:]
    ch = dct_matrix(h, x.dtype, x.device)
    cw = dct_matrix(w, x.dtype, x.device)
    return ch @ x @ cw.T


def idct2d(x: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`dct2d`."""
    h, w = x.shape[-2:]
    ch = dct_matrix(h, x.dtype, x.device)
    cw = dct_matrix(w, x.dtype, x.device)
    return ch.T @ x @ cw


# ---------------------------------------------------------------------------
# linear algebra / autograd
# ---------------------------------------------------------------------------

def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product; leading batch axes must agree exactly."""
    if a.dim() < 2 or b.dim() < 2:
        raise ShapeError(f"matmul needs >= 2-D operands, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    if a.dim() > 2 and b.dim() > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def backward(loss: torch.Tensor) -> None:
    """Accumulate d(loss)/d(param) into ``.grad`` of every parameter on the path."""
    if loss.numel() != 1 or loss.dim() > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.reshape(()).backward()


def zero_grad(params: Iterable[torch.Tensor]) -> None:
    """Reset every gradient slot to exact zeros (allocating it if missing)."""
    for p in params:
        if p.grad is None:
            p.grad = torch.zeros_like(p)
        else:
            p.grad.detach_()
            p.grad.zero_()


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------

class Conv3d(nn.Module):
    """Learnable wrapper around :func:`conv3d` with He-uniform initialization."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size=1, stride=1,
                 padding=0, bias: bool = True, init_std: float | None = None):
        super().__init__()
        k = _triple(kernel_size)
        self.stride = _triple(stride)
        self.padding = _triple(padding)
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, *k))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        if init_std is None:
            fan_in = in_channels * k[0] * k[1] * k[2]
            bound = math.sqrt(6.0 / fan_in)
            nn.init.uniform_(self.weight, -bound, bound)
        else:
            nn.init.normal_(self.weight, 0.0, init_std)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv3d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm3d(nn.Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 gamma_init: float = 1.0):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = nn.Parameter(torch.full((channels,), float(gamma_init)))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return batch_norm3d(x, self.weight, self.bias, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


# ---------------------------------------------------------------------------
# ".ten" serialization
# ---------------------------------------------------------------------------

TEN_MAGIC = b"XTEN"
TEN_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_tensor(fh: BinaryIO, t) -> None:
    """Write one tensor in ``.ten`` layout (little-endian throughout)."""
    arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    if arr.dtype not in (np.float32, np.float64):
        raise TypeError(f".ten supports float32/float64 only, got {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
    if arr.ndim > 255:
        raise ShapeError("too many dimensions for .ten")
    fh.write(TEN_MAGIC)
    fh.write(struct.pack("<IBB", TEN_VERSION, _DTYPE_CODES[arr.dtype], arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated .ten payload")
    return buf


def read_tensor(fh: BinaryIO) -> torch.Tensor:
    if _read_exact(fh, 4) != TEN_MAGIC:
        raise ValueError("bad .ten magic")
    version, code, ndim = struct.unpack("<IBB", _read_exact(fh, 6))
    if version != TEN_VERSION:
        raise ValueError(f"unsupported .ten version {version}")
    if code not in _CODE_DTYPES:
        raise ValueError(f"unknown .ten dtype code {code}")
    dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims)) if ndim else 1
    data = np.frombuffer(_read_exact(fh, count * dtype.itemsize), dtype=dtype)
    return torch.from_numpy(data.reshape(dims).astype(dtype.newbyteorder("="), copy=True))


def save_tensor(path, t) -> None:
    with open(Path(path), "wb") as fh:
        write_tensor(fh, t)


def load_tensor(path) -> torch.Tensor:
    with open(Path(path), "rb") as fh:
        return read_tensor(fh)
