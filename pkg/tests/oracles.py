"""Plain-numpy reference implementations used as test oracles.

These deliberately avoid the package and torch: loops and explicit formulas only.
"""

import math

import numpy as np


def bins(n, out):
    return [((i * n) // out, math.ceil((i + 1) * n / out)) for i in range(out)]


def adaptive_max2d(a, oh, ow):
    """``a[..., h, w]`` -> ``[..., oh, ow]``."""
    out = np.empty(a.shape[:-2] + (oh, ow))
    for i, (h0, h1) in enumerate(bins(a.shape[-2], oh)):
        for j, (w0, w1) in enumerate(bins(a.shape[-1], ow)):
            out[..., i, j] = a[..., h0:h1, w0:w1].max(axis=(-2, -1))
    return out


def adaptive_avg(a, target):
    """Adaptive average over the last ``len(target)`` axes."""
    k = len(target)
    lead = a.shape[:-k]
    out = np.empty(lead + tuple(target))
    for idx in np.ndindex(*target):
        sl = tuple(slice(*bins(a.shape[len(lead) + ax], target[ax])[idx[ax]]) for ax in range(k))
        out[(...,) + idx] = a[(...,) + sl].mean(axis=tuple(range(-k, 0)))
    return out


def bilinear_ac(a, oh, ow):
    """Align-corners bilinear resize of the last two axes."""
    ih, iw = a.shape[-2:]
    out = np.empty(a.shape[:-2] + (oh, ow))
    for p in range(oh):
        y = p * (ih - 1) / (oh - 1) if oh > 1 else 0.0
        y0 = int(math.floor(y))
        y1 = min(y0 + 1, ih - 1)
        fy = y - y0
        for q in range(ow):
            x = q * (iw - 1) / (ow - 1) if ow > 1 else 0.0
            x0 = int(math.floor(x))
            x1 = min(x0 + 1, iw - 1)
            fx = x - x0
            out[..., p, q] = ((1 - fy) * (1 - fx) * a[..., y0, x0] + (1 - fy) * fx * a[..., y0, x1]
                              + fy * (1 - fx) * a[..., y1, x0] + fy * fx * a[..., y1, x1])
    return out


def region_pool(x, boxes, H, W):
    """``x [c, d, h, w]``, ``boxes [d, 4, 4]`` -> ``[4, c, d, H, W]``."""
    c, d = x.shape[:2]
    out = np.empty((4, c, d, H, W))
    for r in range(4):
        for t in range(d):
            h1, h2, w1, w2 = boxes[t, r]
            out[r, :, t] = adaptive_max2d(x[:, t, h1:h2, w1:w2], H, W)
    return out


def bn_train(x, gamma, beta, eps=1e-5):
    """Batch norm with batch statistics over every axis but 1 (``x [n, c, ...]``)."""
    axes = (0,) + tuple(range(2, x.ndim))
    mu = x.mean(axis=axes, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=axes, keepdims=True)
    shape = (1, -1) + (1,) * (x.ndim - 2)
    return (x - mu) / np.sqrt(var + eps) * gamma.reshape(shape) + beta.reshape(shape)


def conv1x1(x, w, b):
    """``x [n, cin, ...]``, ``w [cout, cin, 1, 1, 1]``."""
    out = np.einsum("oc,nc...->no...", w[:, :, 0, 0, 0], x)
    return out + b.reshape((1, -1) + (1,) * (x.ndim - 2))


def conv3_same(x, w, b):
    """3x3x3 zero-padded convolution, ``x [n, cin, d, h, w]`` by loops over the kernel."""
    n, cin, d, h, ww = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    out = np.zeros((n, w.shape[0], d, h, ww))
    for o in range(w.shape[0]):
        out[:, o] += b[o]
        for c in range(cin):
            for p in range(3):
                for q in range(3):
                    for r in range(3):
                        out[:, o] += w[o, c, p, q, r] * xp[:, c, p:p + d, q:q + h, r:r + ww]
    return out


def relu(a):
    return np.maximum(a, 0.0)


def sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def brute_auc(labels, scores):
    """Pairwise comparison: P(score_pos > score_neg) with ties counted 1/2."""
    pos = [s for y, s in zip(labels, scores) if y > 0.5]
    neg = [s for y, s in zip(labels, scores) if y <= 0.5]
    if not pos or not neg:
        return None
    num = 0.0
    for p in pos:
        for q in neg:
            num += 1.0 if p > q else 0.5 if p == q else 0.0
    return num / (len(pos) * len(neg))
