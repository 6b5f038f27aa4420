"""Central finite-difference checks of analytic gradients.

Every case builds a float64 computation, contracts its output with a fixed
random projection to get a scalar loss, and compares autograd gradients
against ``(L(p + h) - L(p - h)) / 2h`` entry by entry. The reported error for
a tensor is ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``,
with the denominator floored at ``SCALE_FLOOR * max(1, |L|)``. Rounding
noise in the difference quotient grows with ``|L|``; the floor keeps
structurally zero gradients (a conv bias feeding training-mode batch norm)
from dividing that noise by itself.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .fgfe import FGFE
from .frequency import BandWeights, build_band_filters, decompose
from .fusion import CrossAttention, FeatureEnsemble, FeatureFusion
from .model import BackboneConfig, ModelConfig, XdlfModel
from .tensor import (batch_norm3d, bilinear_upsample2d, channel_scale, conv3d, dct2d, idct2d,
                     matmul, mul, pool, relu, sigmoid)

STEP = 1e-5
MODULE_TOL = 1e-4
PROBE_TOL = 1e-3
SCALE_FLOOR = 1e-5
SUITES = ("tensor", "frequency", "fgfe", "fusion", "model")


@dataclass(frozen=True)
class GradResult:
    suite: str
    case: str
    tensor: str
    max_rel_error: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def rel_error(analytic: np.ndarray, numeric: np.ndarray, loss_scale: float = 1.0) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if analytic.size == 0:
        return 0.0
    floor = SCALE_FLOOR * max(1.0, abs(loss_scale))
    return float(np.abs(analytic - numeric).max() / max(scale, floor))


def check_tensors(loss_fn: Callable[[], torch.Tensor], tensors: dict[str, torch.Tensor],
                  rng: np.random.Generator, max_entries: int | None = None, step: float = STEP):
    """Yield ``(name, rel_error, n_checked)`` for each tensor in ``tensors``.

    Tensors must be float64 leaves with ``requires_grad``. At most
    ``max_entries`` randomly chosen entries per tensor are perturbed.
    """
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()
    loss_scale = loss.item()
    analytic = {k: (t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t))
                for k, t in tensors.items()}
    for name, t in tensors.items():
        flat = t.detach().view(-1)
        n = flat.numel()
        idx = np.arange(n) if max_entries is None or n <= max_entries else \
            np.sort(rng.choice(n, size=max_entries, replace=False))
        num = np.empty(len(idx))
        with torch.no_grad():
            for j, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + step
                lp = loss_fn().item()
                flat[i] = orig - step
                lm = loss_fn().item()
                flat[i] = orig
                num[j] = (lp - lm) / (2 * step)
        yield name, rel_error(analytic[name].view(-1).numpy()[idx], num, loss_scale), len(idx)


def _leaf(rng, *shape, low=None):
    a = rng.standard_normal(shape)
    if low is not None:
        # keep entries away from kinks of relu / max ties
        a = np.sign(a) * (low + np.abs(a))
    return torch.tensor(a, dtype=torch.float64, requires_grad=True)


def _projected(out_fn, rng, shape_probe):
    """Loss ``sum(out * P)`` with a projection ``P`` fixed at first call."""
    with torch.no_grad():
        shape = out_fn().shape if shape_probe is None else shape_probe
    P = torch.tensor(rng.standard_normal(tuple(shape)), dtype=torch.float64)
    return lambda: (out_fn() * P).sum()


def _module_tensors(module: torch.nn.Module, **inputs) -> dict[str, torch.Tensor]:
    named = {f"param:{k}": p for k, p in module.named_parameters()}
    named.update({f"input:{k}": v for k, v in inputs.items()})
    return named


# ---------------------------------------------------------------------------
# suites; each yields (case, loss_fn, tensors, max_entries, tol)
# ---------------------------------------------------------------------------

def _tensor_cases(rng):
    x = _leaf(rng, 2, 3, 4, 4)
    w = _leaf(rng, 3, 2, 3, 3, 3)
    b = _leaf(rng, 3)
    yield "conv3d", lambda: conv3d(x, w, b, padding=1), dict(x=x, weight=w, bias=b)
    x2 = _leaf(rng, 2, 2, 5, 6, 6)
    w2 = _leaf(rng, 3, 2, 3, 3, 3)
    yield "conv3d_stride2", lambda: conv3d(x2, w2, None, stride=2, padding=1), dict(x=x2, weight=w2)

    xb = _leaf(rng, 2, 3, 2, 3, 3)
    g = _leaf(rng, 3)
    be = _leaf(rng, 3)
    rm, rv = torch.zeros(3, dtype=torch.float64), torch.ones(3, dtype=torch.float64)
    yield ("batch_norm3d_train",
           lambda: batch_norm3d(xb, g, be, rm.clone(), rv.clone(), training=True),
           dict(x=xb, gamma=g, beta=be))
    rm2 = torch.tensor(rng.standard_normal(3))
    rv2 = torch.tensor(rng.uniform(0.5, 2.0, 3))
    yield ("batch_norm3d_eval", lambda: batch_norm3d(xb, g, be, rm2, rv2, training=False),
           dict(x=xb, gamma=g, beta=be))

    xr = _leaf(rng, 3, 4, 4, low=1e-2)
    yield "relu", lambda: relu(xr), dict(x=xr)
    xs = _leaf(rng, 3, 4, 4)
    yield "sigmoid", lambda: sigmoid(xs), dict(x=xs)
    ya = _leaf(rng, 3, 4, 4)
    yield "mul", lambda: mul(xs, ya), dict(x=xs, y=ya)
    xc = _leaf(rng, 2, 3, 2, 3, 3)
    sc = _leaf(rng, 2, 3)
    yield "channel_scale", lambda: channel_scale(xc, sc), dict(x=xc, s=sc)
    sm = _leaf(rng, 2, 1, 2, 3, 3)
    yield "channel_scale_map", lambda: channel_scale(xc, sm), dict(x=xc, s=sm)

    xp = _leaf(rng, 2, 3, 5, 7)
    yield "adaptive_avg", lambda: pool(xp, "adaptive_avg", (2, 3)), dict(x=xp)
    yield "adaptive_max", lambda: pool(xp, "adaptive_max", (2, 3)), dict(x=xp)
    yield "global_avg", lambda: pool(xp, "global_avg"), dict(x=xp)
    yield "global_max", lambda: pool(xp, "global_max"), dict(x=xp)
    xu = _leaf(rng, 2, 2, 3, 4)
    yield "bilinear_upsample2d", lambda: bilinear_upsample2d(xu, 7, 9), dict(x=xu)
    xd = _leaf(rng, 2, 6, 5)
    yield "dct2d", lambda: dct2d(xd), dict(x=xd)
    yield "idct2d", lambda: idct2d(xd), dict(x=xd)
    ma = _leaf(rng, 7, 5)
    mb = _leaf(rng, 5, 3)
    yield "matmul", lambda: matmul(ma, mb), dict(a=ma, b=mb)


def _frequency_cases(rng):
    filters = build_band_filters(8, 10)
    bw = BandWeights().double()
    with torch.no_grad():
        bw.raw.copy_(torch.tensor(rng.standard_normal(3)))
    x = _leaf(rng, 2, 3, 8, 10)
    yield "decompose", lambda: decompose(x, filters, bw), _module_tensors(bw, x=x)


def _boxes(d: int) -> np.ndarray:
    # per-frame boxes on an 8x8 grid, deliberately of mixed sizes
    base = np.array([[0, 3, 0, 3], [0, 3, 4, 8], [2, 6, 3, 5], [4, 7, 1, 7]])
    return np.stack([base + [t % 2, t % 2, 0, 0] for t in range(d)])


def _fgfe_cases(rng):
    torch.manual_seed(int(rng.integers(2 ** 31)))
    m = FGFE(2, (3, 3), conv_init_std=0.5, bn_gamma_init=1.0).double()
    with torch.no_grad():
        m.bn.bias.copy_(torch.tensor(rng.uniform(0.5, 1.0, 2)))
    x = _leaf(rng, 2, 2, 2, 8, 8)
    boxes = np.stack([_boxes(2), _boxes(2)[:, ::-1]])
    yield "fgfe", lambda: m(x, boxes), _module_tensors(m, x=x)


def _fusion_cases(rng):
    torch.manual_seed(int(rng.integers(2 ** 31)))
    ca = CrossAttention(3).double()
    x = _leaf(rng, 2, 3, 2, 4, 4)
    xf = _leaf(rng, 2, 3, 2, 4, 4)
    yield "cross_attention", lambda: torch.cat(ca(x, xf), dim=1), _module_tensors(ca, x=x, x_f=xf)
    ff = FeatureFusion(2, reduction=2).double()
    y = _leaf(rng, 2, 2, 2, 3, 3)
    yf = _leaf(rng, 2, 2, 2, 3, 3)
    yield "feature_fusion", lambda: ff(y, yf), _module_tensors(ff, x=y, x_f=yf)
    ens = FeatureEnsemble().double()
    with torch.no_grad():
        ens.raw.copy_(torch.tensor(rng.standard_normal(3)))
    lo = _leaf(rng, 2, 4, 4, 8, 8)
    mid = _leaf(rng, 2, 8, 2, 4, 4)
    hi = _leaf(rng, 2, 16, 1, 2, 2)
    yield "feature_ensemble", lambda: ens(lo, mid, hi), _module_tensors(ens, x_low=lo, x_mid=mid, x_high=hi)


def small_model(variant: str = "full", seed: int = 0) -> XdlfModel:
    torch.manual_seed(seed)
    bb = BackboneConfig(stem_channels=2, widths=(4, 6, 8))
    return XdlfModel(ModelConfig(backbone=bb, variant=variant, fslr_pool=3, reduction=2)).double()


PROBES = ("band_weights.raw", "fgfe_a.W", "fgfe_b.W", "fusion.0.W1", "fusion.2.W1", "ensemble.raw",
          "fc_weight")


def _model_cases(rng):
    m = small_model(seed=int(rng.integers(2 ** 31)))
    with torch.no_grad():
        m.fc_weight.copy_(torch.tensor(rng.standard_normal(m.fc_weight.shape)))
        m.band_weights.raw.copy_(torch.tensor(rng.standard_normal(3)))
        m.ensemble.raw.copy_(torch.tensor(rng.standard_normal(3)))
    x = torch.tensor(rng.uniform(0, 1, (2, 3, 4, 16, 16)))
    boxes = np.stack([np.stack([_boxes(1)[0] * 2] * 4)] * 2)
    params = dict(m.named_parameters())
    probes = {f"param:{k}": params[k] for k in PROBES}
    yield "model_end_to_end", lambda: m(x, boxes), probes


_CASES = {
    "tensor": (_tensor_cases, None, MODULE_TOL),
    "frequency": (_frequency_cases, None, MODULE_TOL),
    "fgfe": (_fgfe_cases, 48, MODULE_TOL),
    "fusion": (_fusion_cases, 48, MODULE_TOL),
    "model": (_model_cases, 6, PROBE_TOL),
}


def run_suite(suite: str, seed: int = 0) -> list[GradResult]:
    if suite not in _CASES:
        raise ValueError(f"unknown suite {suite!r}; valid: {', '.join(SUITES)}")
    make, max_entries, tol = _CASES[suite]
    rng = np.random.default_rng([seed, SUITES.index(suite)])
    results = []
    for case, out_fn, tensors in make(rng):
        loss = _projected(out_fn, rng, None)
        for name, err, n in check_tensors(loss, tensors, rng, max_entries):
            results.append(GradResult(suite, case, name, err, n, tol))
    return results


def run(suites=SUITES, seed: int = 0, log: Callable[[str], None] | None = None) -> list[GradResult]:
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    out = []
    try:
        for s in suites:
            t0 = time.perf_counter()
            res = run_suite(s, seed)
            out.extend(res)
            if log is not None:
                worst = max(res, key=lambda r: r.max_rel_error)
                log(f"{s:10s} max rel error {worst.max_rel_error:.2e} ({worst.case}/{worst.tensor}) "
                    f"tol {worst.tol:g} {'PASS' if all(r.passed for r in res) else 'FAIL'} "
                    f"[{time.perf_counter() - t0:.1f}s]")
    finally:
        torch.set_default_dtype(prev)
    return out
