import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import oracles
import xdlf.fgfe as fgfe_mod
from conftest import t64
from xdlf.datagen import canonical_landmarks
from xdlf.errors import ShapeError
from xdlf.fgfe import FGFE
from xdlf.fslr import extract_boxes, project_boxes

BOXES_8 = np.array([[[0, 3, 0, 3], [0, 3, 5, 8], [3, 5, 3, 5], [5, 8, 1, 7]],
                    [[1, 4, 0, 3], [1, 4, 5, 8], [3, 6, 3, 5], [5, 8, 2, 8]]])


def lively(c, pool=(7, 7)):
    """FGFE with non-trivial attention (identity-start init swapped for O(1) weights)."""
    m = FGFE(c, pool, conv_init_std=0.5, bn_gamma_init=1.0).double()
    with torch.no_grad():
        m.bn.bias.uniform_(0.5, 1.0)
        m.conv1.bias.normal_()
    return m


def dense_oracle(m, x, boxes):
    """Every intermediate materialized with numpy, single sample, BN in train mode."""
    c, d, h, w = x.shape
    H, W = m.pool_size
    R = oracles.region_pool(x, boxes, H, W)                       # [4, c, d, H, W]
    Xp = x.mean(axis=1).reshape(c, h * w)
    Rp = R.reshape(4 * c, d * H * W)
    S = Xp.T @ m.W.detach().numpy() @ Rp                          # [hw, dHW]
    A = (Xp @ S).reshape(c, d, H, W)
    A = oracles.bilinear_ac(A, h, w)[None]
    A = oracles.conv1x1(A, m.conv1.weight.detach().numpy(), m.conv1.bias.detach().numpy())
    A = oracles.relu(oracles.bn_train(A, m.bn.weight.detach().numpy(), m.bn.bias.detach().numpy()))[0]
    return x + x * A, S


def test_residual_identity_when_attention_zeroed(rng):
    m = FGFE(2).double()
    with torch.no_grad():
        m.conv1.weight.zero_()
        m.conv1.bias.zero_()
        m.bn.bias.zero_()
    x = t64(rng.standard_normal((2, 2, 8, 8)))
    assert torch.equal(m(x, BOXES_8), x)


def test_identity_also_in_eval_mode(rng):
    m = FGFE(3).double().eval()
    with torch.no_grad():
        m.conv1.weight.zero_()
        m.conv1.bias.zero_()
        m.bn.running_mean.zero_()
    x = t64(rng.standard_normal((2, 3, 2, 8, 8)))
    assert torch.equal(m(x, np.stack([BOXES_8] * 2)), x)


def test_w_shape():
    assert FGFE(8).W.shape == (8, 32)


def test_shape_contract(monkeypatch):
    # x [8, 4, 56, 56] with 7x7 pooling; S pairs hw = 3136 rows with dHW = 4*7*7 columns
    shapes = []
    real = fgfe_mod.matmul

    def spy(a, b):
        out = real(a, b)
        shapes.append(tuple(out.shape))
        return out

    monkeypatch.setattr(fgfe_mod, "matmul", spy)
    m = FGFE(8)
    boxes = project_boxes(extract_boxes(canonical_landmarks(224, 224), 224, 224), (224, 224), (56, 56))
    out = m(torch.randn(8, 4, 56, 56), np.stack([boxes] * 4))
    assert out.shape == (8, 4, 56, 56)
    # X'^T W -> [hw, 4c]; (X'^T W) R' = S; X' S = A
    assert shapes == [(1, 3136, 32), (1, 3136, 196), (1, 8, 196)]


def test_matches_dense_oracle(rng):
    m = lively(2)
    x = rng.standard_normal((2, 2, 8, 8))
    out = m(t64(x), BOXES_8).detach().numpy()
    exp, _ = dense_oracle(m, x, BOXES_8)
    np.testing.assert_allclose(out, exp, atol=1e-9, rtol=1e-9)


def test_batched_matches_per_sample_in_eval(rng):
    m = lively(2).eval()
    x = t64(rng.standard_normal((3, 2, 2, 8, 8)))
    b = np.stack([BOXES_8, BOXES_8[::-1], BOXES_8])
    both = m(x, b)
    for i in range(3):
        assert torch.allclose(both[i], m(x[i], b[i]), atol=1e-12)


def test_channel_mismatch_rejected():
    with pytest.raises(ShapeError, match="channels"):
        FGFE(3)(torch.zeros(2, 2, 8, 8), BOXES_8)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_sign_preserved_and_magnitude_grows(seed):
    r = np.random.default_rng(seed)
    torch.manual_seed(seed)
    m = lively(2, (3, 3))
    x = t64(r.standard_normal((2, 2, 2, 8, 8)))
    out = m(x, np.stack([BOXES_8] * 2))
    nz = x != 0
    assert out.shape == x.shape
    assert torch.equal(torch.sign(out[nz]), torch.sign(x[nz]))
    assert bool((out.abs() >= x.abs()).all())


def test_last_attention_is_nonnegative(rng):
    m = lively(2)
    m(t64(rng.standard_normal((2, 2, 8, 8))), BOXES_8)
    assert m.last_attention.shape == (1, 2, 2, 8, 8)
    assert bool((m.last_attention >= 0).all())


def test_gradients_match_finite_differences(rng):
    m = lively(2, (3, 3))
    x = t64(rng.standard_normal((2, 2, 2, 8, 8)))
    b = np.stack([BOXES_8] * 2)
    target = t64(rng.standard_normal((2, 2, 2, 8, 8)))

    def loss():
        return ((m(x, b) - target) ** 2).sum()

    m.zero_grad()
    loss().backward()
    for p in (m.W, m.conv1.weight, m.bn.weight, m.bn.bias):
        g = p.grad.clone()
        flat = p.data.view(-1)
        for k in range(min(6, flat.numel())):
            old = flat[k].item()
            flat[k] = old + 1e-5
            lp = loss().item()
            flat[k] = old - 1e-5
            lm = loss().item()
            flat[k] = old
            num = (lp - lm) / 2e-5
            assert abs(num - g.view(-1)[k].item()) <= 1e-4 * max(abs(num), 1e-5 * abs(lp))
