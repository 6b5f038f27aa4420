import time

import numpy as np
import pytest
import torch

from xdlf.gradcheck import MODULE_TOL, PROBE_TOL, SUITES, check_tensors, rel_error, run


def test_rel_error_floor():
    assert rel_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert rel_error(np.array([2.0]), np.array([1.0])) == 0.5
    # both structurally zero: noise is measured against the loss-scaled floor
    assert rel_error(np.array([0.0]), np.array([1e-9]), loss_scale=10.0) == pytest.approx(1e-9 / 1e-4)


def test_check_tensors_catches_wrong_gradient():
    x = torch.randn(4, dtype=torch.float64, requires_grad=True)

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, a):
            return (a ** 2).sum()

        @staticmethod
        def backward(ctx, g):
            return g * torch.ones(4, dtype=torch.float64)   # should be 2a

    results = list(check_tensors(lambda: Wrong.apply(x), {"x": x}, np.random.default_rng(0)))
    assert results[0][1] > 0.1


@pytest.mark.parametrize("suite", SUITES)
def test_suite_passes(suite):
    prev = torch.get_default_dtype()
    results = run([suite], seed=0)
    assert torch.get_default_dtype() == prev
    assert results
    for r in results:
        assert r.passed, r
        assert r.tol == (PROBE_TOL if suite == "model" else MODULE_TOL)


def test_model_probes_cover_every_module():
    names = {r.tensor.removeprefix("param:") for r in run(["model"], seed=0)}
    for probe in ("band_weights.raw", "fgfe_a.W", "fgfe_b.W", "ensemble.raw", "fc_weight"):
        assert probe in names
    assert any(n.startswith("fusion.") and n.endswith("W1") for n in names)


def test_full_run_under_a_minute():
    t0 = time.time()
    results = run(seed=0)
    assert all(r.passed for r in results)
    assert time.time() - t0 < 60
