import numpy as np
import pytest

from remar_ds import autodiff as ad
from remar_ds.autodiff import Tensor
from remar_ds.gradcheck import gradcheck
from remar_ds.network import EnResB, ModelConfig, RcsSE, ReMARDS
from remar_ds.verify import GRAD_CASES, conv_backward_fault, run_grad_case

SEEDS = range(5)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", [n for n in GRAD_CASES if n != "model end-to-end"])
def test_op_gradients(name, seed):
    err, tol = run_grad_case(name, seed)
    assert err < tol, f"{name} seed {seed}: {err:.3e}"


@pytest.mark.parametrize("seed", SEEDS)
def test_model_end_to_end_gradient(seed):
    err, tol = run_grad_case("model end-to-end", seed)
    assert tol == 1e-3 and err < tol


def test_four_level_tiny_model_gradient():
    rng = np.random.default_rng(11)
    model = ReMARDS(ModelConfig(levels=4, base_channels=2, precision="float64"), seed=3)
    model.train()
    x = Tensor(rng.standard_normal((2, 1, 8, 8)), requires_grad=True)
    y = Tensor(rng.standard_normal((2, 1, 8, 8)))
    res = gradcheck(lambda: ad.mean(ad.square(model(x, noise_seed=5) - y)), [x] + model.parameters(),
                    eps=1e-6, max_entries=4)
    assert res.max_rel_error < 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_rcsse_and_enresb_gradients(seed):
    rng = np.random.default_rng(seed)
    se = RcsSE(4, 2, rng=rng, dtype=np.float64)
    rb = EnResB(4, 3, rng=rng, dtype=np.float64)
    f = Tensor(rng.standard_normal((2, 4, 5, 5)), requires_grad=True)
    p = Tensor(rng.standard_normal((2, 4, 5, 5)))
    res = gradcheck(lambda: ad.sum(rb(se(f)) * p), [f] + se.parameters() + rb.parameters(), max_entries=15, seed=seed)
    assert res.max_rel_error < 1e-4


def test_sigma_l_gradient_nonzero():
    rng = np.random.default_rng(0)
    model = ReMARDS(ModelConfig(levels=2, base_channels=4, precision="float64"), seed=1)
    x = rng.standard_normal((2, 1, 8, 8))
    y = Tensor(rng.standard_normal((2, 1, 8, 8)))
    loss = ad.mean(ad.square(model(x, noise_seed=3, mode="train") - y))
    loss.backward()
    assert model.sigma_l.grad is not None and abs(float(model.sigma_l.grad)) > 0
    res = gradcheck(lambda: ad.mean(ad.square(model(x, noise_seed=3) - y)), [model.sigma_l], eps=1e-6)
    assert res.max_rel_error < 1e-4


def test_fault_injection_is_detected():
    with conv_backward_fault():
        err, tol = run_grad_case("conv2d same", 0)
    assert err > tol
    err, tol = run_grad_case("conv2d same", 0)
    assert err < tol
