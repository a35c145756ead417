"""Self-check suite: gradient checks, brute-force oracles, parameter counts, determinism."""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import oracles
from .autodiff import Tensor
from .autodiff import ops as _ops
from .gradcheck import gradcheck
from .losses import (
    ffl_loss, ffl_spectrum_weight, l1_weighted, ms_ssim, msssim_loss, mse_loss, ssim, ssim_loss,
)
from .metrics import masked_psnr, masked_ssim
from .network import ModelConfig, ReMARDS, parameter_count

GRAD_TOL = 1e-4
E2E_TOL = 1e-3
ORACLE_TOL = 1e-8
DFT_TOL = 1e-9

GradCase = Tuple[Callable[[], Tensor], List[Tensor], float]


def _t(rng, *shape, lo=None) -> Tensor:
    a = rng.standard_normal(shape)
    if lo is not None:
        # keep samples away from kinks so central differences stay smooth
        a = np.sign(a) * (np.abs(a) + lo)
    return Tensor(a, requires_grad=True)


def _probe(rng, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def _case_conv(rng) -> GradCase:
    x, w, b = _t(rng, 2, 3, 6, 6), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    p = Tensor(_probe(rng, (2, 4, 3, 3)))
    return (lambda: ad.sum(ad.conv2d(x, w, b, stride=2, padding=(0, 1)) * p)), [x, w, b], GRAD_TOL


def _case_conv_same(rng) -> GradCase:
    x, w, b = _t(rng, 2, 2, 5, 5), _t(rng, 3, 2, 3, 3), _t(rng, 3)
    p = Tensor(_probe(rng, (2, 3, 5, 5)))
    return (lambda: ad.sum(ad.conv2d(x, w, b, padding=1) * p)), [x, w, b], GRAD_TOL


def _case_depthwise(rng) -> GradCase:
    x, w, b = _t(rng, 2, 3, 5, 5), _t(rng, 3, 1, 3, 3), _t(rng, 3)
    p = Tensor(_probe(rng, (2, 3, 5, 5)))
    return (lambda: ad.sum(ad.depthwise_conv2d(x, w, b) * p)), [x, w, b], GRAD_TOL


def _case_pointwise(rng) -> GradCase:
    x, w, b = _t(rng, 2, 3, 4, 4), _t(rng, 5, 3, 1, 1), _t(rng, 5)
    p = Tensor(_probe(rng, (2, 5, 4, 4)))
    return (lambda: ad.sum(ad.pointwise_conv2d(x, w, b) * p)), [x, w, b], GRAD_TOL


def _case_batchnorm(rng) -> GradCase:
    x, g, b = _t(rng, 3, 2, 4, 4), _t(rng, 2), _t(rng, 2)
    rm, rv = np.zeros(2), np.ones(2)
    p = Tensor(_probe(rng, (3, 2, 4, 4)))
    return (lambda: ad.sum(ad.batchnorm2d(x, g, b, rm, rv, training=True) * p)), [x, g, b], GRAD_TOL


def _case_batchnorm_eval(rng) -> GradCase:
    x, g, b = _t(rng, 2, 2, 3, 3), _t(rng, 2), _t(rng, 2)
    rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2.0, 2)
    p = Tensor(_probe(rng, (2, 2, 3, 3)))
    return (lambda: ad.sum(ad.batchnorm2d(x, g, b, rm, rv, training=False) * p)), [x, g, b], GRAD_TOL


def _case_activations(rng) -> GradCase:
    x = _t(rng, 2, 3, 4, 4, lo=0.05)
    p, q, r = (Tensor(_probe(rng, x.shape)) for _ in range(3))
    return (
        lambda: ad.sum(ad.relu(x) * p) + ad.sum(ad.sigmoid(x) * q) + ad.sum(ad.abs(x) * r)
        + ad.sum(ad.square(x)) + ad.sum(ad.pow_scalar(ad.abs(x), 0.7))
        + ad.sum(ad.clamp_min(x, 0.0) * q) + ad.mean(ad.div(x, ad.abs(x) + 1.0))
    ), [x], GRAD_TOL


def _case_pooling(rng) -> GradCase:
    x = _t(rng, 2, 3, 4, 6)
    p = Tensor(_probe(rng, (2, 3)))
    q = Tensor(_probe(rng, (2, 3, 2, 3)))
    return (lambda: ad.sum(ad.global_avg_pool(x) * p) + ad.sum(ad.avg_pool2x(x) * q)), [x], GRAD_TOL


def _case_fc(rng) -> GradCase:
    x, w, b = _t(rng, 3, 4), _t(rng, 2, 4), _t(rng, 2)
    p = Tensor(_probe(rng, (3, 2)))
    return (lambda: ad.sum(ad.fully_connected(x, w, b) * p)), [x, w, b], GRAD_TOL


def _case_upsample(rng) -> GradCase:
    x = _t(rng, 2, 2, 3, 3)
    p = Tensor(_probe(rng, (2, 2, 6, 6)))
    return (lambda: ad.sum(ad.upsample_nearest2x(x) * p)), [x], GRAD_TOL


def _case_dft(rng) -> GradCase:
    x = _t(rng, 2, 1, 6, 6)
    p, q = Tensor(_probe(rng, x.shape)), Tensor(_probe(rng, x.shape))

    def f():
        re, im = ad.dft2d(x)
        return ad.sum(re * p) + ad.sum(im * q)

    return f, [x], GRAD_TOL


def _pair(rng, n=32) -> Tuple[Tensor, np.ndarray]:
    y = np.tanh(rng.standard_normal((2, 1, n, n)))
    x = Tensor(np.clip(y + 0.2 * rng.standard_normal(y.shape), -1, 1), requires_grad=True)
    return x, y


def _case_l1w(rng) -> GradCase:
    x, y = _pair(rng, 12)
    w = rng.uniform(0.1, 100.0, y.shape)
    return (lambda: l1_weighted(x, y, w)), [x], GRAD_TOL


def _case_mse(rng) -> GradCase:
    x, y = _pair(rng, 12)
    return (lambda: mse_loss(x, y)), [x], GRAD_TOL


def _case_ssim(rng) -> GradCase:
    x, y = _pair(rng, 16)
    return (lambda: ssim_loss(x, y)), [x], GRAD_TOL


def _case_msssim(rng) -> GradCase:
    x, y = _pair(rng, 32)
    return (lambda: msssim_loss(x, y, scales=2)), [x], GRAD_TOL


def _case_ffl(rng) -> GradCase:
    x, y = _pair(rng, 8)
    # the focal weight is detached, so hold it at its value for the unperturbed input
    F = np.fft.fft2(x.data - y, axes=(-2, -1))
    z = ffl_spectrum_weight(np.abs(F), 0.5)
    return (lambda: ffl_loss(x, y, 0.5, 1.0, weight=z)), [x], GRAD_TOL


def _case_ffl_alpha0(rng) -> GradCase:
    x, y = _pair(rng, 8)
    return (lambda: ffl_loss(x, y, alpha=0.0)), [x], GRAD_TOL


def _case_model(rng, levels=2, base=4, size=8) -> GradCase:
    cfg = ModelConfig(levels=levels, base_channels=base, precision="float64")
    model = ReMARDS(cfg, seed=int(rng.integers(2 ** 31)))
    model.train()
    x = Tensor(rng.standard_normal((2, 1, size, size)), requires_grad=True)
    y = np.tanh(rng.standard_normal((2, 1, size, size)))
    noise = int(rng.integers(2 ** 31))
    leaves = [x] + model.parameters()
    return (lambda: ad.mean(ad.square(model(x, noise_seed=noise) - Tensor(y)))), leaves, E2E_TOL


GRAD_CASES: Dict[str, Callable[[np.random.Generator], GradCase]] = {
    "conv2d stride 2": _case_conv,
    "conv2d same": _case_conv_same,
    "depthwise_conv2d": _case_depthwise,
    "pointwise_conv2d": _case_pointwise,
    "batchnorm train": _case_batchnorm,
    "batchnorm eval": _case_batchnorm_eval,
    "activations": _case_activations,
    "pooling": _case_pooling,
    "fully_connected": _case_fc,
    "upsample": _case_upsample,
    "dft2d": _case_dft,
    "loss l1w": _case_l1w,
    "loss mse": _case_mse,
    "loss ssim": _case_ssim,
    "loss ms-ssim": _case_msssim,
    "loss ffl": _case_ffl,
    "loss ffl alpha=0": _case_ffl_alpha0,
    "model end-to-end": _case_model,
}


# the network is piecewise linear through ReLU, so a smaller step keeps
# perturbations from crossing a kink; it also has many leaves, so sample fewer entries
CASE_SETTINGS = {"model end-to-end": (1e-6, 8)}


def run_grad_case(name: str, seed: int, max_entries: Optional[int] = 40) -> Tuple[float, float]:
    """Returns ``(max relative error, tolerance)`` for one case and seed."""
    rng = np.random.default_rng(seed)
    fn, leaves, tol = GRAD_CASES[name](rng)
    eps, entries = CASE_SETTINGS.get(name, (1e-5, max_entries))
    return gradcheck(fn, leaves, eps=eps, max_entries=entries, seed=seed).max_rel_error, tol


# ---------------------------------------------------------------------------
# oracle equivalences


def oracle_errors(seed: int = 0) -> Dict[str, Tuple[float, float]]:
    """``name -> (error, tolerance)`` against the direct-formula implementations."""
    rng = np.random.default_rng(seed)
    y = np.tanh(rng.standard_normal((32, 32)))
    x = np.clip(y + 0.3 * rng.standard_normal((32, 32)), -1, 1)
    tx, ty = Tensor(x[None, None]), Tensor(y[None, None])
    mask = np.zeros((32, 32), dtype=bool)
    mask[4:28, 6:30] = True
    out: Dict[str, Tuple[float, float]] = {}
    out["ssim"] = (abs(float(ssim(tx, ty).data) - oracles.brute_ssim(x, y)), ORACLE_TOL)
    out["ms-ssim"] = (abs(float(ms_ssim(tx, ty, scales=2).data) - oracles.brute_msssim(x, y, 2)), ORACLE_TOL)
    out["ffl"] = (abs(float(ffl_loss(tx, ty, 0.5, 1.0).data) - oracles.brute_ffl(x, y, 0.5, 1.0)), ORACLE_TOL)
    out["masked psnr"] = (abs(masked_psnr(x, y, mask).db - oracles.brute_masked_psnr(x, y, mask)), ORACLE_TOL)
    out["masked ssim"] = (abs(masked_ssim(x, y, mask) - oracles.brute_masked_ssim(x, y, mask)), ORACLE_TOL)
    re, im = ad.dft2d(tx)
    direct = oracles.direct_dft2d(x)
    out["dft2d"] = (float(np.max(np.abs(re.data[0, 0] + 1j * im.data[0, 0] - direct))), DFT_TOL)
    # alpha=0 makes z == 1, so the loss is sum |F diff|^2 / d^2 == sum (x - y)^2 by Parseval
    parseval = float(np.sum((x - y) ** 2))
    out["ffl parseval"] = (abs(float(ffl_loss(tx, ty, alpha=0.0).data) - parseval) / parseval, DFT_TOL)
    return out


def parameter_count_errors() -> Dict[str, Tuple[float, float]]:
    out = {}
    for levels, base in ((2, 4), (3, 8), (4, 16)):
        for variant in ("full", "+", "++", "+++", "++++"):
            cfg = ModelConfig(levels=levels, base_channels=base).variant(variant)
            n = ReMARDS(cfg).num_parameters()
            out[f"L{levels}/b{base}/{variant}"] = (float(abs(n - parameter_count(cfg))), 0.5)
    return out


def determinism_error(steps: int = 3) -> float:
    from .data import PhantomSpec, generate_dataset
    from .trainer import TrainConfig, train

    pairs = generate_dataset(1, PhantomSpec(size=32), 4, seed=3)
    cfg = TrainConfig(epochs=2, batch_size=2, max_steps=steps, validate=False,
                      model_config=ModelConfig(levels=2, base_channels=4))
    a = train(cfg, pairs).losses
    b = train(cfg, pairs).losses
    return 0.0 if a == b else float(np.max(np.abs(np.subtract(a, b))))


# ---------------------------------------------------------------------------
# fault injection


@contextlib.contextmanager
def conv_backward_fault(scale: float = 1.05) -> Iterator[None]:
    """Temporarily scale the conv2d weight gradient; used to prove the checks can fail."""
    original = _ops._Conv2d.backward

    def broken(self, g):
        grads = original(self, g)
        return (grads[0], grads[1] * scale) + tuple(grads[2:])

    _ops._Conv2d.backward = broken
    try:
        yield
    finally:
        _ops._Conv2d.backward = original


# ---------------------------------------------------------------------------
# report


@dataclass
class CheckResult:
    group: str
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tolerance)


def run_checks(seeds: Sequence[int] = (0,), quick: bool = False) -> List[CheckResult]:
    results = []
    for name in GRAD_CASES:
        worst, tol = 0.0, GRAD_TOL
        for s in seeds:
            try:
                err, tol = run_grad_case(name, s, max_entries=20 if quick else 40)
            except Exception:  # noqa: BLE001 - report as a failure
                err = float("inf")
            worst = max(worst, err)
        results.append(CheckResult("gradient", name, worst, tol))
    for name, (err, tol) in oracle_errors().items():
        results.append(CheckResult("oracle", name, err, tol))
    for name, (err, tol) in parameter_count_errors().items():
        results.append(CheckResult("params", name, err, tol))
    results.append(CheckResult("determinism", "3-step loss sequence", determinism_error(), 1e-300))
    return results


def format_report(results: Sequence[CheckResult]) -> str:
    width = max(len(f"{r.group}/{r.name}") for r in results)
    lines = [f"{'check'.ljust(width)}  {'error':>10}  {'tol':>8}  result"]
    for r in results:
        lines.append(f"{(r.group + '/' + r.name).ljust(width)}  {r.error:10.3e}  {r.tolerance:8.1e}  {'PASS' if r.passed else 'FAIL'}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines)


def main(seeds: Sequence[int] = (0,), quick: bool = False) -> int:
    t0 = time.perf_counter()
    results = run_checks(seeds, quick)
    print(format_report(results))
    print(f"elapsed {time.perf_counter() - t0:.1f}s")
    return 0 if all(r.passed for r in results) else 1
