"""Training losses: weighted L1, SSIM, MS-SSIM, MSE and focal frequency loss.

All losses take ``[B, 1, H, W]`` tensors in normalised ``[-1, 1]`` space and
return 0-d tensors.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
DATA_RANGE = 2.0
K1, K2 = 0.01, 0.03
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MSSSIM_FLOOR = 1e-8

TERMS = ("l1w", "ssim", "msssim", "mse", "ffl")


@dataclass(frozen=True)
class LossSpec:
    use_l1w: bool = True
    use_ssim: bool = False
    use_msssim: bool = False
    use_mse: bool = False
    use_ffl: bool = False
    w_inside: float = 100.0
    w_outside: float = 0.1
    w_clean: float = 1.0
    ffl_alpha: float = 0.5
    ffl_beta: float = 1.0
    msssim_scales: int = 3
    coef_l1w: float = 1.0
    coef_ssim: float = 1.0
    coef_msssim: float = 1.0
    coef_mse: float = 1.0
    coef_ffl: float = 1.0

    def __post_init__(self):
        if not self.active_terms():
            raise ValueError("LossSpec needs at least one active term")

    def active_terms(self):
        return [t for t in TERMS if getattr(self, f"use_{t}")]

    @property
    def label(self) -> str:
        names = {"l1w": "L1w", "ssim": "SSIM", "msssim": "MS-SSIM", "mse": "MSE", "ffl": "FFL"}
        return "+".join(names[t] for t in self.active_terms())


TABLE1_PRESETS: Dict[str, LossSpec] = {
    "L1": LossSpec(),
    "L1+SSIM": LossSpec(use_ssim=True),
    "L1+MS-SSIM": LossSpec(use_msssim=True),
    "L1+MSE": LossSpec(use_mse=True),
    "L1+FFL": LossSpec(use_ffl=True),
    "L1+SSIM+FFL": LossSpec(use_ssim=True, use_ffl=True),
}


def preset(name: str, **overrides) -> LossSpec:
    return replace(TABLE1_PRESETS[name], **overrides)


def _check_pair(recon: Tensor, target: Tensor, name: str) -> None:
    if recon.shape != target.shape:
        raise ValueError(f"{name}: recon shape {recon.shape} != target shape {target.shape}")
    if recon.ndim != 4:
        raise ValueError(f"{name}: expected [B, C, H, W], got {recon.shape}")


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def weight_map(masks: np.ndarray, is_artifact, spec: LossSpec = LossSpec()) -> np.ndarray:
    """Per-pixel L1 weights ``[B, 1, H, W]``.

    Artifact slices get ``w_inside`` on the body mask and ``w_outside`` off
    it; clean slices are uniformly ``w_clean``.
    """
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim == 2:
        masks = masks[None, None]
    elif masks.ndim == 3:
        masks = masks[:, None]
    art = np.broadcast_to(np.asarray(is_artifact, dtype=bool).reshape(-1), (masks.shape[0],))
    w = np.where(masks, spec.w_inside, spec.w_outside)
    w[~art] = spec.w_clean
    return w.astype(np.float64)


def l1_weighted(recon: Tensor, target, weights) -> Tensor:
    """``mean(weights * |recon - target|)``."""
    target = _const(target, recon)
    weights = _const(weights, recon)
    _check_pair(recon, target, "l1_weighted")
    if weights.shape != recon.shape:
        raise ValueError(f"l1_weighted: weights shape {weights.shape} != {recon.shape}")
    return ad.mean(weights * ad.abs(recon - target))


def mse_loss(recon: Tensor, target) -> Tensor:
    target = _const(target, recon)
    _check_pair(recon, target, "mse_loss")
    return ad.mean(ad.square(recon - target))


def gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim_maps(x: Tensor, y, data_range: float = DATA_RANGE) -> Tuple[Tensor, Tensor]:
    """Valid-window SSIM and contrast-structure maps, each ``[B, C, H-10, W-10]``."""
    y = _const(y, x)
    _check_pair(x, y, "ssim")
    if min(x.shape[2:]) < SSIM_WINDOW:
        raise ValueError(f"ssim needs H, W >= {SSIM_WINDOW}, got {x.shape[2:]}")
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    taps = gaussian_taps()
    blur = lambda t: ad.separable_filter_valid(t, taps)  # noqa: E731
    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    s_xx = blur(x * x) - mu_xx
    s_yy = blur(y * y) - mu_yy
    s_xy = blur(x * y) - mu_xy
    cs = (2.0 * s_xy + c2) / (s_xx + s_yy + c2)
    lum = (2.0 * mu_xy + c1) / (mu_xx + mu_yy + c1)
    return lum * cs, cs


def ssim(x: Tensor, y, data_range: float = DATA_RANGE) -> Tensor:
    return ad.mean(ssim_maps(x, y, data_range)[0])


def ssim_loss(recon: Tensor, target, data_range: float = DATA_RANGE) -> Tensor:
    return 1.0 - ssim(recon, target, data_range)


def msssim_weights(scales: int) -> np.ndarray:
    if not 1 <= scales <= len(MSSSIM_WEIGHTS):
        raise ValueError(f"scales must be in 1..{len(MSSSIM_WEIGHTS)}, got {scales}")
    w = np.asarray(MSSSIM_WEIGHTS[:scales])
    return w / w.sum()


def check_msssim_size(h: int, w: int, scales: int) -> None:
    step = 2 ** (scales - 1)
    for dim, n in (("H", h), ("W", w)):
        if n % step or n // step < SSIM_WINDOW:
            raise ValueError(
                f"ms-ssim with {scales} scales needs {dim} divisible by {step} and {dim}/{step} >= {SSIM_WINDOW}, got {n}"
            )


def ms_ssim(x: Tensor, y, scales: int = 3, data_range: float = DATA_RANGE) -> Tensor:
    """Multi-scale SSIM, computed per image then averaged over the batch.

    Each scale contributes its mean contrast-structure term (the coarsest
    contributes full SSIM), floored at ``1e-8`` before exponentiation.
    """
    y = _const(y, x)
    _check_pair(x, y, "ms_ssim")
    check_msssim_size(x.shape[2], x.shape[3], scales)
    weights = msssim_weights(scales)
    value = None
    for j in range(scales):
        s_map, cs_map = ssim_maps(x, y, data_range)
        last = j == scales - 1
        term = ad.mean(s_map if last else cs_map, axis=(1, 2, 3))
        term = ad.pow_scalar(ad.clamp_min(term, MSSSIM_FLOOR), weights[j])
        value = term if value is None else value * term
        if not last:
            x, y = ad.avg_pool2x(x), ad.avg_pool2x(y)
    return ad.mean(value)


def msssim_loss(recon: Tensor, target, scales: int = 3, data_range: float = DATA_RANGE) -> Tensor:
    return 1.0 - ms_ssim(recon, target, scales, data_range)


def ffl_spectrum_weight(mag: np.ndarray, alpha: float) -> np.ndarray:
    """``|F|^alpha / max|F|^alpha`` per plane; planes with zero spectrum get 0."""
    peak = mag.max(axis=(-2, -1), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(peak > 0, (mag / np.where(peak > 0, peak, 1.0)) ** alpha, 0.0)
    return z.astype(mag.dtype)


def ffl_loss(recon: Tensor, target, alpha: float = 0.5, beta: float = 1.0, weight: Optional[np.ndarray] = None) -> Tensor:
    """Focal frequency loss on square ``d x d`` planes.

    ``beta / d^2 * sum_{u,v} z(u,v) |F_recon - F_target|^2`` averaged over
    batch and channels. ``z`` is a detached coefficient; pass ``weight`` to
    supply it instead of deriving it from the current spectrum.
    """
    target = _const(target, recon)
    _check_pair(recon, target, "ffl_loss")
    B, C, H, W = recon.shape
    if H != W:
        raise ValueError(f"ffl_loss needs square planes, got {H}x{W}")
    re, im = ad.dft2d(recon - target)
    mag2 = re * re + im * im
    z = ffl_spectrum_weight(np.sqrt(mag2.data), alpha) if weight is None else np.asarray(weight, dtype=recon.dtype)
    return ad.sum(Tensor(z) * mag2) * (beta / (H * W * B * C))


def total_loss(recon: Tensor, target, weights, spec: LossSpec) -> Tuple[Tensor, Dict[str, float]]:
    """Sum of the active terms (each times its ``coef_*``) plus a per-term breakdown."""
    target = _const(target, recon)
    terms: Dict[str, Tensor] = {}
    if spec.use_l1w:
        terms["l1w"] = l1_weighted(recon, target, weights)
    if spec.use_ssim:
        terms["ssim"] = ssim_loss(recon, target)
    if spec.use_msssim:
        terms["msssim"] = msssim_loss(recon, target, spec.msssim_scales)
    if spec.use_mse:
        terms["mse"] = mse_loss(recon, target)
    if spec.use_ffl:
        terms["ffl"] = ffl_loss(recon, target, spec.ffl_alpha, spec.ffl_beta)
    total: Optional[Tensor] = None
    for name, t in terms.items():
        coef = getattr(spec, f"coef_{name}")
        t = t if coef == 1.0 else t * coef
        total = t if total is None else total + t
    breakdown = {name: float(t.data) for name, t in terms.items()}
    breakdown["total"] = float(total.data)
    return total, breakdown
