"""Slow, direct-formula reference implementations.

These deliberately share no code with the production paths: windows are
explicit 2-D loops, statistics use centred sums, and the DFT is an explicit
sum of complex exponentials.
"""
from __future__ import annotations

import math

import numpy as np

WINDOW = 11
SIGMA = 1.5
C1 = (0.01 * 2.0) ** 2
C2 = (0.03 * 2.0) ** 2


def direct_dft2d(x: np.ndarray) -> np.ndarray:
    """Unnormalised 2-D DFT of a single plane by explicit double summation."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape
    out = np.zeros((h, w), dtype=np.complex128)
    n = np.arange(h)[:, None]
    m = np.arange(w)[None, :]
    for u in range(h):
        for v in range(w):
            out[u, v] = np.sum(x * np.exp(-2j * math.pi * (u * n / h + v * m / w)))
    return out


def direct_conv2d(x: np.ndarray, w: np.ndarray, b=None, stride: int = 1, pad=(0, 0)) -> np.ndarray:
    """Nested-loop cross-correlation, ``[B, Cin, H, W] x [Cout, Cin, k, k]``."""
    B, Cin, H, W = x.shape
    Cout, _, k, _ = w.shape
    lo, hi = pad
    xp = np.zeros((B, Cin, H + lo + hi, W + lo + hi))
    xp[:, :, lo:lo + H, lo:lo + W] = x
    Ho = (H + lo + hi - k) // stride + 1
    Wo = (W + lo + hi - k) // stride + 1
    out = np.zeros((B, Cout, Ho, Wo))
    for bi in range(B):
        for o in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[bi, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[bi, o, i, j] = np.sum(patch * w[o]) + (0.0 if b is None else b[o])
    return out


def gaussian_window_2d() -> np.ndarray:
    win = np.zeros((WINDOW, WINDOW))
    for i in range(WINDOW):
        for j in range(WINDOW):
            di, dj = i - WINDOW // 2, j - WINDOW // 2
            win[i, j] = math.exp(-(di * di + dj * dj) / (2 * SIGMA * SIGMA))
    return win / win.sum()


def ssim_and_cs_maps(x: np.ndarray, y: np.ndarray):
    """Per-window SSIM and contrast-structure using centred weighted moments."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    g = gaussian_window_2d()
    h, w = x.shape
    ho, wo = h - WINDOW + 1, w - WINDOW + 1
    s_map = np.zeros((ho, wo))
    cs_map = np.zeros((ho, wo))
    for i in range(ho):
        for j in range(wo):
            px = x[i:i + WINDOW, j:j + WINDOW]
            py = y[i:i + WINDOW, j:j + WINDOW]
            mx = np.sum(g * px)
            my = np.sum(g * py)
            vx = np.sum(g * (px - mx) ** 2)
            vy = np.sum(g * (py - my) ** 2)
            cxy = np.sum(g * (px - mx) * (py - my))
            cs = (2 * cxy + C2) / (vx + vy + C2)
            s_map[i, j] = (2 * mx * my + C1) / (mx * mx + my * my + C1) * cs
            cs_map[i, j] = cs
    return s_map, cs_map


def brute_ssim(x: np.ndarray, y: np.ndarray) -> float:
    return float(ssim_and_cs_maps(x, y)[0].mean())


def _halve(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    out = np.zeros((h // 2, w // 2))
    for i in range(h // 2):
        for j in range(w // 2):
            out[i, j] = (x[2 * i, 2 * j] + x[2 * i + 1, 2 * j] + x[2 * i, 2 * j + 1] + x[2 * i + 1, 2 * j + 1]) / 4
    return out


def brute_msssim(x: np.ndarray, y: np.ndarray, scales: int = 3) -> float:
    base = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333][:scales]
    weights = [b / sum(base) for b in base]
    value = 1.0
    for j in range(scales):
        s_map, cs_map = ssim_and_cs_maps(x, y)
        term = s_map.mean() if j == scales - 1 else cs_map.mean()
        value *= max(term, 1e-8) ** weights[j]
        if j < scales - 1:
            x, y = _halve(x), _halve(y)
    return float(value)


def brute_ffl(recon: np.ndarray, target: np.ndarray, alpha: float, beta: float) -> float:
    """Focal frequency loss of one plane via the direct DFT."""
    d = recon.shape[0]
    diff = direct_dft2d(recon) - direct_dft2d(target)
    mag = np.abs(diff)
    peak = mag.max()
    total = 0.0
    for u in range(d):
        for v in range(d):
            z = 0.0 if peak == 0 else (mag[u, v] / peak) ** alpha
            total += z * mag[u, v] ** 2
    return float(beta * total / (d * d))


def brute_masked_psnr(recon, target, mask, data_range: float = 2.0) -> float:
    se, n = 0.0, 0
    for (i, j), m in np.ndenumerate(mask):
        if m:
            se += (recon[i, j] - target[i, j]) ** 2
            n += 1
    mse = se / n
    return 100.0 if mse == 0 else 10 * math.log10(data_range ** 2 / mse)


def brute_masked_ssim(recon, target, mask) -> float:
    s_map, _ = ssim_and_cs_maps(recon, target)
    half = WINDOW // 2
    vals = [s_map[i, j] for i in range(s_map.shape[0]) for j in range(s_map.shape[1]) if mask[i + half, j + half]]
    return float(np.mean(vals))
