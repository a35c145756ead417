"""Masked PSNR/SSIM evaluation restricted to the body region."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from .autodiff import Tensor, no_grad
from .data import DatasetSplit, SlicePair, denormalize, to_batch
from .losses import SSIM_WINDOW, ssim_maps

PSNR_CAP = 100.0
NORM_RANGE = 2.0
HU_RANGE = 2000.0


class PSNR(NamedTuple):
    db: float
    capped: bool


def _plane(x) -> np.ndarray:
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    arr = np.squeeze(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected a single 2-D plane, got shape {np.shape(x)}")
    return arr


def _mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    m = np.squeeze(m).astype(bool)
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} != image shape {shape}")
    if not m.any():
        raise ValueError("mask is empty")
    return m


def masked_psnr(recon, target, mask, data_range: float = NORM_RANGE) -> PSNR:
    """PSNR over mask pixels only; zero error is reported as ``PSNR_CAP`` with ``capped=True``."""
    r, t = _plane(recon), _plane(target)
    if r.shape != t.shape:
        raise ValueError(f"recon shape {r.shape} != target shape {t.shape}")
    m = _mask(mask, r.shape)
    mse = float(np.mean((r[m] - t[m]) ** 2))
    if mse == 0.0:
        return PSNR(PSNR_CAP, True)
    return PSNR(float(min(PSNR_CAP, 10.0 * np.log10(data_range ** 2 / mse))), False)


def ssim_map(recon, target) -> np.ndarray:
    """Valid-window SSIM map of two planes; entry ``(i, j)`` is centred on pixel ``(i+5, j+5)``."""
    r, t = _plane(recon), _plane(target)
    with no_grad():
        s, _ = ssim_maps(Tensor(r[None, None]), Tensor(t[None, None]))
    return s.data[0, 0]


def masked_ssim(recon, target, mask) -> float:
    """Mean SSIM over the windows whose centre pixel lies inside the mask."""
    r = _plane(recon)
    m = _mask(mask, r.shape)
    smap = ssim_map(recon, target)
    half = SSIM_WINDOW // 2
    centres = m[half:half + smap.shape[0], half:half + smap.shape[1]]
    if not centres.any():
        raise ValueError("no mask pixel is a valid SSIM window centre")
    return float(smap[centres].mean())


@dataclass
class SliceMetrics:
    patient_id: int
    slice_index: int
    in_art: bool
    psnr: float
    psnr_capped: bool
    ssim: float
    psnr_hu: float
    psnr_full: float
    ssim_full: float


@dataclass
class EvalReport:
    rows: List[SliceMetrics]
    label: str = ""

    def _agg(self, attr: str, art_only: bool) -> float:
        vals = [getattr(r, attr) for r in self.rows if r.in_art or not art_only]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def art_psnr(self) -> float:
        return self._agg("psnr", True)

    @property
    def art_ssim(self) -> float:
        return self._agg("ssim", True)

    @property
    def all_psnr(self) -> float:
        return self._agg("psnr", False)

    @property
    def all_ssim(self) -> float:
        return self._agg("ssim", False)

    @property
    def all_psnr_full(self) -> float:
        return self._agg("psnr_full", False)

    @property
    def all_ssim_full(self) -> float:
        return self._agg("ssim_full", False)

    def per_patient(self) -> Dict[int, Dict[str, float]]:
        out: Dict[int, Dict[str, float]] = {}
        for pid in sorted({r.patient_id for r in self.rows}):
            rows = [r for r in self.rows if r.patient_id == pid]
            out[pid] = {
                "slices": len(rows),
                "psnr": float(np.mean([r.psnr for r in rows])),
                "ssim": float(np.mean([r.ssim for r in rows])),
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["patient", "slice", "in_d_art", "in_d_all", "psnr_db", "psnr_capped", "ssim", "psnr_hu_db", "psnr_full_db", "ssim_full"])
        for r in self.rows:
            w.writerow([r.patient_id, r.slice_index, int(r.in_art), 1, f"{r.psnr:.6f}", int(r.psnr_capped),
                        f"{r.ssim:.6f}", f"{r.psnr_hu:.6f}", f"{r.psnr_full:.6f}", f"{r.ssim_full:.6f}"])
        return buf.getvalue()

    def summary(self) -> str:
        """One row in the D_Art PSNR/SSIM, D_All PSNR (full), SSIM (full) layout."""
        return (
            f"{self.label or 'model'}: D_Art PSNR {self.art_psnr:.3f} SSIM {self.art_ssim:.3f} | "
            f"D_All PSNR {self.all_psnr:.3f} ({self.all_psnr_full:.3f}) SSIM {self.all_ssim:.3f} ({self.all_ssim_full:.3f})"
        )


Predictor = Callable[[np.ndarray], np.ndarray]


def _as_predictor(model, batch_size: int) -> Predictor:
    if hasattr(model, "forward") and hasattr(model, "config"):
        model.eval()

        def predict(x: np.ndarray) -> np.ndarray:
            outs = []
            with no_grad():
                for i in range(0, len(x), batch_size):
                    chunk = x[i:i + batch_size].astype(model.config.dtype)
                    outs.append(model(chunk, mode="eval").data)
            return np.concatenate(outs).astype(np.float64)

        return predict
    return model


def evaluate_pairs(model, pairs: Sequence[SlicePair], art_keys, label: str = "", batch_size: int = 1) -> EvalReport:
    """Metrics for every pair; ``model`` is a network or any ``[B,1,H,W] -> [B,1,H,W]`` callable.

    Slices go through the network one at a time by default so each result
    is independent of batch composition.
    """
    if not pairs:
        raise ValueError("nothing to evaluate")
    pairs = sorted(pairs, key=lambda p: p.key)
    art = set(map(tuple, art_keys))
    kv, mv, mask, _ = to_batch(pairs)
    recon = np.asarray(_as_predictor(model, batch_size)(kv), dtype=np.float64)
    full = np.ones(mask.shape[2:], dtype=bool)
    rows = []
    for i, p in enumerate(pairs):
        r, t, m = recon[i, 0], mv[i, 0], mask[i, 0]
        ps = masked_psnr(r, t, m)
        rows.append(SliceMetrics(
            patient_id=p.patient_id, slice_index=p.kv.slice_index, in_art=p.key in art,
            psnr=ps.db, psnr_capped=ps.capped, ssim=masked_ssim(r, t, m),
            psnr_hu=masked_psnr(denormalize(r), denormalize(t), m, HU_RANGE).db,
            psnr_full=masked_psnr(r, t, full).db, ssim_full=masked_ssim(r, t, full),
        ))
    return EvalReport(rows, label)


def evaluate_split(model, split: DatasetSplit, pairs: Sequence[SlicePair], label: str = "", batch_size: int = 1) -> EvalReport:
    """Evaluate on the split's test patients; D_Art rows are flagged via the split."""
    test = split.select(pairs, "test", "D_All")
    if not test:
        raise ValueError("split has no test slices")
    return evaluate_pairs(model, test, split.art_keys, label, batch_size)


def identity_predictor(pairs: Sequence[SlicePair]) -> Predictor:
    """Returns the normalised MVCT target for each input, matched by position."""
    _, mv, _, _ = to_batch(sorted(pairs, key=lambda p: p.key))
    return lambda x: mv[: len(x)]
