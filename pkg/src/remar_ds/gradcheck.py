"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .autodiff import Tensor, no_grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_leaf: Dict[str, float] = field(default_factory=dict)
    checked_entries: int = 0

    def passed(self, tol: float) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < tol)


def _rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(
    loss_fn: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    names: Optional[Sequence[str]] = None,
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must close over ``leaves`` and rebuild the graph on each call;
    leaf data is perturbed in place and restored. When ``max_entries`` is set,
    that many entries per leaf are sampled instead of checking all of them.

    The per-entry error is ``|a - n| / max(|a|, |n|, floor)`` with
    ``floor = 1e-6 * max(1, max |n|)`` so exact zeros do not blow up.
    """
    names = list(names) if names is not None else [f"leaf{i}" for i in range(len(leaves))]
    for t in leaves:
        # in-place perturbation below relies on reshape(-1) returning a view
        if not t.data.flags.c_contiguous:
            t.data = t.data.copy()
        t.grad = None
        t.requires_grad = True
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]

    rng = np.random.default_rng(seed)
    pairs = []
    with no_grad():
        for t, ga in zip(leaves, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            num = np.empty(idx.size)
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(loss_fn().data)
                flat[i] = orig - eps
                down = float(loss_fn().data)
                flat[i] = orig
                num[n] = (up - down) / (2 * eps)
            pairs.append((ga.reshape(-1)[idx], num))

    scale = max([1.0] + [float(np.max(np.abs(n))) for _, n in pairs if n.size])
    floor = 1e-6 * scale
    per_leaf = {name: _rel_error(a, n, floor) for name, (a, n) in zip(names, pairs)}
    total = sum(n.size for _, n in pairs)
    return GradCheckResult(max(per_leaf.values(), default=0.0), per_leaf, total)
