"""8-bit grayscale PNG rendering with a linear HU display window."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .data import WINDOW

GAP = 2


def window_to_uint8(hu, window=WINDOW) -> np.ndarray:
    """Map ``window[0]`` -> 0 and ``window[1]`` -> 255 linearly, clamping outside."""
    lo, hi = window
    scaled = (np.clip(np.asarray(hu, dtype=np.float64), lo, hi) - lo) / (hi - lo) * 255.0
    return np.rint(scaled).astype(np.uint8)


def panel_strip(images_hu: Sequence[np.ndarray], gap: int = GAP) -> np.ndarray:
    """Concatenate HU planes side by side with black separators."""
    tiles = [window_to_uint8(im) for im in images_hu]
    h = tiles[0].shape[0]
    if any(t.shape[0] != h for t in tiles):
        raise ValueError("panels must share a height")
    sep = np.zeros((h, gap), dtype=np.uint8)
    parts = []
    for i, t in enumerate(tiles):
        if i:
            parts.append(sep)
        parts.append(t)
    return np.concatenate(parts, axis=1)


def save_comparison(path, kv_hu: np.ndarray, recon_hu: np.ndarray, target_hu: Optional[np.ndarray] = None) -> Path:
    """Triptych (input, reconstruction, target) or a diptych when no target is given."""
    panels = [kv_hu, recon_hu] + ([] if target_hu is None else [target_hu])
    path = Path(path)
    Image.fromarray(panel_strip(panels)).save(path, format="PNG")
    return path
