"""Synthetic paired kVCT/MVCT head-and-neck phantoms.

Each slice pair is built from one shared anatomy map (HU):

* ``kvct = clip(anatomy + streaks)`` and ``artifact = kvct - anatomy``, so
  the artifact map is additive and exactly zero off the streak support;
* ``mvct`` is a smoothed, contrast-compressed copy of the anatomy plus a
  strongly attenuated copy of the streaks and a little noise.

Metal inserts (>= 3000 HU) live in the anatomy itself, so both modalities see
them; the streaks only appear at full strength in kVCT.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .autodiff.serialize import load_tensor, save_tensor

HU_MIN, HU_MAX = -1024.0, 4000.0
WINDOW = (-1000.0, 1000.0)
KVCT_THRESHOLD = 2000.0
MVCT_THRESHOLD = 1000.0
THRESHOLDS = {"kVCT": KVCT_THRESHOLD, "MVCT": MVCT_THRESHOLD}
REGIONS = ("head", "neck", "torso")


@dataclass
class SliceRecord:
    patient_id: int
    slice_index: int
    region: str
    modality: str
    hu: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.modality not in THRESHOLDS:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.region not in REGIONS:
            raise ValueError(f"unknown region {self.region!r}")
        if self.hu.shape != self.mask.shape:
            raise ValueError(f"hu shape {self.hu.shape} != mask shape {self.mask.shape}")

    @property
    def is_artifact(self) -> bool:
        return classify_artifact(self)


@dataclass
class SlicePair:
    kv: SliceRecord
    mv: SliceRecord
    artifact: np.ndarray
    anatomy: Optional[np.ndarray] = None

    @property
    def key(self) -> Tuple[int, int]:
        return (self.kv.patient_id, self.kv.slice_index)

    @property
    def patient_id(self) -> int:
        return self.kv.patient_id

    @property
    def mask(self) -> np.ndarray:
        return self.kv.mask

    @property
    def is_artifact(self) -> bool:
        # either modality crossing its threshold marks the pair
        return self.kv.is_artifact or self.mv.is_artifact


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 64
    n_inserts: int = 1
    insert_hu: float = 3200.0
    insert_radius: float = 2.0
    insert_positions: Optional[Tuple[Tuple[float, float], ...]] = None
    artifact_rate: float = 0.15
    head_fraction: float = 0.55
    tissue_hu: float = 40.0
    bone_hu: float = 900.0
    streak_count: int = 8
    streak_amplitude: float = 500.0
    streak_decay: float = 14.0
    streak_width: float = 0.8
    mv_contrast: float = 0.8
    mv_smoothing: float = 0.8
    mv_artifact_factor: float = 0.1
    mv_noise: float = 8.0

    def __post_init__(self):
        if not 0 <= self.n_inserts <= 2:
            raise ValueError(f"n_inserts must be 0..2, got {self.n_inserts}")
        if self.n_inserts and self.insert_hu < 3000:
            raise ValueError(f"insert_hu must be >= 3000, got {self.insert_hu}")
        if not 0.0 <= self.artifact_rate <= 1.0:
            raise ValueError(f"artifact_rate must be in [0, 1], got {self.artifact_rate}")
        if self.insert_positions is not None and len(self.insert_positions) != self.n_inserts:
            raise ValueError("insert_positions must list exactly n_inserts positions")
        if self.size < 16:
            raise ValueError(f"size must be >= 16, got {self.size}")


# ---------------------------------------------------------------------------
# classification / normalisation


def classify_artifact(record: SliceRecord) -> bool:
    """True iff the maximum HU inside the body mask exceeds the modality threshold."""
    inside = record.hu[np.asarray(record.mask, dtype=bool)]
    if inside.size == 0:
        return False
    return bool(inside.max() > THRESHOLDS[record.modality])


def normalize_hu(hu) -> np.ndarray:
    lo, hi = WINDOW
    hu = np.clip(np.asarray(hu, dtype=np.float64), lo, hi)
    return (hu - lo) / (hi - lo) * 2.0 - 1.0


def denormalize(x) -> np.ndarray:
    lo, hi = WINDOW
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return (x + 1.0) / 2.0 * (hi - lo) + lo


# ---------------------------------------------------------------------------
# phantom geometry


def _ellipse(shape, center, axes, angle=0.0) -> np.ndarray:
    rows, cols = np.indices(shape, dtype=np.float64)
    dr, dc = rows - center[0], cols - center[1]
    ca, sa = np.cos(angle), np.sin(angle)
    u = dr * ca + dc * sa
    v = -dr * sa + dc * ca
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0


@dataclass
class _PatientGeometry:
    body_start: Tuple[float, float]
    body_end: Tuple[float, float]
    skull_thickness: float
    bone_hu: float
    blobs: List[Tuple[float, float, float, float, float]] = field(default_factory=list)
    insert_offsets: List[Tuple[float, float]] = field(default_factory=list)
    art_band: Tuple[int, int] = (0, 0)


def _draw_geometry(rng: np.random.Generator, spec: PhantomSpec, n_slices: int) -> _PatientGeometry:
    d = spec.size
    head = (rng.uniform(0.38, 0.44) * d, rng.uniform(0.32, 0.38) * d)
    neck = (rng.uniform(0.30, 0.35) * d, rng.uniform(0.26, 0.31) * d)
    blobs = [
        (rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(0.08, 0.18), rng.uniform(0.06, 0.14),
         rng.uniform(-60, 60))
        for _ in range(int(rng.integers(3, 6)))
    ]
    # anterior (dental) positions as fractions of the body semi-axes
    if spec.n_inserts == 1:
        offsets = [(-rng.uniform(0.50, 0.62), rng.uniform(-0.2, 0.2))]
    else:
        offsets = [(-rng.uniform(0.50, 0.62), side * rng.uniform(0.15, 0.35)) for side in (-1.0, 1.0)][: spec.n_inserts]
    n_art = 0
    if spec.n_inserts:
        n_art = int(round(spec.artifact_rate * n_slices))
        if 0 < spec.artifact_rate < 1 and n_slices >= 4:
            n_art += int(rng.integers(-1, 2))
        n_art = int(np.clip(n_art, 0, n_slices))
    n_head = max(1, int(round(spec.head_fraction * n_slices)))
    # dental band sits at the bottom of the head region
    stop = min(n_slices, max(n_head, n_art))
    start = stop - n_art
    return _PatientGeometry(
        body_start=head, body_end=neck, skull_thickness=rng.uniform(1.5, 2.5), bone_hu=spec.bone_hu * rng.uniform(0.9, 1.1),
        blobs=blobs, insert_offsets=offsets, art_band=(start, stop),
    )


def _streaks(spec: PhantomSpec, centers, rng: np.random.Generator) -> np.ndarray:
    d = spec.size
    rows, cols = np.indices((d, d), dtype=np.float64)
    out = np.zeros((d, d))
    for r0, c0 in centers:
        dr, dc = rows - r0, cols - c0
        dist = np.hypot(dr, dc)
        phase = rng.uniform(0, np.pi)
        for j in range(spec.streak_count):
            theta = phase + j * np.pi / spec.streak_count
            perp = np.abs(-dr * np.sin(theta) + dc * np.cos(theta))
            sign = 1.0 if j % 2 == 0 else -1.0
            out += sign * spec.streak_amplitude * np.exp(-dist / spec.streak_decay) * np.exp(
                -perp ** 2 / (2 * spec.streak_width ** 2)
            )
    out[np.abs(out) < 1.0] = 0.0
    return out


def generate_patient(seed: int, spec: PhantomSpec = PhantomSpec(), n_slices: int = 20, patient_id: int = 0) -> List[SlicePair]:
    """Deterministic slice pairs for one synthetic patient."""
    if n_slices < 1:
        raise ValueError(f"n_slices must be >= 1, got {n_slices}")
    rng = np.random.default_rng(seed)
    d = spec.size
    geom = _draw_geometry(rng, spec, n_slices)
    n_head = max(1, int(round(spec.head_fraction * n_slices)))
    center = ((d - 1) / 2.0, (d - 1) / 2.0)
    pairs = []
    for s in range(n_slices):
        t = s / max(n_slices - 1, 1)
        axes = tuple((1 - t) * a + t * b for a, b in zip(geom.body_start, geom.body_end))
        region = "head" if s < n_head else "neck"
        mask = _ellipse((d, d), center, axes)
        anatomy = np.full((d, d), -1000.0)
        anatomy[mask] = spec.tissue_hu
        fat = mask & ~_ellipse((d, d), center, (axes[0] - 1.5, axes[1] - 1.5))
        anatomy[fat] = -90.0
        if region == "head":
            inner = (axes[0] - 1.5, axes[1] - 1.5)
            brain = (inner[0] - geom.skull_thickness, inner[1] - geom.skull_thickness)
            skull = _ellipse((d, d), center, inner) & ~_ellipse((d, d), center, brain)
            anatomy[skull] = geom.bone_hu
            anatomy[_ellipse((d, d), center, brain)] = 30.0
        else:
            vert_c = (center[0] + 0.45 * axes[0], center[1])
            anatomy[_ellipse((d, d), vert_c, (0.22 * axes[0], 0.28 * axes[1]))] = geom.bone_hu * 0.8
            anatomy[_ellipse((d, d), vert_c, (0.08 * axes[0], 0.10 * axes[1]))] = 30.0
            airway = (center[0] - 0.35 * axes[0], center[1])
            anatomy[_ellipse((d, d), airway, (0.12 * axes[0], 0.15 * axes[1]))] = -900.0
        for br, bc, ar, ac, dhu in geom.blobs:
            blob = _ellipse((d, d), (center[0] + br * axes[0], center[1] + bc * axes[1]), (ar * axes[0], ac * axes[1]))
            anatomy[blob & (anatomy > -200) & (anatomy < 200)] += dhu

        has_metal = geom.art_band[0] <= s < geom.art_band[1]
        centers: List[Tuple[float, float]] = []
        if has_metal:
            if spec.insert_positions is not None:
                centers = [(r * (d - 1), c * (d - 1)) for r, c in spec.insert_positions]
            else:
                centers = [(center[0] + fr * axes[0], center[1] + fc * axes[1]) for fr, fc in geom.insert_offsets]
            for r0, c0 in centers:
                disk = _ellipse((d, d), (r0, c0), (spec.insert_radius, spec.insert_radius))
                if not disk.any() or np.any(disk & ~mask):
                    raise ValueError(f"metal insert at ({r0:.1f}, {c0:.1f}) lies outside the body")
                anatomy[disk] = spec.insert_hu
        anatomy = np.clip(anatomy, HU_MIN, HU_MAX)

        streak_rng = np.random.default_rng(rng.integers(2 ** 63))
        streaks = _streaks(spec, centers, streak_rng) * mask if centers else np.zeros((d, d))
        kv = np.clip(anatomy + streaks, HU_MIN, HU_MAX)
        artifact = kv - anatomy

        mv = ndimage.gaussian_filter(anatomy, spec.mv_smoothing, mode="nearest") * spec.mv_contrast
        if centers:
            mv = mv + spec.mv_artifact_factor * ndimage.gaussian_filter(streaks, 1.0)
        mv = mv + spec.mv_noise * rng.standard_normal((d, d)) * mask
        mv = np.clip(mv, HU_MIN, HU_MAX)

        pairs.append(
            SlicePair(
                kv=SliceRecord(patient_id, s, region, "kVCT", kv, mask.copy()),
                mv=SliceRecord(patient_id, s, region, "MVCT", mv, mask.copy()),
                artifact=artifact,
                anatomy=anatomy,
            )
        )
    return pairs


def generate_dataset(n_patients: int, spec: PhantomSpec = PhantomSpec(), slices_per_patient: int = 20, seed: int = 0) -> List[SlicePair]:
    """Patients get independent sub-seeds; output is ordered by patient id."""
    seqs = np.random.SeedSequence(seed).spawn(n_patients)
    pairs: List[SlicePair] = []
    for pid, ss in enumerate(seqs):
        pairs.extend(generate_patient(int(ss.generate_state(1)[0]), spec, slices_per_patient, patient_id=pid))
    return pairs


# ---------------------------------------------------------------------------
# splits


@dataclass
class DatasetSplit:
    train_patients: List[int]
    test_patients: List[int]
    val_patients: List[int]
    all_keys: List[Tuple[int, int]]
    art_keys: List[Tuple[int, int]]

    def __post_init__(self):
        overlap = set(self.train_patients) & set(self.test_patients)
        if overlap:
            raise ValueError(f"patients in both train and test: {sorted(overlap)}")

    @property
    def art_fraction(self) -> float:
        return len(self.art_keys) / len(self.all_keys) if self.all_keys else 0.0

    def in_art(self, key) -> bool:
        return tuple(key) in self._art_set

    @property
    def _art_set(self):
        return set(map(tuple, self.art_keys))

    def select(self, pairs: Sequence[SlicePair], part: str, dataset: str = "D_All") -> List[SlicePair]:
        """Pairs of ``part`` in {train, fit, val, test} restricted to ``dataset`` in {D_All, D_Art}.

        ``train`` is every training patient; ``fit`` excludes the validation shard.
        """
        if dataset not in ("D_All", "D_Art"):
            raise ValueError(f"dataset must be D_All or D_Art, got {dataset!r}")
        ids = {
            "train": set(self.train_patients),
            "fit": set(self.train_patients) - set(self.val_patients),
            "val": set(self.val_patients),
            "test": set(self.test_patients),
        }[part]
        art = self._art_set
        return [p for p in pairs if p.patient_id in ids and (dataset == "D_All" or p.key in art)]


def build_split(pairs: Sequence[SlicePair], train_fraction: float = 0.7, seed: int = 0, val_fraction: float = 0.1) -> DatasetSplit:
    patients = sorted({p.patient_id for p in pairs})
    if len(patients) < 2:
        raise ValueError(f"need at least 2 patients for a patient-wise split, got {len(patients)}")
    order = list(np.random.default_rng(seed).permutation(patients))
    n_train = int(np.clip(round(train_fraction * len(patients)), 1, len(patients) - 1))
    train = sorted(int(p) for p in order[:n_train])
    test = sorted(int(p) for p in order[n_train:])
    n_val = max(1, int(round(val_fraction * n_train))) if n_train >= 2 else 0
    val = sorted(int(p) for p in order[:n_train][-n_val:]) if n_val else []
    keys = [p.key for p in pairs]
    art = [p.key for p in pairs if p.is_artifact]
    return DatasetSplit(train, test, val, keys, art)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    affine: bool = False
    shift: Tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    angle: float = 0.0

    @property
    def is_identity(self) -> bool:
        return not self.flip and not self.affine


FLIP_P = 0.5
AFFINE_P = 0.8
SHIFT_LIMIT = 0.0625
SCALE_LIMIT = 0.1
ROTATE_LIMIT = 5.0


def sample_augment(rng: np.random.Generator) -> AugmentParams:
    flip = bool(rng.random() < FLIP_P)
    affine = bool(rng.random() < AFFINE_P)
    if not affine:
        return AugmentParams(flip=flip)
    shift = tuple(float(v) for v in rng.uniform(-SHIFT_LIMIT, SHIFT_LIMIT, size=2))
    scale = float(rng.uniform(1 - SCALE_LIMIT, 1 + SCALE_LIMIT))
    angle = float(rng.uniform(-ROTATE_LIMIT, ROTATE_LIMIT))
    return AugmentParams(flip, True, shift, scale, angle)


def _warp(img: np.ndarray, params: AugmentParams, order: int, cval: float) -> np.ndarray:
    out = img[:, ::-1] if params.flip else img
    if not params.affine:
        return np.array(out, copy=True)
    h, w = img.shape
    c = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    t = np.array(params.shift) * np.array([h, w])
    a = np.deg2rad(params.angle)
    rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    # output pixel o samples input at R^T (o - c - t) / s + c
    matrix = rot.T / params.scale
    offset = c - matrix @ (c + t)
    return ndimage.affine_transform(out, matrix, offset=offset, order=order, mode="constant", cval=cval)


def apply_augment(params: AugmentParams, kv: np.ndarray, mv: np.ndarray, mask: np.ndarray, weights: Optional[np.ndarray] = None):
    """Apply one shared geometric transform to a slice pair and its maps.

    Intensities use bilinear resampling filled with each image's minimum;
    the mask and weight map use nearest-neighbour resampling.
    """
    kv_o = _warp(np.asarray(kv, dtype=np.float64), params, 1, float(np.min(kv)))
    mv_o = _warp(np.asarray(mv, dtype=np.float64), params, 1, float(np.min(mv)))
    mask_o = _warp(np.asarray(mask, dtype=np.float64), params, 0, 0.0) > 0.5
    w_o = None if weights is None else _warp(np.asarray(weights, dtype=np.float64), params, 0, float(np.min(weights)))
    return kv_o, mv_o, mask_o, w_o


def augment(kv, mv, mask, weights=None, seed=None):
    """Sample parameters from ``seed`` (int or Generator) and apply them."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = sample_augment(rng)
    return params, apply_augment(params, kv, mv, mask, weights)


# ---------------------------------------------------------------------------
# on-disk dataset


MANIFEST_FIELDS = ["patient", "slice", "region", "modality", "is_artifact", "path", "mask_path"]


def save_dataset(pairs: Sequence[SlicePair], out: Path) -> Path:
    """One directory per patient plus ``manifest.csv``; returns the manifest path."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in sorted(pairs, key=lambda q: q.key):
        pdir = out / f"patient_{p.patient_id:03d}"
        pdir.mkdir(exist_ok=True)
        stem = f"slice_{p.kv.slice_index:03d}"
        mask_rel = f"{pdir.name}/{stem}_mask.rmds"
        save_tensor(out / mask_rel, p.mask.astype(np.float32))
        save_tensor(pdir / f"{stem}_artifact.rmds", p.artifact.astype(np.float32))
        for rec, tag in ((p.kv, "kvct"), (p.mv, "mvct")):
            rel = f"{pdir.name}/{stem}_{tag}.rmds"
            save_tensor(out / rel, rec.hu.astype(np.float32))
            rows.append([rec.patient_id, rec.slice_index, rec.region, rec.modality, int(rec.is_artifact), rel, mask_rel])
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        writer.writerows(rows)
    return manifest


def load_dataset(root: Path) -> List[SlicePair]:
    root = Path(root)
    with open(root / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    grouped: Dict[Tuple[int, int], Dict[str, SliceRecord]] = {}
    for row in rows:
        key = (int(row["patient"]), int(row["slice"]))
        hu = load_tensor(root / row["path"]).astype(np.float64)
        mask = load_tensor(root / row["mask_path"]) > 0.5
        grouped.setdefault(key, {})[row["modality"]] = SliceRecord(key[0], key[1], row["region"], row["modality"], hu, mask)
    pairs = []
    for key in sorted(grouped):
        recs = grouped[key]
        if set(recs) != {"kVCT", "MVCT"}:
            raise ValueError(f"slice {key} is missing a modality")
        art_path = root / f"patient_{key[0]:03d}" / f"slice_{key[1]:03d}_artifact.rmds"
        artifact = load_tensor(art_path).astype(np.float64) if art_path.exists() else np.zeros_like(recs["kVCT"].hu)
        pairs.append(SlicePair(recs["kVCT"], recs["MVCT"], artifact))
    return pairs


def file_digests(root: Path) -> Dict[str, str]:
    root = Path(root)
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def to_batch(pairs: Sequence[SlicePair]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack normalised ``(kv, mv, mask, is_artifact)`` arrays, ``[B, 1, H, W]``."""
    kv = np.stack([normalize_hu(p.kv.hu) for p in pairs])[:, None]
    mv = np.stack([normalize_hu(p.mv.hu) for p in pairs])[:, None]
    mask = np.stack([p.mask for p in pairs])[:, None]
    art = np.array([p.is_artifact for p in pairs], dtype=bool)
    return kv, mv, mask, art
