import numpy as np
import pytest

from remar_ds.data import (AFFINE_P, FLIP_P, AugmentParams, PhantomSpec, SliceRecord, apply_augment, augment,
                           build_split, classify_artifact, denormalize, file_digests, generate_dataset,
                           generate_patient, load_dataset, normalize_hu, sample_augment, save_dataset)


def _record(peak, modality="kVCT", where=(8, 8)):
    hu = np.zeros((16, 16))
    mask = np.zeros((16, 16), bool)
    mask[4:12, 4:12] = True
    hu[where] = peak
    return SliceRecord(0, 0, "head", modality, hu, mask)


@pytest.mark.parametrize("peak,modality,expected", [
    (2100, "kVCT", True), (1999, "kVCT", False), (2000, "kVCT", False), (2001, "kVCT", True),
    (1001, "MVCT", True), (1000, "MVCT", False), (999, "MVCT", False),
])
def test_classifier_thresholds(peak, modality, expected):
    assert classify_artifact(_record(peak, modality)) is expected


def test_classifier_ignores_values_outside_mask():
    assert not classify_artifact(_record(3500, where=(0, 0)))


def test_classifier_monotone():
    rec = _record(1500)
    rng = np.random.default_rng(0)
    before = classify_artifact(rec)
    for _ in range(50):
        i, j = rng.integers(4, 12, 2)
        rec.hu[i, j] += rng.uniform(0, 400)
        now = classify_artifact(rec)
        assert now or not before
        before = now


def test_no_inserts_means_no_artifacts():
    pairs = generate_patient(3, PhantomSpec(size=32, n_inserts=0, artifact_rate=1.0), 10)
    assert all(np.all(p.artifact == 0) for p in pairs)
    assert not any(p.is_artifact for p in pairs)


def test_insert_triggers_artifact_class():
    pairs = generate_patient(3, PhantomSpec(size=32, n_inserts=1, insert_hu=3200, artifact_rate=1.0), 6)
    assert all(p.kv.hu[p.mask].max() > 2000 for p in pairs)
    assert all(p.is_artifact for p in pairs)


def test_generation_is_deterministic():
    a = generate_patient(11, PhantomSpec(size=32), 5)
    b = generate_patient(11, PhantomSpec(size=32), 5)
    for p, q in zip(a, b):
        assert np.array_equal(p.kv.hu, q.kv.hu) and np.array_equal(p.mv.hu, q.mv.hu)
        assert np.array_equal(p.mask, q.mask) and np.array_equal(p.artifact, q.artifact)


def test_artifact_decomposition():
    pairs = generate_patient(5, PhantomSpec(size=32, artifact_rate=1.0), 4)
    for p in pairs:
        np.testing.assert_allclose(p.kv.hu - p.artifact, p.anatomy, atol=1e-9)
        assert np.all(p.artifact[~p.mask] == 0)
        assert np.any(p.artifact != 0)


def test_records_are_aligned_and_in_range():
    for p in generate_patient(5, PhantomSpec(size=32), 8):
        assert p.kv.hu.shape == p.mv.hu.shape == p.mask.shape
        assert np.array_equal(p.kv.mask, p.mv.mask)
        for rec in (p.kv, p.mv):
            assert rec.hu.min() >= -1024 and rec.hu.max() <= 4000
        assert p.kv.region in ("head", "neck")


def test_insert_outside_body_rejected():
    spec = PhantomSpec(size=32, insert_positions=((0.02, 0.02),), artifact_rate=1.0)
    with pytest.raises(ValueError, match="outside the body"):
        generate_patient(0, spec, 3)


@pytest.mark.parametrize("kwargs", [dict(n_inserts=3), dict(insert_hu=2500), dict(artifact_rate=1.5), dict(size=8)])
def test_invalid_spec_rejected(kwargs):
    with pytest.raises(ValueError):
        PhantomSpec(**kwargs)


def test_split_seventy_thirty():
    pairs = generate_dataset(10, PhantomSpec(size=16), 2, seed=1)
    split = build_split(pairs, 0.7, seed=0)
    assert len(split.train_patients) == 7 and len(split.test_patients) == 3
    assert set(split.val_patients) <= set(split.train_patients)


def test_split_never_leaks_patients():
    pairs = generate_dataset(10, PhantomSpec(size=16), 2, seed=1)
    for seed in range(100):
        split = build_split(pairs, 0.7, seed=seed)
        train = {p.patient_id for p in split.select(pairs, "train")}
        assert all(p.patient_id not in train for p in split.select(pairs, "test"))


def test_split_needs_two_patients():
    with pytest.raises(ValueError):
        build_split(generate_dataset(1, PhantomSpec(size=16), 2), 0.7)


def test_art_subset_and_clean_case():
    pairs = generate_dataset(4, PhantomSpec(size=16, n_inserts=0), 3, seed=2)
    split = build_split(pairs, 0.7, seed=0)
    assert split.art_keys == [] and split.art_fraction == 0.0
    assert len(split.all_keys) == len(pairs)


def test_art_fraction_near_target():
    pairs = generate_dataset(20, PhantomSpec(size=32, artifact_rate=0.15), 20, seed=0)
    split = build_split(pairs, 0.7, seed=0)
    assert set(split.art_keys) <= set(split.all_keys)
    assert 0.10 <= split.art_fraction <= 0.20


def test_normalization():
    assert normalize_hu(0.0) == 0.0
    assert normalize_hu(1000.0) == 1.0
    assert normalize_hu(-1000.0) == -1.0
    assert normalize_hu(3000.0) == 1.0
    hu = np.linspace(-1000, 1000, 101)
    np.testing.assert_allclose(denormalize(normalize_hu(hu)), hu, atol=1e-12)


def test_augment_frequencies():
    rng = np.random.default_rng(0)
    draws = [sample_augment(rng) for _ in range(10_000)]
    flips = np.mean([d.flip for d in draws])
    affines = np.mean([d.affine for d in draws])
    assert FLIP_P == 0.5 and AFFINE_P == 0.8
    assert 0.48 <= flips <= 0.52
    assert 0.78 <= affines <= 0.82
    aff = [d for d in draws if d.affine]
    assert all(abs(s) <= 0.0625 for d in aff for s in d.shift)
    assert all(0.9 <= d.scale <= 1.1 and abs(d.angle) <= 5 for d in aff)


def _slice():
    p = generate_patient(1, PhantomSpec(size=32, artifact_rate=1.0), 1)[0]
    return normalize_hu(p.kv.hu), normalize_hu(p.mv.hu), p.mask


def test_identity_augment():
    kv, mv, mask = _slice()
    out = apply_augment(AugmentParams(), kv, mv, mask, np.ones_like(kv))
    assert np.array_equal(out[0], kv) and np.array_equal(out[1], mv) and np.array_equal(out[2], mask)


def test_flip_is_shared():
    kv, mv, mask = _slice()
    w = np.where(mask, 100.0, 0.1)
    kv_o, mv_o, mask_o, w_o = apply_augment(AugmentParams(flip=True), kv, mv, mask, w)
    assert np.array_equal(kv_o, kv[:, ::-1]) and np.array_equal(mv_o, mv[:, ::-1])
    assert np.array_equal(mask_o, mask[:, ::-1]) and np.array_equal(w_o, w[:, ::-1])


def test_affine_keeps_mask_and_weights_consistent():
    kv, mv, mask = _slice()
    w = np.where(mask, 100.0, 0.1)
    params = AugmentParams(True, True, (0.05, -0.03), 1.08, 4.0)
    _, _, mask_o, w_o = apply_augment(params, kv, mv, mask, w)
    assert set(np.unique(w_o)) <= {100.0, 0.1}
    assert np.array_equal(w_o == 100.0, mask_o)


def test_augment_seeded():
    kv, mv, mask = _slice()
    p1, out1 = augment(kv, mv, mask, seed=3)
    p2, out2 = augment(kv, mv, mask, seed=3)
    assert p1 == p2 and all(np.array_equal(a, b) for a, b in zip(out1[:3], out2[:3]))


def test_dataset_disk_roundtrip(tmp_path):
    pairs = generate_dataset(2, PhantomSpec(size=16, artifact_rate=1.0), 3, seed=4)
    save_dataset(pairs, tmp_path / "d")
    loaded = load_dataset(tmp_path / "d")
    assert [p.key for p in loaded] == [p.key for p in pairs]
    for p, q in zip(pairs, loaded):
        np.testing.assert_array_equal(q.kv.hu, p.kv.hu.astype(np.float32))
        np.testing.assert_array_equal(q.mask, p.mask)
        assert q.is_artifact == p.is_artifact and q.kv.region == p.kv.region
    header = (tmp_path / "d" / "manifest.csv").read_text().splitlines()[0]
    assert header == "patient,slice,region,modality,is_artifact,path,mask_path"


def test_saved_dataset_byte_identical(tmp_path):
    for name in ("a", "b"):
        save_dataset(generate_dataset(2, PhantomSpec(size=16), 3, seed=4), tmp_path / name)
    assert file_digests(tmp_path / "a") == file_digests(tmp_path / "b")
