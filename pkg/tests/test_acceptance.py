"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line with its measured numbers; the
lines are printed in the pytest terminal summary (see ``conftest.py``).
"""
import csv
import time

import numpy as np
import pytest

from remar_ds.cli import main as cli_main
from remar_ds.data import (PhantomSpec, SliceRecord, build_split, classify_artifact, file_digests, generate_dataset,
                           sample_augment, to_batch)
from remar_ds.losses import preset
from remar_ds.metrics import evaluate_split, masked_psnr
from remar_ds.network import VARIANTS, EnResB, ModelConfig, ReMARDS, parameter_count
from remar_ds.trainer import (TrainConfig, format_table1, grid_csv, run_grid, table1_presets, table2_presets, train,
                              train_on_split)
from remar_ds.verify import GRAD_CASES, oracle_errors, parameter_count_errors, run_grad_case

RESULTS = []

GRAD_TOL = 1e-4
E2E_TOL = 1e-3
ORACLE_TOL = 1e-8
DFT_TOL = 1e-9
PARSEVAL_TOL = 1e-9


def _record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def desk_data():
    pairs = generate_dataset(6, PhantomSpec(size=64, artifact_rate=0.3), 8, seed=5)
    return pairs, build_split(pairs, 0.7, seed=5)


DESK_MODEL = ModelConfig(levels=3, base_channels=8)


def test_criterion_1_gradients():
    t0 = time.perf_counter()
    worst = {}
    failures = []
    for name in GRAD_CASES:
        for seed in range(5):
            err, tol = run_grad_case(name, seed)
            expected = E2E_TOL if name == "model end-to-end" else GRAD_TOL
            if tol > expected:
                failures.append(f"{name} uses tolerance {tol}")
            worst[name] = max(worst.get(name, 0.0), err)
            if not err < expected:
                failures.append(f"{name} seed {seed}: {err:.2e}")
    elapsed = time.perf_counter() - t0
    ops = {k: v for k, v in worst.items() if k != "model end-to-end"}
    detail = (f"{len(GRAD_CASES)} cases x 5 seeds, max op error {max(ops.values()):.2e} (< {GRAD_TOL:g}), "
              f"end-to-end {worst['model end-to-end']:.2e} (< {E2E_TOL:g}), {elapsed:.1f}s (< 120s)")
    if failures:
        detail += "; " + "; ".join(failures[:5])
    _record(1, "gradient correctness", not failures and elapsed < 120, detail)


def test_criterion_2_oracles():
    limits = {"ssim": ORACLE_TOL, "ms-ssim": ORACLE_TOL, "ffl": ORACLE_TOL, "masked psnr": ORACLE_TOL,
              "masked ssim": ORACLE_TOL, "dft2d": DFT_TOL, "ffl parseval": PARSEVAL_TOL}
    worst = {k: 0.0 for k in limits}
    for seed in range(5):
        for name, (err, _) in oracle_errors(seed).items():
            worst[name] = max(worst[name], err)
    ok = all(worst[k] < limits[k] for k in limits)
    detail = ", ".join(f"{k} {worst[k]:.1e}" for k in limits)
    _record(2, "oracle equivalence", ok, detail + " over 5 random 32x32 draws")


def test_criterion_3_architecture(desk_data):
    problems = []
    for size in (32, 64):
        for levels in (2, 3, 4):
            model = ReMARDS(ModelConfig(levels=levels, base_channels=4), seed=0)
            x = np.random.default_rng(size + levels).standard_normal((2, 1, size, size))
            if model(x, noise_seed=0, mode="train").shape != x.shape:
                problems.append(f"shape L={levels} size={size}")
    count_errors = {k: e for k, (e, _) in parameter_count_errors().items() if e != 0}
    problems += [f"count {k}" for k in count_errors]
    for c in (2, 8, 32):
        if not EnResB(c, separable=True).num_parameters() < EnResB(c, separable=False).num_parameters():
            problems.append(f"EnResB not cheaper at C={c}")

    pairs, split = desk_data
    runs = []
    for p in table2_presets():
        cfg = TrainConfig(epochs=10, max_steps=10, seed=1, train_dataset="D_All", loss_spec=p.loss_spec,
                          model_config=DESK_MODEL.variant(p.variant))
        try:
            res = train_on_split(cfg, pairs, split)
            rep = evaluate_split(res.model, split, pairs)
            ok = res.steps == 10 and np.isfinite(rep.all_psnr) and np.isfinite(rep.art_psnr)
            runs.append(f"{p.name}={parameter_count(cfg.model_config)}p/{rep.all_psnr:.2f}dB")
            if not ok:
                problems.append(f"{p.name} trained {res.steps} steps or non-finite metrics")
        except Exception as exc:  # noqa: BLE001
            problems.append(f"{p.name}: {exc}")
    detail = f"shapes 2x3 ok, counts {len(parameter_count_errors())} exact, variants [{', '.join(runs)}]"
    if problems:
        detail += "; problems: " + "; ".join(problems)
    _record(3, "architecture invariants", not problems, detail)


def _overfit_pairs():
    pool = generate_dataset(2, PhantomSpec(size=64), 20, seed=0)
    art = [p for p in pool if p.is_artifact][:4]
    clean = [p for p in pool if not p.is_artifact][:4]
    return art + clean


@pytest.mark.slow
def test_criterion_4_overfit():
    pairs = _overfit_pairs()
    assert len(pairs) == 8
    cfg = TrainConfig(epochs=500, batch_size=8, lr0=1e-4, lr_halve_every=10 ** 9, augment=False, validate=False,
                      loss_spec=preset("L1+SSIM+FFL"), model_config=ModelConfig(levels=3, base_channels=8), seed=0)
    t0 = time.perf_counter()
    res = train(cfg, pairs)
    elapsed = time.perf_counter() - t0
    kv, mv, mask, _ = to_batch(pairs)
    out = res.model(kv.astype(np.float32), mode="eval").data
    base = float(np.mean([masked_psnr(a, b, m).db for a, b, m in zip(kv, mv, mask)]))
    got = float(np.mean([masked_psnr(a, b, m).db for a, b, m in zip(out, mv, mask)]))
    ratio = res.losses[-1] / res.losses[0]
    ok = res.steps <= 500 and ratio < 0.1 and got - base >= 3.0 and elapsed < 600
    detail = (f"{res.steps} steps, loss {res.losses[0]:.2f} -> {res.losses[-1]:.3f} (ratio {ratio:.4f} < 0.1), "
              f"masked PSNR {base:.2f} -> {got:.2f} dB (gain {got - base:.2f} >= 3), {elapsed:.0f}s (< 600s)")
    _record(4, "overfit learning signal", ok, detail)


def test_criterion_5_protocol(tmp_path):
    problems = []
    pairs = generate_dataset(1, PhantomSpec(size=16), 4, seed=1)
    cfg = TrainConfig(epochs=45, batch_size=4, augment=False, validate=False, seed=0,
                      model_config=ModelConfig(levels=2, base_channels=2))
    res = train(cfg, pairs, out_dir=tmp_path)
    with open(tmp_path / "epoch_log.csv") as fh:
        lrs = [(int(r["epoch"]), float(r["lr"])) for r in csv.DictReader(fh)]
    bad_lr = [e for e, lr in lrs if lr != 1e-4 * 0.5 ** (e // 20)]
    if len(lrs) != 45 or bad_lr:
        problems.append(f"lr mismatch at epochs {bad_lr}")
    max_norm = max(res.grad_norms)
    clipped = sum(n > 1.0 - 1e-5 for n in res.grad_norms)
    if max_norm > 1.0 + 1e-9:
        problems.append(f"post-clip norm {max_norm}")

    split_pairs = generate_dataset(10, PhantomSpec(size=16), 2, seed=1)
    overlaps = 0
    for seed in range(100):
        s = build_split(split_pairs, 0.7, seed=seed)
        train_ids = {p.patient_id for p in s.select(split_pairs, "train")}
        overlaps += sum(p.patient_id in train_ids for p in s.select(split_pairs, "test"))
    if overlaps:
        problems.append(f"{overlaps} leaked slices")

    rng = np.random.default_rng(0)
    draws = [sample_augment(rng) for _ in range(10_000)]
    flip = float(np.mean([d.flip for d in draws]))
    affine = float(np.mean([d.affine for d in draws]))
    if not (0.48 <= flip <= 0.52 and 0.78 <= affine <= 0.82):
        problems.append(f"augment frequencies {flip:.3f}/{affine:.3f}")

    def rec(v, modality):
        hu = np.zeros((8, 8))
        hu[4, 4] = v
        return SliceRecord(0, 0, "head", modality, hu, np.ones((8, 8), bool))

    fixtures = [(1999, "kVCT", False), (2001, "kVCT", True), (999, "MVCT", False), (1001, "MVCT", True)]
    wrong = [f for f in fixtures if classify_artifact(rec(f[0], f[1])) != f[2]]
    if wrong:
        problems.append(f"classifier wrong on {wrong}")
    detail = (f"lr exact over {len(lrs)} epochs, max post-clip norm {max_norm:.6f} ({clipped} clipped steps), "
              f"0 overlap in 100 splits, flip {flip:.4f}, affine {affine:.4f}, thresholds 1999/2001 and 999/1001 ok")
    if problems:
        detail += "; problems: " + "; ".join(problems)
    _record(5, "protocol fidelity", not problems, detail)


def test_criterion_6_determinism(desk_data, tmp_path):
    pairs, _ = desk_data
    cfg = TrainConfig(epochs=10, max_steps=10, seed=4, model_config=DESK_MODEL, loss_spec=preset("L1+SSIM+FFL"))
    a = train(cfg, pairs[:16]).losses
    b = train(cfg, pairs[:16]).losses
    args = ["--patients", "3", "--slices", "4", "--size", "64", "--seed", "9"]
    assert cli_main(["gen-data", "--out", str(tmp_path / "a"), *args]) == 0
    assert cli_main(["gen-data", "--out", str(tmp_path / "b"), *args]) == 0
    da, db = file_digests(tmp_path / "a"), file_digests(tmp_path / "b")
    ok = len(a) == 10 and a == b and da == db
    detail = f"10-step losses identical: {a == b}, gen-data {len(da)} files byte-identical: {da == db}"
    _record(6, "determinism", ok, detail)


def test_criterion_7_grid(desk_data, tmp_path):
    pairs, split = desk_data
    base = TrainConfig(epochs=6, max_steps=30, seed=2, model_config=DESK_MODEL)
    t0 = time.perf_counter()
    rows = run_grid(table1_presets(), pairs, split, base, tmp_path)
    elapsed = time.perf_counter() - t0
    table = format_table1(rows)
    (tmp_path / "table1.txt").write_text(table)
    (tmp_path / "grid.csv").write_text(grid_csv(rows))
    print(table)
    lines = table.strip().splitlines()
    labels = [line.split(" | ")[0].strip() for line in lines[2:]]
    failed = [r.preset.name for r in rows if r.error]
    ok = (len(rows) == 12 and not failed
          and [c.strip() for c in lines[0].split(" | ")[1:]] == list(preset_names())
          and labels == ["D_Art (PSNR)", "D_Art (SSIM)", "D_All (PSNR)", "D_All (SSIM)"]
          and all("(" in line for line in lines[4:6]) and "failed" not in table)
    detail = f"{len(rows)} runs in {elapsed:.0f}s, failed {failed or 'none'}; table:\n" + table
    _record(7, "grid driver", ok, detail)


def preset_names():
    return ["L1", "L1+SSIM", "L1+MS-SSIM", "L1+MSE", "L1+FFL", "L1+SSIM+FFL"]
