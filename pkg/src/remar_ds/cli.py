"""Synthetic CT data generation, training, evaluation and reconstruction for ReMAR-DS."""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .autodiff import no_grad
from .autodiff.serialize import FormatError, load_tensor, save_tensor
from .checkpoint import load_checkpoint
from .data import (
    PhantomSpec, build_split, denormalize, file_digests, generate_dataset, load_dataset, normalize_hu, save_dataset,
)
from .losses import TABLE1_PRESETS
from .metrics import evaluate_split, masked_psnr, masked_ssim
from .network import VARIANTS
from .render import save_comparison
from .trainer import (
    TrainConfig, TrainingDiverged, format_table1, format_table2, grid_csv, run_grid, table1_presets,
    table2_presets, train_on_split,
)

log = logging.getLogger("remar_ds")

RUN_MANIFEST = "run_manifest.txt"


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, seed: int, config: Dict[str, object], outputs: Iterable[Path]) -> Path:
    """Plain-text record of the command, seed, full config and output hashes."""
    out = Path(out)
    lines = [f"command={command}", f"seed={seed}", "[config]"]
    lines += [f"{k}={v}" for k, v in config.items()]
    lines.append("[outputs]")
    for p in sorted(set(Path(o) for o in outputs)):
        rel = p.relative_to(out) if p.is_relative_to(out) else p
        lines.append(f"{rel}\t{_sha256(p)}")
    path = out / RUN_MANIFEST
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# data sourcing


def _phantom_spec(args) -> PhantomSpec:
    return PhantomSpec(size=args.size, artifact_rate=args.artifact_rate, n_inserts=args.inserts)


def _pairs(args):
    if getattr(args, "data", None):
        return load_dataset(Path(args.data))
    return generate_dataset(args.patients, _phantom_spec(args), args.slices, seed=args.seed)


def _data_config(args) -> Dict[str, object]:
    if getattr(args, "data", None):
        digests = file_digests(Path(args.data))
        combined = hashlib.sha256("".join(f"{k}{v}" for k, v in digests.items()).encode()).hexdigest()
        return {"data": args.data, "data_sha256": combined}
    return {"patients": args.patients, "slices": args.slices, **{f"phantom.{k}": v for k, v in asdict(_phantom_spec(args)).items()}}


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    spec = _phantom_spec(args)
    pairs = generate_dataset(args.patients, spec, args.slices, seed=args.seed)
    save_dataset(pairs, out)
    split = build_split(pairs, 0.7, args.seed)
    print(f"{len(pairs)} slice pairs, {len(split.art_keys)} in D_Art ({100 * split.art_fraction:.2f}%)")
    outputs = [p for p in out.rglob("*") if p.is_file() and p.name != RUN_MANIFEST]
    config = {"patients": args.patients, "slices": args.slices, **{f"phantom.{k}": v for k, v in asdict(spec).items()}}
    write_manifest(out, "gen-data", args.seed, config, outputs)
    return 0


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_text(Path(args.config).read_text()) if args.config else TrainConfig()
    over = {"seed": args.seed}
    if args.epochs is not None:
        over["epochs"] = args.epochs
    if args.max_steps is not None:
        over["max_steps"] = args.max_steps
    if args.dataset:
        over["train_dataset"] = args.dataset
    if getattr(args, "preset", None) in TABLE1_PRESETS:
        over["loss_spec"] = TABLE1_PRESETS[args.preset]
    model = cfg.model_config
    if args.levels is not None or args.base_channels is not None:
        model = replace(model, levels=args.levels or model.levels, base_channels=args.base_channels or model.base_channels)
    if args.variant:
        model = model.variant(args.variant)
    over["model_config"] = model
    return replace(cfg, **over)


def _with_image_size(cfg: TrainConfig, pairs) -> TrainConfig:
    """Pin the model to the dataset's slice size so checkpoints reject other sizes."""
    if cfg.model_config.image_size is not None or not pairs:
        return cfg
    h, w = pairs[0].kv.hu.shape
    if h != w:
        return cfg
    return replace(cfg, model_config=replace(cfg.model_config, image_size=h))


def cmd_train(args) -> int:
    out = Path(args.out)
    pairs = _pairs(args)
    cfg = _with_image_size(_train_config(args), pairs)
    split = build_split(pairs, 0.7, args.seed)
    try:
        result = train_on_split(cfg, pairs, split, out)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}; last good checkpoint: {exc.checkpoint}", file=sys.stderr)
        return 3
    print(f"{result.steps} steps, best epoch {result.best_epoch}, val PSNR {result.best_val_psnr:.3f} dB")
    outputs = [out / n for n in ("best.ckpt", "loss_log.csv", "epoch_log.csv", "train_config.txt")]
    config = {**{f"train.{k}": v for k, v in _kv(cfg.to_text()).items()}, **_data_config(args)}
    write_manifest(out, "train", args.seed, config, outputs)
    return 0


def _kv(text: str) -> Dict[str, str]:
    return dict(line.split("=", 1) for line in text.strip().splitlines())


def _load_model(path: str):
    try:
        return load_checkpoint(path)
    except (FormatError, OSError, ValueError, KeyError) as exc:
        raise SystemExit(f"error: cannot load checkpoint {path}: {exc}")


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, _ = _load_model(args.checkpoint)
    pairs = _pairs(args)
    split = build_split(pairs, 0.7, args.seed)
    report = evaluate_split(model, split, pairs, label=Path(args.checkpoint).stem)
    (out / "eval.csv").write_text(report.to_csv())
    per_patient = "patient,slices,psnr_db,ssim\n" + "".join(
        f"{pid},{v['slices']},{v['psnr']:.6f},{v['ssim']:.6f}\n" for pid, v in report.per_patient().items()
    )
    (out / "per_patient.csv").write_text(per_patient)
    (out / "summary.txt").write_text(report.summary() + "\n")
    print(report.summary())
    config = {"checkpoint": args.checkpoint, "checkpoint_sha256": _sha256(Path(args.checkpoint)), **_data_config(args)}
    write_manifest(out, "eval", args.seed, config, [out / "eval.csv", out / "per_patient.csv", out / "summary.txt"])
    return 0


def _sibling(path: Path, tag: str) -> Optional[Path]:
    name = path.name
    if "_kvct" not in name:
        return None
    cand = path.with_name(name.replace("_kvct", f"_{tag}"))
    return cand if cand.exists() else None


def cmd_reconstruct(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, _ = _load_model(args.checkpoint)
    src = Path(args.input)
    try:
        kv_hu = load_tensor(src).astype(np.float64)
    except (FormatError, OSError) as exc:
        raise SystemExit(f"error: cannot read input slice {src}: {exc}")
    if kv_hu.ndim != 2:
        raise SystemExit(f"error: input slice must be 2-D, got shape {kv_hu.shape}")
    try:
        model.check_size(*kv_hu.shape)
    except ValueError as exc:
        raise SystemExit(f"error: slice size {kv_hu.shape} incompatible with checkpoint: {exc}")
    target_path = Path(args.target) if args.target else _sibling(src, "mvct")
    mask_path = Path(args.mask) if args.mask else _sibling(src, "mask")
    with no_grad():
        x = normalize_hu(kv_hu)[None, None].astype(model.config.dtype)
        recon = model(x, mode="eval").data[0, 0].astype(np.float64)
    recon_hu = denormalize(recon)
    save_tensor(out / "recon.rmds", recon_hu.astype(np.float32))
    target_hu = load_tensor(target_path).astype(np.float64) if target_path else None
    save_comparison(out / "comparison.png", kv_hu, recon_hu, target_hu)
    outputs = [out / "recon.rmds", out / "comparison.png"]
    if target_hu is not None:
        mask = load_tensor(mask_path) > 0.5 if mask_path else np.ones_like(target_hu, dtype=bool)
        target = normalize_hu(target_hu)
        psnr = masked_psnr(recon, target, mask)
        ssim_v = masked_ssim(recon, target, mask)
        line = f"psnr_db={psnr.db!r}\nssim={ssim_v!r}\n"
        (out / "metrics.txt").write_text(line)
        outputs.append(out / "metrics.txt")
        print(f"masked PSNR {psnr.db:.6f} dB  masked SSIM {ssim_v:.6f}")
    config = {"checkpoint": args.checkpoint, "checkpoint_sha256": _sha256(Path(args.checkpoint)),
              "input": str(src), "target": str(target_path) if target_path else "", "mask": str(mask_path) if mask_path else ""}
    write_manifest(out, "reconstruct", args.seed, config, outputs)
    return 0


def cmd_grid(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = _pairs(args)
    base = _with_image_size(_train_config(args), pairs)
    split = build_split(pairs, 0.7, args.seed)
    presets = table1_presets() if args.preset == "table1" else table2_presets()
    rows = run_grid(presets, pairs, split, base, out / "runs")
    (out / "grid.csv").write_text(grid_csv(rows))
    table = format_table1(rows) if args.preset == "table1" else format_table2(rows)
    (out / "table.txt").write_text(table)
    print(table, end="")
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"preset {r.preset.name} failed: {r.error}", file=sys.stderr)
    config = {"grid": args.preset, **_kv(base.to_text()), **_data_config(args)}
    write_manifest(out, "grid", args.seed, config, [out / "grid.csv", out / "table.txt"])
    return 0


def cmd_verify(args) -> int:
    from . import verify

    return verify.main(seeds=tuple(range(args.seeds)), quick=args.quick)


# ---------------------------------------------------------------------------
# parser


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset directory from gen-data; generated in memory when omitted")
    p.add_argument("--patients", type=int, default=20)
    p.add_argument("--slices", type=int, default=20, help="slices per patient")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--artifact-rate", type=float, default=0.15)
    p.add_argument("--inserts", type=int, default=1, help="metal inserts per artifact slice (0-2)")


def _add_train_args(p: argparse.ArgumentParser, loss_preset: bool = True) -> None:
    p.add_argument("--config", help="key=value TrainConfig file")
    if loss_preset:
        p.add_argument("--preset", choices=sorted(TABLE1_PRESETS), help="loss preset")
    p.add_argument("--variant", choices=list(VARIANTS), help="model ablation variant")
    p.add_argument("--dataset", choices=["D_All", "D_Art"], help="training set")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--base-channels", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="remar-ds", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=1, help="BLAS threads; 1 gives bit-reproducible runs")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic phantom dataset")
    _add_data_args(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train one model")
    _add_data_args(p)
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct one slice and render a PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="kVCT slice (.rmds, HU)")
    p.add_argument("--target", help="MVCT slice; defaults to the *_mvct sibling when present")
    p.add_argument("--mask", help="body mask; defaults to the *_mask sibling when present")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("grid", parents=[common], help="run the loss-preset or ablation grid")
    p.add_argument("--preset", choices=["table1", "table2"], default="table1",
                   help="table1: loss presets x training sets; table2: model ablations")
    _add_data_args(p)
    _add_train_args(p, loss_preset=False)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("verify", parents=[common], help="run the oracle and gradient self-checks")
    p.add_argument("--seeds", type=int, default=1, help="random seeds per gradient check")
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    with threadpool_limits(limits=args.threads):
        return int(args.func(args) or 0)


if __name__ == "__main__":
    sys.exit(main())
