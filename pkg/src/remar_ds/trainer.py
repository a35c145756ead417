"""AdamW training loop, step schedule, early stopping and the experiment grid."""
from __future__ import annotations

import copy
import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import no_grad
from .checkpoint import save_checkpoint
from .data import DatasetSplit, SlicePair, apply_augment, sample_augment, to_batch
from .losses import TABLE1_PRESETS, LossSpec, total_loss, weight_map
from .metrics import EvalReport, evaluate_split, masked_psnr
from .network import ModelConfig, ReMARDS, VARIANTS, _coerce, coerce_fields, parameter_count, parse_key_values
from .nn import Parameter

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    lr0: float = 1e-4
    lr_halve_every: int = 20
    weight_decay: float = 5e-4
    grad_clip_norm: float = 1.0
    early_stop_patience: int = 15
    seed: int = 0
    train_dataset: str = "D_All"
    augment: bool = True
    variants_min: int = 2
    variants_max: int = 3
    max_steps: Optional[int] = None
    validate: bool = True
    loss_spec: LossSpec = field(default_factory=LossSpec)
    model_config: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.train_dataset not in ("D_All", "D_Art"):
            raise ValueError(f"train_dataset must be D_All or D_Art, got {self.train_dataset!r}")
        if self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 1 <= self.variants_min <= self.variants_max:
            raise ValueError("need 1 <= variants_min <= variants_max")

    def lr_at(self, epoch: int) -> float:
        return lr_at(epoch, self.lr0, self.lr_halve_every)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name in ("loss_spec", "model_config"):
                continue
            lines.append(f"{f.name}={getattr(self, f.name)}")
        lines += [f"loss.{k}={v}" for k, v in asdict(self.loss_spec).items()]
        lines += [f"model.{k}={v}" for k, v in asdict(self.model_config).items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse ``key=value`` lines; ``loss=<preset>``, ``loss.<field>``, ``model.<field>``, ``variant=<name>``."""
        kv = parse_key_values(text)
        loss_kv = {k[5:]: v for k, v in kv.items() if k.startswith("loss.")}
        model_kv = {k[6:]: v for k, v in kv.items() if k.startswith("model.")}
        top = {k: v for k, v in kv.items() if "." not in k}
        loss = TABLE1_PRESETS[top.pop("loss")] if "loss" in top else LossSpec()
        if loss_kv:
            loss = replace(loss, **coerce_fields(LossSpec, loss_kv))
        model = ModelConfig(**coerce_fields(ModelConfig, model_kv))
        if "variant" in top:
            model = model.variant(top.pop("variant"))
        plain = {f.name: f.type for f in fields(cls) if f.name not in ("loss_spec", "model_config")}
        unknown = set(top) - set(plain)
        if unknown:
            raise KeyError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**{k: _coerce(v, plain[k]) for k, v in top.items()}, loss_spec=loss, model_config=model)


def lr_at(epoch: int, lr0: float = 1e-4, halve_every: int = 20) -> float:
    return lr0 * 0.5 ** (epoch // halve_every)


# ---------------------------------------------------------------------------
# optimisation primitives


@dataclass
class AdamWState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adamw_step(params: Sequence[Parameter], state: AdamWState, lr: float, weight_decay: float) -> None:
    """One decoupled-weight-decay Adam update, in place.

    ``p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)``
    """
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad = int(np.size(p.grad) - np.count_nonzero(np.isfinite(p.grad)))
            raise FloatingPointError(f"non-finite gradient in {p.name or 'parameter'} ({bad} entries)")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        key = p.name or str(id(p))
        m = state.m.setdefault(key, np.zeros_like(p.data))
        v = state.v.setdefault(key, np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data * (1.0 - lr * weight_decay) - lr * update).astype(p.dtype, copy=False)


def grad_norm(params: Iterable[Parameter]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None)))


def clip_gradients(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the factor."""
    norm = grad_norm(params)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    grads = [(p, p.grad) for p in params if p.grad is not None]
    factor = max_norm / norm
    # float32 rounding can leave the scaled norm a hair above max_norm; shave until it is not
    for _ in range(16):
        for p, g in grads:
            p.grad = (g * factor).astype(g.dtype, copy=False)
        if grad_norm(params) <= max_norm:
            break
        factor *= 1.0 - 2.0 ** -20
    return factor


# ---------------------------------------------------------------------------
# training


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, checkpoint: Optional[Path]):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    model: ReMARDS
    losses: List[float]
    step_log: List[Tuple[int, str, float]]
    epochs: List[Dict[str, float]]
    grad_norms: List[float]
    best_epoch: int
    best_val_psnr: float
    stopped_early: bool

    @property
    def steps(self) -> int:
        return len(self.losses)


def _prepare(pairs: Sequence[SlicePair], spec: LossSpec):
    kv, mv, mask, art = to_batch(pairs)
    weights = weight_map(mask[:, 0], art, spec)
    return kv[:, 0], mv[:, 0], mask[:, 0], weights[:, 0]


def _epoch_samples(arrays, cfg: TrainConfig, rng: np.random.Generator):
    kv, mv, mask, w = arrays
    order = rng.permutation(len(kv))
    samples = []
    for i in order:
        if not cfg.augment:
            samples.append((kv[i], mv[i], w[i]))
            continue
        for _ in range(int(rng.integers(cfg.variants_min, cfg.variants_max + 1))):
            params = sample_augment(rng)
            a_kv, a_mv, _, a_w = apply_augment(params, kv[i], mv[i], mask[i], w[i])
            samples.append((a_kv, a_mv, a_w))
    return samples


def _val_psnr(model: ReMARDS, arrays) -> float:
    kv, mv, mask, _ = arrays
    model.eval()
    vals = []
    with no_grad():
        for i in range(0, len(kv), 8):
            out = model(kv[i:i + 8, None].astype(model.config.dtype), mode="eval").data
            vals += [masked_psnr(o[0], t, m).db for o, t, m in zip(out, mv[i:i + 8], mask[i:i + 8])]
    return float(np.mean(vals))


def _write_logs(out_dir: Path, result_steps, epochs) -> None:
    with open(out_dir / "loss_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "term", "value"])
        w.writerows((s, t, repr(v)) for s, t, v in result_steps)
    with open(out_dir / "epoch_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "steps", "train_loss", "val_psnr"])
        w.writerows([e["epoch"], repr(e["lr"]), e["steps"], repr(e["train_loss"]), repr(e["val_psnr"])] for e in epochs)


def train(
    config: TrainConfig,
    train_pairs: Sequence[SlicePair],
    val_pairs: Optional[Sequence[SlicePair]] = None,
    out_dir: Optional[Path] = None,
    model: Optional[ReMARDS] = None,
) -> TrainResult:
    """Train on ``train_pairs``; the best validation-PSNR weights are returned.

    Without validation pairs (or with ``validate=False``) early stopping is
    off and the final weights are kept.
    """
    if not train_pairs:
        raise ValueError("no training slices")
    seq = np.random.SeedSequence(config.seed)
    init_seq, data_seq, noise_seq = seq.spawn(3)
    model = model or ReMARDS(config.model_config, seed=int(init_seq.generate_state(1)[0]))
    params = model.parameters()
    opt = AdamWState()
    data_rng = np.random.default_rng(data_seq)
    noise_rng = np.random.default_rng(noise_seq)
    train_arrays = _prepare(train_pairs, config.loss_spec)
    val_arrays = _prepare(val_pairs, config.loss_spec) if (val_pairs and config.validate) else None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "train_config.txt").write_text(config.to_text())
    best_ckpt = out_dir / "best.ckpt" if out_dir is not None else None

    losses: List[float] = []
    step_log: List[Tuple[int, str, float]] = []
    epochs: List[Dict[str, float]] = []
    norms: List[float] = []
    best_state = None
    best_psnr, best_epoch, since_best = -np.inf, -1, 0
    stopped_early = False
    dtype = config.model_config.dtype

    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        samples = _epoch_samples(train_arrays, config, data_rng)
        epoch_losses = []
        model.train()
        for b in range(0, len(samples), config.batch_size):
            if config.max_steps is not None and len(losses) >= config.max_steps:
                break
            chunk = samples[b:b + config.batch_size]
            x = np.stack([c[0] for c in chunk])[:, None].astype(dtype)
            y = np.stack([c[1] for c in chunk])[:, None].astype(dtype)
            w = np.stack([c[2] for c in chunk])[:, None].astype(dtype)
            out = model(x, noise_seed=noise_rng, mode="train")
            loss, terms = total_loss(out, y, w, config.loss_spec)
            step = len(losses)
            if not np.isfinite(terms["total"]):
                if out_dir is not None:
                    _write_logs(out_dir, step_log, epochs)
                raise TrainingDiverged(f"loss became {terms['total']} at step {step}", best_ckpt)
            model.zero_grad()
            loss.backward()
            clip_gradients(params, config.grad_clip_norm)
            norms.append(grad_norm(params))
            try:
                adamw_step(params, opt, lr, config.weight_decay)
            except FloatingPointError as exc:
                if out_dir is not None:
                    _write_logs(out_dir, step_log, epochs)
                raise TrainingDiverged(f"step {step}: {exc}", best_ckpt) from exc
            losses.append(terms["total"])
            epoch_losses.append(terms["total"])
            step_log.extend((step, name, value) for name, value in terms.items())
            step_log.append((step, "lr", lr))

        val = _val_psnr(model, val_arrays) if val_arrays is not None else float("nan")
        epochs.append({"epoch": epoch, "lr": lr, "steps": len(losses), "train_loss": float(np.mean(epoch_losses)) if epoch_losses else float("nan"), "val_psnr": val})
        log.info("epoch %d lr %.3g loss %.5f val_psnr %.3f", epoch, lr, epochs[-1]["train_loss"], val)

        if val_arrays is not None:
            if val > best_psnr:
                best_psnr, best_epoch, since_best = val, epoch, 0
                best_state = copy.deepcopy(model.state_dict())
                if best_ckpt is not None:
                    save_checkpoint(best_ckpt, model, {"epoch": str(epoch), "val_psnr": repr(val)})
            else:
                since_best += 1
                if since_best >= config.early_stop_patience:
                    stopped_early = True
                    break
        if config.max_steps is not None and len(losses) >= config.max_steps:
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        best_epoch = len(epochs) - 1
        if best_ckpt is not None:
            save_checkpoint(best_ckpt, model, {"epoch": str(best_epoch)})
    model.eval()
    if out_dir is not None:
        _write_logs(out_dir, step_log, epochs)
    return TrainResult(model, losses, step_log, epochs, norms, best_epoch, float(best_psnr), stopped_early)


def train_on_split(config: TrainConfig, pairs: Sequence[SlicePair], split: DatasetSplit, out_dir: Optional[Path] = None) -> TrainResult:
    """Fit on the training patients (minus the validation shard) of ``config.train_dataset``."""
    fit = split.select(pairs, "fit", config.train_dataset)
    val = split.select(pairs, "val", config.train_dataset) or split.select(pairs, "val", "D_All")
    if not fit:
        raise ValueError(f"no {config.train_dataset} training slices in split")
    return train(config, fit, val, out_dir)


# ---------------------------------------------------------------------------
# experiment grid


@dataclass
class GridPreset:
    name: str
    loss_spec: LossSpec
    train_dataset: str = "D_All"
    variant: str = "full"
    loss_name: str = ""

    def __post_init__(self):
        if not self.loss_name:
            self.loss_name = self.loss_spec.label


@dataclass
class GridRow:
    preset: GridPreset
    parameters: int
    report: Optional[EvalReport] = None
    error: Optional[str] = None


def table1_presets() -> List[GridPreset]:
    return [
        GridPreset(f"{name}@{ds}", spec, ds, loss_name=name)
        for ds in ("D_All", "D_Art")
        for name, spec in TABLE1_PRESETS.items()
    ]


def table2_presets(loss: str = "L1+SSIM+FFL", dataset: str = "D_Art") -> List[GridPreset]:
    label = {"full": "ReMAR-DS", "+": "ReMAR-DS+", "++": "ReMAR-DS++", "+++": "ReMAR-DS+++", "++++": "ReMAR-DS++++"}
    return [GridPreset(label[v], TABLE1_PRESETS[loss], dataset, v, loss_name=loss) for v in VARIANTS]


def run_grid(
    presets: Sequence[GridPreset],
    pairs: Sequence[SlicePair],
    split: DatasetSplit,
    base: TrainConfig,
    out_dir: Optional[Path] = None,
) -> List[GridRow]:
    """Train and evaluate every preset; a failing preset is recorded and skipped."""
    rows = []
    for preset in presets:
        mcfg = base.model_config.variant(preset.variant)
        cfg = replace(base, loss_spec=preset.loss_spec, train_dataset=preset.train_dataset, model_config=mcfg)
        row = GridRow(preset, parameter_count(mcfg))
        sub = None
        if out_dir is not None:
            sub = Path(out_dir) / preset.name.replace("+", "p").replace("@", "_").replace("-", "")
        try:
            result = train_on_split(cfg, pairs, split, sub)
            row.report = evaluate_split(result.model, split, pairs, preset.name)
        except Exception as exc:  # noqa: BLE001 - the grid must keep going
            log.exception("preset %s failed", preset.name)
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


GRID_COLUMNS = ["preset", "train_set", "variant", "parameters", "d_art_psnr", "d_art_ssim",
                "d_all_psnr", "d_all_psnr_full", "d_all_ssim", "d_all_ssim_full", "status"]


def grid_csv(rows: Sequence[GridRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_COLUMNS)
    for r in rows:
        rep = r.report
        vals = ["", "", "", "", "", ""] if rep is None else [
            f"{rep.art_psnr:.3f}", f"{rep.art_ssim:.3f}", f"{rep.all_psnr:.3f}",
            f"{rep.all_psnr_full:.3f}", f"{rep.all_ssim:.3f}", f"{rep.all_ssim_full:.3f}",
        ]
        w.writerow([r.preset.name, r.preset.train_dataset, r.preset.variant, r.parameters, *vals, r.error or "ok"])
    return buf.getvalue()


def format_table1(rows: Sequence[GridRow]) -> str:
    """One column per loss preset, merging its two training runs.

    D_Art rows come from the D_Art-trained model. The D_All cells read
    ``a (b)`` with ``a`` from the D_Art-trained model and ``b`` from the
    D_All-trained model, both on the D_All test slices.
    """
    by_loss: Dict[str, Dict[str, GridRow]] = {}
    for r in rows:
        by_loss.setdefault(r.preset.loss_name, {})[r.preset.train_dataset] = r

    def metric(r: Optional[GridRow], attr: str) -> str:
        if r is None:
            return "-"
        return "failed" if r.report is None else f"{getattr(r.report, attr):.3f}"

    header = ["Metric"] + list(by_loss)
    body = [["D_Art (PSNR)"], ["D_Art (SSIM)"], ["D_All (PSNR)"], ["D_All (SSIM)"]]
    for runs in by_loss.values():
        art, full = runs.get("D_Art"), runs.get("D_All")
        body[0].append(metric(art, "art_psnr"))
        body[1].append(metric(art, "art_ssim"))
        body[2].append(f"{metric(art, 'all_psnr')} ({metric(full, 'all_psnr')})")
        body[3].append(f"{metric(art, 'all_ssim')} ({metric(full, 'all_ssim')})")
    return _render([header] + body)


def format_table2(rows: Sequence[GridRow]) -> str:
    header = ["Model", "Params", "D_Art PSNR", "D_Art SSIM", "D_All PSNR", "D_All SSIM"]
    body = []
    for r in rows:
        e = r.report
        if e is None:
            body.append([r.preset.name, str(r.parameters), "failed", "", "", ""])
        else:
            body.append([r.preset.name, str(r.parameters), f"{e.art_psnr:.3f}", f"{e.art_ssim:.3f}",
                         f"{e.all_psnr:.3f} ({e.all_psnr_full:.3f})", f"{e.all_ssim:.3f} ({e.all_ssim_full:.3f})"])
    return _render([header] + body)


def _render(table: List[List[str]]) -> str:
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(row, widths)) for row in table]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
