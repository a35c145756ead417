"""Depthwise-separable U-Net for kVCT to MVCT metal artifact reduction, on a numpy autodiff core."""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DatasetSplit, PhantomSpec, SlicePair, SliceRecord, build_split, classify_artifact, denormalize,
    generate_dataset, generate_patient, normalize_hu,
)
from .losses import LossSpec, TABLE1_PRESETS, total_loss
from .metrics import EvalReport, evaluate_split, masked_psnr, masked_ssim
from .network import ModelConfig, ReMARDS, VARIANTS, build_model, parameter_count
from .trainer import TrainConfig, adamw_step, clip_gradients, lr_at, run_grid, train, train_on_split

__version__ = "0.1.0"
