"""Recalibrated encoder-decoder for kVCT -> MVCT translation.

Layout for ``L`` levels with widths ``c_l = base * 2**(l-1)``::

    encoder  level 1: CBR(1->c1), CBR(c1->c1)
             level l: CBR(c_{l-1}->c_l, stride 2), CBR(c_l->c_l)
    bottleneck: num_enresb x EnResB(c_L), then + sigma_L * z_L (train, noise on)
    decoder  level l = L-1..1: up2x -> CBR(c_{l+1}->c_l)
                               + (F_l + RcsSE(F_l))        # skip fusion by addition
                               -> CBR(c_l->c_l) x 2
    head     1x1 conv c1 -> 1, no activation
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Dict, List, Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import (
    CBR,
    BatchNorm2d,
    Conv2d,
    DepthwiseConv2d,
    Linear,
    Module,
    Parameter,
    PointwiseConv2d,
    bn_params,
    conv_params,
    depthwise_params,
    linear_params,
)

# (use_rcsse, use_noise, use_enresb) for the ablation ladder
VARIANTS: Dict[str, tuple] = {
    "full": (True, True, True),
    "+": (False, True, True),
    "++": (True, False, True),
    "+++": (False, False, True),
    "++++": (False, False, False),
}

_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    levels: int = 4
    base_channels: int = 16
    input_channels: int = 1
    kernel_size: int = 3
    sigma_k: float = 0.01
    use_rcsse: bool = True
    use_noise: bool = True
    use_enresb: bool = True
    se_reduction: int = 2
    num_enresb: int = 2
    sigma_l_init: float = 0.01
    image_size: Optional[int] = None
    precision: str = "float32"

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.input_channels != 1:
            raise ValueError("only single-channel CT slices are supported")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.sigma_k < 0:
            raise ValueError(f"sigma_k must be >= 0, got {self.sigma_k}")
        if self.se_reduction < 1 or self.num_enresb < 1:
            raise ValueError("se_reduction and num_enresb must be >= 1")
        if self.use_rcsse:
            for c in self.widths[:-1]:
                if c % self.se_reduction:
                    raise ValueError(f"channel count {c} not divisible by se_reduction {self.se_reduction}")
        if self.precision not in _DTYPES:
            raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {self.precision!r}")
        if self.image_size is not None:
            check_input_size(self, self.image_size, self.image_size)

    @property
    def widths(self) -> List[int]:
        return [self.base_channels * 2 ** i for i in range(self.levels)]

    @property
    def dtype(self):
        return _DTYPES[self.precision]

    def variant(self, name: str) -> "ModelConfig":
        rcsse, noise, enresb = VARIANTS[name]
        return replace(self, use_rcsse=rcsse, use_noise=noise, use_enresb=enresb)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kv = parse_key_values(text)
        return cls(**coerce_fields(cls, kv))


def parse_key_values(text: str) -> Dict[str, str]:
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(value: str, typ):
    typ = str(typ)
    if value in ("None", "none", ""):
        return None
    if "bool" in typ:
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean {value!r}")
    if "int" in typ:
        return int(value)
    if "float" in typ:
        return float(value)
    return value


def coerce_fields(cls, kv: Dict[str, str]) -> dict:
    known = {f.name: f.type for f in fields(cls)}
    unknown = set(kv) - set(known)
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return {k: _coerce(v, known[k]) for k, v in kv.items()}


def check_input_size(config: ModelConfig, h: int, w: int) -> None:
    step = 2 ** (config.levels - 1)
    for dim, n in (("H", h), ("W", w)):
        if n % step:
            raise ValueError(f"{dim}={n} is not divisible by 2^(L-1)={step} for L={config.levels}")


class RcsSE(Module):
    """Concurrent spatial and channel squeeze-and-excitation.

    ``out = f * sigmoid(fc2(relu(fc1(gap(f)))))  +  f * sigmoid(conv1x1(f))``
    """

    def __init__(self, channels: int, reduction: int = 2, rng=None, dtype=np.float32):
        if channels % reduction:
            raise ValueError(f"channels {channels} not divisible by reduction {reduction}")
        self.spatial = PointwiseConv2d(channels, 1, rng=rng, dtype=dtype)
        self.fc1 = Linear(channels, channels // reduction, rng=rng, dtype=dtype)
        self.fc2 = Linear(channels // reduction, channels, rng=rng, dtype=dtype)

    def spatial_gate(self, f: Tensor) -> Tensor:
        return ad.sigmoid(self.spatial(f))

    def channel_gate(self, f: Tensor) -> Tensor:
        z = ad.relu(self.fc1(ad.global_avg_pool(f)))
        return ad.sigmoid(self.fc2(z))

    def forward(self, f: Tensor) -> Tensor:
        B, C = f.shape[:2]
        sse = f * self.spatial_gate(f)
        cse = f * ad.reshape(self.channel_gate(f), (B, C, 1, 1))
        return cse + sse


class _DSConvStage(Module):
    def __init__(self, channels, k, rng, dtype):
        self.depthwise = DepthwiseConv2d(channels, k, rng=rng, dtype=dtype)
        self.pointwise = PointwiseConv2d(channels, channels, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x):
        return ad.relu(self.bn(self.pointwise(self.depthwise(x))))


class _PlainStage(Module):
    def __init__(self, channels, k, rng, dtype):
        self.conv = Conv2d(channels, channels, k, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(channels, dtype=dtype)

    def forward(self, x):
        return ad.relu(self.bn(self.conv(x)))


class EnResB(Module):
    """``f + stage2(stage1(f))``; stages are depthwise-separable unless ``separable=False``."""

    def __init__(self, channels: int, k: int = 3, separable: bool = True, rng=None, dtype=np.float32):
        stage = _DSConvStage if separable else _PlainStage
        self.stages = [stage(channels, k, rng, dtype), stage(channels, k, rng, dtype)]

    def forward(self, f: Tensor) -> Tensor:
        h = f
        for s in self.stages:
            h = s(h)
        return f + h


class _EncoderLevel(Module):
    def __init__(self, cin, cout, k, stride, rng, dtype):
        self.cbr1 = CBR(cin, cout, k, stride, rng=rng, dtype=dtype)
        self.cbr2 = CBR(cout, cout, k, rng=rng, dtype=dtype)

    def forward(self, x):
        return self.cbr2(self.cbr1(x))


class _DecoderLevel(Module):
    def __init__(self, cin, cout, k, rng, dtype):
        self.up = CBR(cin, cout, k, rng=rng, dtype=dtype)
        self.cbr1 = CBR(cout, cout, k, rng=rng, dtype=dtype)
        self.cbr2 = CBR(cout, cout, k, rng=rng, dtype=dtype)

    def forward(self, x, skip):
        h = self.up(ad.upsample_nearest2x(x)) + skip
        return self.cbr2(self.cbr1(h))


class ReMARDS(Module):
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        dtype = config.dtype
        rng = np.random.default_rng(seed)
        k = config.kernel_size
        w = config.widths
        self.encoder = [
            _EncoderLevel(config.input_channels if i == 0 else w[i - 1], w[i], k, 1 if i == 0 else 2, rng, dtype)
            for i in range(config.levels)
        ]
        self.bottleneck = [
            EnResB(w[-1], k, separable=config.use_enresb, rng=rng, dtype=dtype) for _ in range(config.num_enresb)
        ]
        if config.use_noise:
            self.sigma_l = Parameter(np.asarray(config.sigma_l_init, dtype=dtype))
        if config.use_rcsse:
            self.rcsse = [RcsSE(w[i], config.se_reduction, rng=rng, dtype=dtype) for i in range(config.levels - 1)]
        # decoder[i] produces level i (0-based) from level i + 1
        self.decoder = [_DecoderLevel(w[i + 1], w[i], k, rng, dtype) for i in range(config.levels - 1)]
        self.head = PointwiseConv2d(w[0], 1, rng=rng, dtype=dtype)
        self._noise_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        self.assign_names()

    # -- helpers --------------------------------------------------------
    def _as_input(self, x) -> Tensor:
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.config.dtype))
        if t.ndim != 4 or t.shape[1] != self.config.input_channels:
            raise ValueError(f"expected input [B, 1, H, W], got {t.shape}")
        self.check_size(t.shape[2], t.shape[3])
        return t

    def check_size(self, h: int, w: int) -> None:
        size = self.config.image_size
        if size is not None and (h, w) != (size, size):
            raise ValueError(f"model was configured for {size}x{size} slices, got {h}x{w}")
        check_input_size(self.config, h, w)

    def _set_mode(self, mode: Optional[str]) -> None:
        if mode is None:
            return
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        self.train(mode == "train")

    def _rng(self, noise_seed) -> np.random.Generator:
        if isinstance(noise_seed, np.random.Generator):
            return noise_seed
        return self._noise_rng if noise_seed is None else np.random.default_rng(noise_seed)

    def perturb_input(self, x: Tensor, rng: np.random.Generator) -> Tensor:
        """``x + sigma_k * z``; identity unless training with noise enabled."""
        if not (self.training and self.config.use_noise and self.config.sigma_k > 0):
            return x
        z = rng.standard_normal(x.shape).astype(x.dtype)
        return x + Tensor(self.config.sigma_k * z)

    # -- public API -----------------------------------------------------
    def encode(self, x, noise_seed=None, mode: Optional[str] = None) -> List[Tensor]:
        """Encoder features ``F_1 .. F_L`` (finest first)."""
        self._set_mode(mode)
        return self._encode(self._as_input(x), self._rng(noise_seed))

    def _encode(self, x: Tensor, rng) -> List[Tensor]:
        h = self.perturb_input(x, rng)
        feats = []
        for level in self.encoder:
            h = level(h)
            feats.append(h)
        return feats

    def forward(self, x, noise_seed=None, mode: Optional[str] = None) -> Tensor:
        self._set_mode(mode)
        x = self._as_input(x)
        rng = self._rng(noise_seed)
        feats = self._encode(x, rng)
        h = feats[-1]
        for block in self.bottleneck:
            h = block(h)
        if self.config.use_noise and self.training:
            z = rng.standard_normal(h.shape).astype(h.dtype)
            h = h + self.sigma_l * Tensor(z)
        for i in reversed(range(self.config.levels - 1)):
            f = feats[i]
            skip = f + self.rcsse[i](f) if self.config.use_rcsse else f
            h = self.decoder[i](h, skip)
        return self.head(h)


def parameter_count(config: ModelConfig) -> int:
    """Closed-form learnable-parameter count (BN running stats excluded).

    conv k x k, cin->cout, with bias : cin*cout*k^2 + cout
    depthwise k x k over c           : c*k^2 + c
    batch norm over c                : 2c
    fully connected fin->fout        : fin*fout + fout
    """
    k = config.kernel_size
    w = config.widths
    total = 0
    cin = config.input_channels
    for c in w:
        total += conv_params(cin, c, k) + bn_params(c) + conv_params(c, c, k) + bn_params(c)
        cin = c
    c = w[-1]
    if config.use_enresb:
        stage = depthwise_params(c, k) + conv_params(c, c, 1) + bn_params(c)
    else:
        stage = conv_params(c, c, k) + bn_params(c)
    total += config.num_enresb * 2 * stage
    if config.use_noise:
        total += 1
    for i in range(config.levels - 1):
        c, r = w[i], config.se_reduction
        if config.use_rcsse:
            total += conv_params(c, 1, 1) + linear_params(c, c // r) + linear_params(c // r, c)
        total += conv_params(w[i + 1], c, k) + bn_params(c) + 2 * (conv_params(c, c, k) + bn_params(c))
    total += conv_params(w[0], 1, 1)
    return total


def build_model(config: Union[ModelConfig, None] = None, seed: int = 0) -> ReMARDS:
    return ReMARDS(config or ModelConfig(), seed=seed)
