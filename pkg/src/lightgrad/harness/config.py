"""Flat ``key=value`` configuration files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..diffusion import NoiseSchedule
from ..errors import ConfigError, FormatError
from ..samplers import SamplerConfig
from ..tts import EncoderConfig
from ..unet import UNetConfig

METHOD_ALIASES = {"dpm1": "dpm-solver-1", "dpm-solver-1": "dpm-solver-1",
                  "ode-euler": "ode-euler", "sde-euler": "sde-euler"}
GRID_ALIASES = {"t": "uniform-t", "lambda": "uniform-lambda",
                "uniform-t": "uniform-t", "uniform-lambda": "uniform-lambda"}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    # optional cosine decay from lr to lr_min over the first lr_decay_iters steps (0: constant)
    lr_decay_iters: int = 0
    lr_min: float = 0.0
    batch_size: int = 16
    iterations: int = 1000
    seed: int = 0
    w_diff: float = 1.0
    w_enc: float = 1.0
    w_dur: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    segment_frames: int = 64
    checkpoint_every: int = 0
    # noise schedule
    beta0: float = 0.05
    beta1: float = 20.0
    horizon_T: float = 1.0
    t_min: float = 1e-3
    # decoder
    n_mels: int = 80
    base_channels: int = 64
    dim_mults: tuple = (1, 2, 4)
    groups: int = 8
    heads: int = 1
    time_scale: float = 1000.0
    separable: bool = True
    # encoder
    enc_hidden: int = 128
    enc_channels: int = 512
    enc_blocks: int = 3
    enc_kernel: int = 3
    dur_channels: int = 256
    # sampler defaults
    nfe: int = 4
    tau: float = 1.5
    method: str = "dpm1"
    grid: str = ""

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.iterations < 0 or self.segment_frames < 4:
            raise ConfigError("learning rate, batch size and segment length must be positive")
        if self.lr_decay_iters < 0 or not 0 <= self.lr_min <= self.lr:
            raise ConfigError("need lr_decay_iters >= 0 and 0 <= lr_min <= lr")
        if self.method not in METHOD_ALIASES:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.grid and self.grid not in GRID_ALIASES:
            raise ConfigError(f"unknown grid {self.grid!r}")
        self.dim_mults = tuple(int(m) for m in self.dim_mults)

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.beta0, self.beta1, self.horizon_T, self.t_min)

    def unet(self) -> UNetConfig:
        return UNetConfig(self.base_channels, self.dim_mults, self.n_mels, self.groups,
                          self.heads, self.time_scale, self.separable)

    def encoder(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size, self.n_mels, self.enc_hidden, self.enc_channels,
                             self.enc_blocks, self.enc_kernel, self.dur_channels)

    def sampler(self, seed: int | None = None) -> SamplerConfig:
        return SamplerConfig(METHOD_ALIASES[self.method], self.tau, self.nfe,
                             GRID_ALIASES.get(self.grid), self.seed if seed is None else seed)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(kind, raw: str):
    if kind is bool:
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(raw)
    if kind is tuple:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return kind(raw)


_TYPES = {f.name: type(f.default) for f in fields(TrainConfig)}


def dumps(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def loads(text: str, base: TrainConfig | None = None, path=None) -> TrainConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError("expected key=value", path, lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise FormatError(f"unknown key {key!r}", path, lineno)
        try:
            values[key] = _parse(_TYPES[key], raw)
        except ValueError:
            raise FormatError(f"bad value for {key}: {raw!r}", path, lineno) from None
    return dataclasses.replace(base or TrainConfig(), **values)


def load(path) -> TrainConfig:
    return loads(Path(path).read_text(), path=path)


def apply_overrides(cfg: TrainConfig, pairs) -> TrainConfig:
    return loads("\n".join(pairs), base=cfg, path="<overrides>")
