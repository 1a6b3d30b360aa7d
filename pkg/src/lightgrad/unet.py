"""Lightweight U-Net score network.

Three resolution levels on the (mels, frames) plane.  Each down block is
two residual blocks, a linear-attention layer and a stride-2 convolution
(omitted on the last level); the middle is resblock / attention / resblock;
two up blocks consume the attention outputs of the down path as skips and
end in a stride-2 transposed convolution.  With ``separable=True`` every
3 x 3 convolution inside the residual and attention blocks is depthwise
separable; the resampling, residual-shortcut and output convolutions stay
dense.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError
from .nn import LinearAttention, Mish, StepEmbedding, make_conv, mish


@dataclass(frozen=True)
class UNetConfig:
    base_channels: int = 64
    dim_mults: tuple[int, ...] = (1, 2, 4)
    n_mels: int = 80
    groups: int = 8
    heads: int = 1
    time_scale: float = 1000.0
    separable: bool = True

    def __post_init__(self):
        if len(self.dim_mults) != 3:
            raise ConfigError("the U-Net has exactly three resolution levels")
        if self.n_mels % 4:
            raise ConfigError("n_mels must be divisible by 4")
        for mult in self.dim_mults:
            if (self.base_channels * mult) % self.groups:
                raise ConfigError("channel counts must be divisible by the group count")


class SepResBlock(nn.Module):
    def __init__(self, in_channels, out_channels, step_dim, groups=8, separable=True):
        super().__init__()
        self.conv1 = make_conv(in_channels, out_channels, separable=separable)
        self.norm1 = nn.GroupNorm(groups, out_channels)
        self.step_proj = nn.Sequential(Mish(), nn.Linear(step_dim, out_channels))
        self.conv2 = make_conv(out_channels, out_channels, separable=separable)
        self.norm2 = nn.GroupNorm(groups, out_channels)
        self.shortcut = (nn.Conv2d(in_channels, out_channels, 1)
                         if in_channels != out_channels else nn.Identity())

    def forward(self, x, step):
        h = mish(self.norm1(self.conv1(x)))
        h = h + self.step_proj(step)[:, :, None, None]
        h = mish(self.norm2(self.conv2(h)))
        return h + self.shortcut(x)


class DownBlock(nn.Module):
    def __init__(self, cin, cout, step_dim, cfg, downsample):
        super().__init__()
        self.res1 = SepResBlock(cin, cout, step_dim, cfg.groups, cfg.separable)
        self.res2 = SepResBlock(cout, cout, step_dim, cfg.groups, cfg.separable)
        self.attn = LinearAttention(cout, cfg.heads, separable=cfg.separable)
        self.down = nn.Conv2d(cout, cout, 3, stride=2, padding=1) if downsample else nn.Identity()

    def forward(self, x, step):
        x = self.attn(self.res2(self.res1(x, step), step))
        return self.down(x), x


class UpBlock(nn.Module):
    def __init__(self, cin, cout, step_dim, cfg):
        super().__init__()
        self.res1 = SepResBlock(2 * cin, cout, step_dim, cfg.groups, cfg.separable)
        self.res2 = SepResBlock(cout, cout, step_dim, cfg.groups, cfg.separable)
        self.attn = LinearAttention(cout, cfg.heads, separable=cfg.separable)
        self.up = nn.ConvTranspose2d(cout, cout, 4, stride=2, padding=1)

    def forward(self, x, skip, step):
        x = torch.cat([x, skip], dim=1)
        x = self.attn(self.res2(self.res1(x, step), step))
        return self.up(x)


class ScoreUNet(nn.Module):
    """s(x_t, mu, t): score estimate with the shape of ``x_t``."""

    def __init__(self, cfg: UNetConfig = UNetConfig()):
        super().__init__()
        self.cfg = cfg
        base = cfg.base_channels
        dims = [2] + [base * m for m in cfg.dim_mults]
        self.step_embed = StepEmbedding(base, cfg.time_scale)
        self.downs = nn.ModuleList(
            DownBlock(dims[i], dims[i + 1], base, cfg, downsample=i < 2) for i in range(3))
        mid = dims[-1]
        self.mid1 = SepResBlock(mid, mid, base, cfg.groups, cfg.separable)
        self.mid_attn = LinearAttention(mid, cfg.heads, separable=cfg.separable)
        self.mid2 = SepResBlock(mid, mid, base, cfg.groups, cfg.separable)
        # up path: level 2 -> 1, level 1 -> 0
        self.ups = nn.ModuleList([UpBlock(dims[3], dims[2], base, cfg),
                                  UpBlock(dims[2], dims[1], base, cfg)])
        self.final_conv = nn.Conv2d(base, base, 3, padding=1)
        self.final_norm = nn.GroupNorm(cfg.groups, base)
        self.out_conv = nn.Conv2d(base, 1, 1)

    def forward(self, x_t, mu, t):
        if x_t.shape != mu.shape:
            raise ShapeError(f"x_t {tuple(x_t.shape)} and mu {tuple(mu.shape)} differ")
        squeeze = x_t.dim() == 2
        if squeeze:
            x_t, mu = x_t[None], mu[None]
        if x_t.dim() != 3 or x_t.shape[1] != self.cfg.n_mels:
            raise ShapeError(f"expected [B, {self.cfg.n_mels}, frames], got {tuple(x_t.shape)}")
        b, _, n_frames = x_t.shape
        if not torch.is_tensor(t) or t.dim() == 0:
            t = torch.full((b,), float(t), dtype=x_t.dtype)
        step = self.step_embed(t.to(x_t.dtype))

        x = torch.stack([x_t, mu], dim=1)
        pad = -n_frames % 4
        if pad:
            x = F.pad(x, (0, pad))
        skips = []
        for block in self.downs:
            x, skip = block(x, step)
            skips.append(skip)
        x = self.mid2(self.mid_attn(self.mid1(x, step)), step)
        # the finest-level skip is not consumed, as in the reference topology
        x = self.ups[0](x, skips[2], step)
        x = self.ups[1](x, skips[1], step)
        x = mish(self.final_norm(self.final_conv(x)))
        out = self.out_conv(x)[:, 0, :, :n_frames]
        return out[0] if squeeze else out


def build(cfg: UNetConfig = UNetConfig()) -> ScoreUNet:
    return ScoreUNet(cfg)
