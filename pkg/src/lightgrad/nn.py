"""Layers used by the decoder and encoder.

Tensors, autograd and the dense convolution kernels come from torch; the
layers built on top of them (separable convolution, linear attention with a
ReZero gate, the diffusion-step embedding) live here.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


def mish(x: torch.Tensor) -> torch.Tensor:
    # F.softplus switches to the identity above 20, which keeps exp() finite
    return x * torch.tanh(F.softplus(x))


class Mish(nn.Module):
    def forward(self, x):
        return mish(x)


def group_norm(x, groups: int, gain=None, bias=None, eps: float = 1e-5):
    if x.shape[1] % groups:
        raise ConfigError(f"{x.shape[1]} channels not divisible into {groups} groups")
    return F.group_norm(x, groups, gain, bias, eps)


def _check_channels(x, expected, where):
    if x.dim() != 4 or x.shape[1] != expected:
        raise ShapeError(f"{where}: expected [B, {expected}, H, W], got {tuple(x.shape)}")


class SepConv2d(nn.Module):
    """Per-channel k x k convolution followed by a 1 x 1 channel mix."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=None):
        super().__init__()
        if padding is None:
            padding = kernel_size // 2
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.depthwise = nn.Conv2d(in_channels, in_channels, kernel_size, stride=stride,
                                   padding=padding, groups=in_channels)
        self.pointwise = nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x):
        _check_channels(x, self.in_channels, "SepConv2d")
        return self.pointwise(self.depthwise(x))

    @staticmethod
    def n_params(in_channels, out_channels, kernel_size=3):
        return kernel_size ** 2 * in_channels + in_channels + in_channels * out_channels + out_channels


def make_conv(in_channels, out_channels, kernel_size=3, separable=True):
    """Same-padding k x k convolution, separable or dense."""
    if separable:
        return SepConv2d(in_channels, out_channels, kernel_size)
    return nn.Conv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2)


class LinearAttention(nn.Module):
    """Linear self-attention over the flattened (mels x frames) positions.

    Keys are softmax-normalised along the sequence, so the d x d context
    ``softmax(K)^T V`` is formed once and the cost stays linear in sequence
    length.  The output is gated by a scalar initialised to zero.
    """

    def __init__(self, channels, heads=1, dim_head=None, separable=True):
        super().__init__()
        dim_head = dim_head or channels // heads
        if dim_head < 1:
            raise ConfigError("attention head dimension must be positive")
        self.channels = channels
        self.heads = heads
        self.dim_head = dim_head
        hidden = heads * dim_head
        self.to_q = make_conv(channels, hidden, separable=separable)
        self.to_k = make_conv(channels, hidden, separable=separable)
        self.to_v = make_conv(channels, hidden, separable=separable)
        self.to_out = make_conv(hidden, channels, separable=separable)
        self.gain = nn.Parameter(torch.zeros(1))

    def attend(self, x):
        """Attention branch before the ReZero gate."""
        _check_channels(x, self.channels, "LinearAttention")
        b, _, h, w = x.shape
        shape = (b, self.heads, self.dim_head, h * w)
        q = self.to_q(x).reshape(shape) * self.dim_head ** -0.5
        k = self.to_k(x).reshape(shape).softmax(dim=-1)
        v = self.to_v(x).reshape(shape)
        context = torch.einsum("bhdn,bhen->bhde", k, v)
        out = torch.einsum("bhde,bhdn->bhen", context, q)
        return self.to_out(out.reshape(b, self.heads * self.dim_head, h, w))

    def forward(self, x):
        return x + self.gain * self.attend(x)


class SinusoidalEmbedding(nn.Module):
    def __init__(self, dim, scale=1000.0):
        super().__init__()
        if dim < 4 or dim % 2:
            raise ConfigError("sinusoidal embedding dim must be even and >= 4")
        self.dim = dim
        self.scale = scale

    def forward(self, t):
        half = self.dim // 2
        freqs = torch.exp(torch.arange(half, dtype=t.dtype) * (-math.log(10000.0) / (half - 1)))
        arg = self.scale * t[:, None] * freqs[None, :]
        return torch.cat([arg.sin(), arg.cos()], dim=-1)


class StepEmbedding(nn.Module):
    """Diffusion time -> feature vector, sinusoids then a two-layer MLP."""

    def __init__(self, dim, scale=1000.0, hidden=None):
        super().__init__()
        hidden = hidden or 4 * dim
        self.dim = dim
        self.sinusoids = SinusoidalEmbedding(dim, scale)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), Mish(), nn.Linear(hidden, dim))

    def forward(self, t):
        return self.mlp(self.sinusoids(t))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def backward(loss: torch.Tensor, module: nn.Module | None = None) -> None:
    """Reverse-mode pass from a scalar loss.

    Parameters of ``module`` that the loss does not reach get zero
    gradients instead of ``None``.  The graph is freed afterwards, so a
    second call on the same loss raises ``RuntimeError``.
    """
    if loss.numel() != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()
    if module is not None:
        for p in module.parameters():
            if p.requires_grad and p.grad is None:
                p.grad = torch.zeros_like(p)
