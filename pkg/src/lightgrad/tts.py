"""Text side: phoneme encoder, duration predictor, alignment and losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import AlignmentError, ShapeError, VocabularyError

PAD_ID = 0
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    n_mels: int = 80
    hidden: int = 128
    channels: int = 512
    n_blocks: int = 3
    kernel_size: int = 3
    dur_channels: int = 256


@dataclass
class EncoderOutput:
    mu: torch.Tensor          # [n_phonemes, n_mels]
    log_durations: torch.Tensor  # [n_phonemes]


@dataclass
class Alignment:
    durations: np.ndarray
    score: float = float("nan")

    @property
    def n_frames(self) -> int:
        return int(self.durations.sum())


class ChannelNorm(nn.Module):
    """LayerNorm over the channel axis of a [B, C, L] tensor."""

    def __init__(self, channels):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x):
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


class ConvBlock(nn.Module):
    def __init__(self, hidden, channels, kernel_size):
        super().__init__()
        self.norm = ChannelNorm(hidden)
        self.conv = nn.Conv1d(hidden, channels, kernel_size, padding=kernel_size // 2)
        self.proj = nn.Conv1d(channels, hidden, 1)

    def forward(self, x):
        return x + self.proj(torch.relu(self.conv(self.norm(x))))


class DurationPredictor(nn.Module):
    def __init__(self, hidden, channels, kernel_size=3):
        super().__init__()
        pad = kernel_size // 2
        self.net = nn.Sequential(
            nn.Conv1d(hidden, channels, kernel_size, padding=pad), nn.ReLU(), ChannelNorm(channels),
            nn.Conv1d(channels, channels, kernel_size, padding=pad), nn.ReLU(), ChannelNorm(channels),
            nn.Conv1d(channels, 1, 1),
        )

    def forward(self, h):
        return self.net(h)[:, 0]


class PhonemeEncoder(nn.Module):
    """Convolutional stand-in for a transformer text encoder of matched widths."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.hidden)
        nn.init.normal_(self.embed.weight, 0.0, cfg.hidden ** -0.5)
        self.prenet = nn.Sequential(
            nn.Conv1d(cfg.hidden, cfg.channels, 5, padding=2), nn.ReLU(),
            nn.Conv1d(cfg.channels, cfg.hidden, 1),
        )
        self.blocks = nn.Sequential(*[ConvBlock(cfg.hidden, cfg.channels, cfg.kernel_size)
                                      for _ in range(cfg.n_blocks)])
        self.norm = ChannelNorm(cfg.hidden)
        self.to_mu = nn.Conv1d(cfg.hidden, cfg.n_mels, 1)
        self.duration = DurationPredictor(cfg.hidden, cfg.dur_channels)

    def forward(self, ids: torch.Tensor) -> EncoderOutput:
        if ids.dim() != 1 or ids.numel() == 0:
            raise ShapeError("expected a non-empty 1-D phoneme id sequence")
        if int(ids.min()) < 0 or int(ids.max()) >= self.cfg.vocab_size:
            raise VocabularyError(f"phoneme id outside vocabulary of {self.cfg.vocab_size}")
        x = self.embed(ids).T[None] * math.sqrt(self.cfg.hidden)
        x = x + self.prenet(x)
        h = self.norm(self.blocks(x))
        mu = self.to_mu(h)[0].T
        log_dur = self.duration(h.detach())[0]
        return EncoderOutput(mu=mu, log_durations=log_dur)


def encode(ids, enc: PhonemeEncoder) -> EncoderOutput:
    if not torch.is_tensor(ids):
        ids = torch.as_tensor(list(ids), dtype=torch.long)
    return enc(ids)


def gaussian_log_likelihood(mu_per_phoneme: torch.Tensor, y: torch.Tensor) -> np.ndarray:
    """log N(y_j; mu_i, I) for every phoneme i and frame j; y is [n_mels, n_frames]."""
    mu = mu_per_phoneme.detach().double()
    y = y.detach().double()
    sq = (mu * mu).sum(1)[:, None] - 2.0 * mu @ y + (y * y).sum(0)[None, :]
    return (-0.5 * sq - mu.shape[1] * HALF_LOG_2PI).numpy()


def mas_align(log_like) -> Alignment:
    """Best monotone, surjective phoneme-to-frame path by dynamic programming.

    ``Q[i, j] = L[i, j] + max(Q[i-1, j-1], Q[i, j-1])``; on ties the
    backtrace stays on the current phoneme.
    """
    ll = np.asarray(log_like, dtype=np.float64)
    if ll.ndim != 2:
        raise ShapeError("log-likelihood must be a matrix")
    n_ph, n_fr = ll.shape
    if n_ph < 1 or n_fr < n_ph:
        raise AlignmentError(f"cannot align {n_ph} phonemes to {n_fr} frames")
    q = np.full((n_ph, n_fr), -np.inf)
    q[0, 0] = ll[0, 0]
    for j in range(1, n_fr):
        prev = q[:, j - 1]
        best = prev.copy()
        best[1:] = np.maximum(prev[1:], prev[:-1])
        q[:, j] = ll[:, j] + best
    durations = np.zeros(n_ph, dtype=np.int64)
    i = n_ph - 1
    for j in range(n_fr - 1, -1, -1):
        durations[i] += 1
        if i > 0 and j > 0 and (i == j or q[i - 1, j - 1] > q[i, j - 1]):
            i -= 1
    return Alignment(durations=durations, score=float(q[-1, -1]))


def expand(mu_per_phoneme: torch.Tensor, durations, n_frames: int | None = None) -> torch.Tensor:
    """Repeat phoneme row i durations[i] times; returns [n_mels, n_frames]."""
    dur = torch.as_tensor(np.asarray(durations), dtype=torch.long)
    if dur.dim() != 1 or dur.numel() != mu_per_phoneme.shape[0]:
        raise ShapeError("one duration per phoneme row is required")
    if int(dur.min()) < 1:
        raise ShapeError("durations must be at least one frame")
    total = int(dur.sum())
    if n_frames is not None and total != n_frames:
        raise ShapeError(f"durations sum to {total}, expected {n_frames} frames")
    return torch.repeat_interleave(mu_per_phoneme, dur, dim=0).T


def encoder_loss(mu_frames: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Unit-variance Gaussian NLL, averaged over elements."""
    if mu_frames.shape != y.shape:
        raise ShapeError(f"shape mismatch {tuple(mu_frames.shape)} vs {tuple(y.shape)}")
    return torch.mean(0.5 * (y - mu_frames) ** 2) + HALF_LOG_2PI


def duration_loss(log_dur_pred: torch.Tensor, durations) -> torch.Tensor:
    target = torch.log(torch.as_tensor(np.asarray(durations), dtype=log_dur_pred.dtype))
    if target.shape != log_dur_pred.shape:
        raise ShapeError("one predicted log-duration per phoneme is required")
    return torch.mean((log_dur_pred - target) ** 2)


def predict_durations(log_durations: torch.Tensor) -> np.ndarray:
    """round(exp(log d)) clamped to at least one frame."""
    d = torch.round(torch.exp(log_durations.detach().double())).clamp(min=1)
    return d.numpy().astype(np.int64)
