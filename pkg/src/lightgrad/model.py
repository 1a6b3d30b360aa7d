"""Encoder, duration predictor and score U-Net bundled as one module."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion import NoiseSchedule, diffusion_loss
from .samplers import SamplerConfig, sample
from .streaming import ChunkPlan, decode_streaming, plan_chunks
from .tts import (EncoderConfig, PhonemeEncoder, duration_loss, encoder_loss, expand,
                  gaussian_log_likelihood, mas_align, predict_durations)
from .unet import ScoreUNet, UNetConfig


@dataclass
class Losses:
    diffusion: torch.Tensor
    encoder: torch.Tensor
    duration: torch.Tensor


@dataclass
class Synthesis:
    mel: torch.Tensor
    durations: np.ndarray
    mu: torch.Tensor          # per-phoneme prior means


class LightGrad(nn.Module):
    def __init__(self, enc_cfg: EncoderConfig, unet_cfg: UNetConfig,
                 sched: NoiseSchedule = NoiseSchedule()):
        super().__init__()
        if enc_cfg.n_mels != unet_cfg.n_mels:
            raise ValueError("encoder and decoder disagree on n_mels")
        self.sched = sched
        self.encoder = PhonemeEncoder(enc_cfg)
        self.decoder = ScoreUNet(unet_cfg)

    @property
    def n_mels(self):
        return self.decoder.cfg.n_mels

    def losses(self, batch, segment_frames: int, gen: torch.Generator, offsets) -> Losses:
        """Losses for a list of ``(ids, mel)`` pairs.

        The encoder terms use whole utterances; the diffusion term uses a
        ``segment_frames`` crop per item starting at ``offsets[k]``.
        """
        enc_terms, dur_terms, ys, mus = [], [], [], []
        for (ids, y), off in zip(batch, offsets):
            out = self.encoder(ids)
            with torch.no_grad():
                align = mas_align(gaussian_log_likelihood(out.mu, y))
            mu_frames = expand(out.mu, align.durations)
            enc_terms.append(encoder_loss(mu_frames, y))
            dur_terms.append(duration_loss(out.log_durations, align.durations))
            y_seg, mu_seg = _crop(y, off, segment_frames), _crop(mu_frames, off, segment_frames)
            ys.append(y_seg)
            mus.append(mu_seg)
        x0, mu = torch.stack(ys), torch.stack(mus)
        s = self.sched
        t = s.t_min + (s.horizon_T - s.t_min) * torch.rand(x0.shape[0], generator=gen, dtype=x0.dtype)
        eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
        diff = diffusion_loss(self.decoder, x0, mu, t, eps, s)
        return Losses(diff, torch.stack(enc_terms).mean(), torch.stack(dur_terms).mean())

    @torch.no_grad()
    def synthesize(self, ids, cfg: SamplerConfig, durations=None) -> Synthesis:
        """Full-utterance synthesis; ``durations`` overrides the predictor."""
        out = self.encoder(torch.as_tensor(ids, dtype=torch.long))
        dur = predict_durations(out.log_durations) if durations is None else np.asarray(durations)
        mu = expand(out.mu, dur)
        mel = sample(self.decoder, mu, cfg, self.sched, index=0)
        return Synthesis(mel=mel, durations=dur, mu=out.mu)

    @torch.no_grad()
    def synthesize_streaming(self, ids, cfg: SamplerConfig, plan: ChunkPlan | None = None,
                             durations=None, on_chunk=None, workers: int = 0,
                             min_frames: int = 22, max_frames: int = 43) -> Synthesis:
        out = self.encoder(torch.as_tensor(ids, dtype=torch.long))
        dur = predict_durations(out.log_durations) if durations is None else np.asarray(durations)
        if plan is None:
            plan = plan_chunks(dur, min_frames, max(max_frames, int(dur.max())))
        mel = decode_streaming(self.decoder, out.mu, dur, plan, cfg, self.sched,
                               on_chunk=on_chunk, workers=workers)
        return Synthesis(mel=mel, durations=dur, mu=out.mu)


def _crop(x: torch.Tensor, offset: int, length: int) -> torch.Tensor:
    n = x.shape[-1]
    if n < length:
        # short utterances are extended by repeating their final frame
        return F.pad(x[None], (0, length - n), mode="replicate")[0]
    return x[:, offset:offset + length]
