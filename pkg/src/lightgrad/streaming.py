"""Chunked decoding at phoneme boundaries.

Each chunk covers whole phonemes and is decoded with one phoneme of context
borrowed from each neighbour; the frames of the borrowed phonemes are cut
away before the chunk is emitted.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
import torch

from .diffusion import NoiseSchedule
from .errors import PlanningError, ShapeError
from .samplers import SamplerConfig, sample
from .tts import expand

# 43 frames at hop 256 / 22050 Hz is ~0.5 s
DEFAULT_MIN_FRAMES = 22
DEFAULT_MAX_FRAMES = 43


@dataclass(frozen=True)
class Chunk:
    phonemes: tuple[int, int]         # core phoneme range [start, stop)
    padded_phonemes: tuple[int, int]
    frames: tuple[int, int]           # core frame range in the utterance
    padded_frames: tuple[int, int]

    @property
    def trim(self) -> tuple[int, int]:
        """Core frame slice relative to the padded chunk."""
        start = self.frames[0] - self.padded_frames[0]
        return start, start + self.frames[1] - self.frames[0]


@dataclass(frozen=True)
class ChunkPlan:
    chunks: tuple[Chunk, ...]
    n_frames: int

    def __len__(self):
        return len(self.chunks)


def _group_sizes(durations, max_frames):
    groups, current, total = [], [], 0
    for i, d in enumerate(durations):
        if current and total + d > max_frames:
            groups.append(current)
            current, total = [], 0
        current.append(i)
        total += d
    groups.append(current)
    return groups


def plan_chunks(durations, min_frames: int = DEFAULT_MIN_FRAMES,
                max_frames: int = DEFAULT_MAX_FRAMES) -> ChunkPlan:
    """Greedy whole-phoneme chunking with one phoneme of context per side.

    A trailing chunk shorter than ``min_frames`` takes phonemes from the end
    of its predecessor while the predecessor stays at or above
    ``min_frames``.  (Merging the two never fits: the greedy pass only
    closed the predecessor because the next phoneme overflowed it.)
    """
    dur = [int(d) for d in durations]
    if not dur or min(dur) < 1:
        raise PlanningError("durations must be a non-empty list of positive counts")
    if min_frames > max_frames:
        raise PlanningError("min_frames exceeds max_frames")
    if max(dur) > max_frames:
        raise PlanningError(f"a phoneme lasts {max(dur)} frames, more than max_frames={max_frames}")

    groups = _group_sizes(dur, max_frames)
    if len(groups) > 1:
        size = lambda g: sum(dur[i] for i in g)
        last, prev = groups[-1], groups[-2]
        while (size(last) < min_frames and len(prev) > 1
               and size(prev) - dur[prev[-1]] >= min_frames
               and size(last) + dur[prev[-1]] <= max_frames):
            last.insert(0, prev.pop())

    bounds = np.concatenate([[0], np.cumsum(dur)])
    n_ph = len(dur)
    chunks = []
    for g in groups:
        a, b = g[0], g[-1] + 1
        pa, pb = max(a - 1, 0), min(b + 1, n_ph)
        chunks.append(Chunk(phonemes=(a, b), padded_phonemes=(pa, pb),
                            frames=(int(bounds[a]), int(bounds[b])),
                            padded_frames=(int(bounds[pa]), int(bounds[pb]))))
    return ChunkPlan(chunks=tuple(chunks), n_frames=int(bounds[-1]))


ChunkCallback = Callable[[int, tuple, np.ndarray], None]


def _decode_chunk(net, mu_per_phoneme, durations, chunk: Chunk, index, cfg, sched):
    pa, pb = chunk.padded_phonemes
    mu = expand(mu_per_phoneme[pa:pb], durations[pa:pb])
    mel = sample(net, mu, cfg, sched, index=index)
    s, e = chunk.trim
    return mel[:, s:e]


def iter_chunks(net, mu_per_phoneme: torch.Tensor, durations, plan: ChunkPlan,
                cfg: SamplerConfig, sched: NoiseSchedule | None = None,
                workers: int = 0) -> Iterator[tuple[int, Chunk, torch.Tensor]]:
    """Yield ``(index, chunk, core_mel)`` in plan order as chunks complete.

    Chunk k draws its prior noise from stream ``(cfg.seed, k)``, so serial
    and pooled decoding give identical frames.
    """
    durations = np.asarray(durations, dtype=np.int64)
    if plan.n_frames != int(durations.sum()) or len(durations) != mu_per_phoneme.shape[0]:
        raise ShapeError("chunk plan does not match the alignment")
    mu_per_phoneme = mu_per_phoneme.detach()
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_decode_chunk, net, mu_per_phoneme, durations, c, k, cfg, sched)
                       for k, c in enumerate(plan.chunks)]
            for k, (c, fut) in enumerate(zip(plan.chunks, futures)):
                yield k, c, fut.result()
    else:
        for k, c in enumerate(plan.chunks):
            yield k, c, _decode_chunk(net, mu_per_phoneme, durations, c, k, cfg, sched)


def decode_streaming(net, mu_per_phoneme, durations, plan: ChunkPlan, cfg: SamplerConfig,
                     sched: NoiseSchedule | None = None, on_chunk: ChunkCallback | None = None,
                     workers: int = 0) -> torch.Tensor:
    """Decode every chunk, invoke ``on_chunk(index, frame_range, mel)`` in order,
    and return the concatenated [n_mels, sum(durations)] mel."""
    parts = []
    for k, chunk, mel in iter_chunks(net, mu_per_phoneme, durations, plan, cfg, sched, workers):
        if on_chunk is not None:
            on_chunk(k, chunk.frames, mel.numpy())
        parts.append(mel)
    return torch.cat(parts, dim=1)


def seam_smoothness(mel: torch.Tensor, plan: ChunkPlan) -> tuple[float, float]:
    """Mean |frame-to-frame delta| at chunk seams and elsewhere."""
    delta = (mel[:, 1:] - mel[:, :-1]).abs().mean(0)
    seams = [c.frames[0] - 1 for c in plan.chunks[1:]]
    mask = np.zeros(delta.shape[0], dtype=bool)
    mask[seams] = True
    inner = delta[torch.from_numpy(~mask)]
    at_seams = float(delta[torch.from_numpy(mask)].mean()) if seams else float("nan")
    return at_seams, float(inner.mean()) if inner.numel() else float("nan")
