"""Latency / RTF / memory / parameter benchmark, single CPU thread."""

from __future__ import annotations

import csv
import io
import threading
import time
from dataclasses import dataclass, field

import psutil
import torch

from ..nn import count_parameters
from ..samplers import SamplerConfig
from .melio import frames_to_seconds

DEFAULT_MODES = (("non-streaming", 10), ("non-streaming", 4), ("streaming", 4))


class PeakRSS:
    """Max resident-set growth over a block, sampled by a background thread.

    Approximate: allocations that live shorter than the sampling interval
    can be missed.
    """

    def __init__(self, interval: float = 0.001):
        self.interval = interval
        self.peak_bytes = 0

    def __enter__(self):
        self._proc = psutil.Process()
        self._base = self._proc.memory_info().rss
        self._max = self._base
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def _run(self):
        while not self._stop.is_set():
            self._max = max(self._max, self._proc.memory_info().rss)
            self._stop.wait(self.interval)

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        self._max = max(self._max, self._proc.memory_info().rss)
        self.peak_bytes = self._max - self._base
        return False

    @property
    def peak_mb(self) -> float:
        return self.peak_bytes / 2 ** 20


@dataclass
class BenchRow:
    system: str
    nfe: int
    latency_s: float
    audio_s: float
    peak_mem_mb: float
    params: int
    total_s: float

    @property
    def rtf(self) -> float:
        return self.latency_s / self.audio_s


@dataclass
class BenchReport:
    rows: list[BenchRow]
    warmup: int
    repeats: int
    threads: int
    notes: list[str] = field(default_factory=list)

    def header(self) -> str:
        return (f"# single-thread benchmark: threads={self.threads} warmup={self.warmup} "
                f"repeats={self.repeats} (mean over utterances x repeats)")

    def table(self) -> str:
        cols = ("system", "NFE", "Lat(s)", "RTF", "Mem(MB)", "Params(M)", "Total(s)")
        lines = [self.header(), *self.notes,
                 f"{cols[0]:<16}{cols[1]:>5}{cols[2]:>11}{cols[3]:>9}{cols[4]:>10}{cols[5]:>11}{cols[6]:>10}"]
        for r in self.rows:
            lines.append(f"{r.system:<16}{r.nfe:>5}{r.latency_s:>11.4f}{r.rtf:>9.4f}"
                         f"{r.peak_mem_mb:>10.1f}{r.params / 1e6:>11.3f}{r.total_s:>10.4f}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["system", "nfe", "latency_s", "rtf", "audio_s", "peak_mem_mb", "params", "total_s"])
        for r in self.rows:
            w.writerow([r.system, r.nfe, f"{r.latency_s:.6f}", f"{r.rtf:.6f}", f"{r.audio_s:.6f}",
                        f"{r.peak_mem_mb:.2f}", r.params, f"{r.total_s:.6f}"])
        return buf.getvalue()


def _run_once(model, ids, mode, cfg):
    """Return (latency, total, n_frames): streaming latency is time to first chunk."""
    first = []
    t0 = time.perf_counter()
    if mode == "streaming":
        syn = model.synthesize_streaming(ids, cfg,
                                         on_chunk=lambda *a: first or first.append(time.perf_counter()))
    else:
        syn = model.synthesize(ids, cfg)
    total = time.perf_counter() - t0
    latency = first[0] - t0 if first else total
    return latency, total, syn.mel.shape[-1]


def bench(model, utterances, modes=DEFAULT_MODES, repeats: int = 5, warmup: int = 1,
          seed: int = 0, tau: float = 1.5, params: int | None = None) -> BenchReport:
    """Time every mode on every utterance (lists of phoneme ids)."""
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    model.eval()
    params = count_parameters(model) if params is None else params
    rows = []
    try:
        for mode, nfe in modes:
            cfg = SamplerConfig("dpm-solver-1", tau, nfe, None, seed)
            lat, tot, secs, peak = [], [], [], 0.0
            for ids in utterances:
                for _ in range(warmup):
                    _run_once(model, ids, mode, cfg)
                for _ in range(repeats):
                    with PeakRSS() as mem:
                        latency, total, frames = _run_once(model, ids, mode, cfg)
                    lat.append(latency)
                    tot.append(total)
                    secs.append(frames_to_seconds(frames))
                    peak = max(peak, mem.peak_mb)
            n = len(lat)
            rows.append(BenchRow(mode, nfe, sum(lat) / n, sum(secs) / n, peak, params, sum(tot) / n))
    finally:
        torch.set_num_threads(threads)
    return BenchReport(rows, warmup, repeats, 1,
                       notes=["# streaming Lat(s) is time to first chunk; Total(s) is the whole utterance"])
