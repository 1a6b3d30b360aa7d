"""Transcripts, vocabularies and the synthetic toy corpus.

Transcript lines are ``utt_id|tok tok tok``; mel files sit next to the
transcript as ``<utt_id>.mel``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, VocabularyError
from .melio import read_mel, write_mel

TRANSCRIPT = "transcript.txt"

# toy generator constants; templates do not depend on the seed
TOY_N_PHONEMES = 16
TOY_N_MELS = 20
TOY_FLOOR = -5.0
TOY_NOISE = 0.1
TOY_PHONEMES_PER_UTT = (5, 10)


@dataclass
class Utterance:
    utt_id: str
    tokens: list[str]
    mel: np.ndarray | None = None


class Vocabulary:
    """Token <-> id map; id 0 is reserved for padding/silence."""

    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.index = {tok: i + 1 for i, tok in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens) + 1

    def encode(self, tokens) -> list[int]:
        try:
            return [self.index[t] for t in tokens]
        except KeyError as exc:
            raise VocabularyError(f"unknown phoneme {exc.args[0]!r}") from None

    def to_text(self) -> str:
        return "\n".join(self.tokens)

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        return cls(t for t in text.split("\n") if t)

    @classmethod
    def from_utterances(cls, utts) -> "Vocabulary":
        return cls(sorted({t for u in utts for t in u.tokens}))


def parse_transcript(text: str, path=None) -> list[Utterance]:
    utts = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if "|" not in line:
            raise FormatError("expected 'utt_id|phonemes'", path, lineno)
        utt_id, phones = line.split("|", 1)
        tokens = phones.split()
        if not utt_id.strip() or not tokens:
            raise FormatError("empty utterance id or phoneme list", path, lineno)
        utts.append(Utterance(utt_id.strip(), tokens))
    return utts


def format_transcript(utts) -> str:
    return "".join(f"{u.utt_id}|{' '.join(u.tokens)}\n" for u in utts)


def load_corpus(directory) -> list[Utterance]:
    directory = Path(directory)
    path = directory / TRANSCRIPT
    try:
        utts = parse_transcript(path.read_text(), path)
    except OSError as exc:
        raise FormatError(f"cannot read transcript ({exc.strerror})", path) from None
    for u in utts:
        u.mel = read_mel(directory / f"{u.utt_id}.mel")
    return utts


def toy_token(k: int) -> str:
    return f"p{k:02d}"


def toy_duration_range(k: int) -> tuple[int, int]:
    lo = 3 + (5 * k) % 6
    return lo, lo + 3


def toy_template(k: int, n_frames: int, n_mels: int = TOY_N_MELS) -> np.ndarray:
    """Noise-free log-mel block for phoneme k, shape [n_mels, n_frames].

    A Gaussian spectral peak at a phoneme-specific bin whose height rises
    and falls over the phoneme.
    """
    f = np.arange(n_mels, dtype=np.float64)
    centre = (k + 0.5) * n_mels / TOY_N_PHONEMES
    width = 1.0 + (k % 3) * 0.5
    peak = np.exp(-0.5 * ((f - centre) / width) ** 2)
    # second, weaker formant keeps neighbouring phonemes apart in cepstral space
    peak += 0.5 * np.exp(-0.5 * ((f - (centre + n_mels / 3) % n_mels) / 1.5) ** 2)
    pos = (np.arange(n_frames) + 0.5) / n_frames
    envelope = 0.6 + 0.4 * np.sin(np.pi * pos)
    return TOY_FLOOR + 4.0 * peak[:, None] * envelope[None, :]


def toy_reference(tokens, durations, n_mels: int = TOY_N_MELS) -> np.ndarray:
    """Concatenated clean templates for a toy utterance."""
    ks = [int(t[1:]) for t in tokens]
    return np.concatenate([toy_template(k, int(d), n_mels) for k, d in zip(ks, durations)], axis=1)


def toy_utterances(n_utts: int, seed: int, n_mels: int = TOY_N_MELS):
    """Yield ``(utt_id, tokens, durations, noisy_mel)`` deterministically."""
    rng = np.random.default_rng(seed)
    for i in range(n_utts):
        n_ph = int(rng.integers(TOY_PHONEMES_PER_UTT[0], TOY_PHONEMES_PER_UTT[1] + 1))
        ks = rng.integers(0, TOY_N_PHONEMES, size=n_ph)
        durations = [int(rng.integers(*toy_duration_range(int(k)), endpoint=True)) for k in ks]
        tokens = [toy_token(int(k)) for k in ks]
        clean = toy_reference(tokens, durations, n_mels)
        mel = (clean + TOY_NOISE * rng.standard_normal(clean.shape)).astype(np.float32)
        yield f"toy{i:04d}", tokens, durations, mel


def gen_toy_corpus(n_utts: int, seed: int, out_dir, n_mels: int = TOY_N_MELS) -> list[Utterance]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    utts, dur_lines = [], []
    for utt_id, tokens, durations, mel in toy_utterances(n_utts, seed, n_mels):
        write_mel(out / f"{utt_id}.mel", mel)
        utts.append(Utterance(utt_id, tokens, mel))
        dur_lines.append(f"{utt_id}|{' '.join(map(str, durations))}\n")
    (out / TRANSCRIPT).write_text(format_transcript(utts))
    # ground-truth durations, used for teacher-forced evaluation
    (out / "durations.txt").write_text("".join(dur_lines))
    return utts


def load_durations(directory) -> dict[str, list[int]]:
    path = Path(directory) / "durations.txt"
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            utt_id, raw = line.split("|", 1)
            out[utt_id] = [int(v) for v in raw.split()]
        except ValueError:
            raise FormatError("expected 'utt_id|d d d'", path, lineno) from None
    return out
