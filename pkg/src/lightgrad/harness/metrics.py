"""Mel cepstral distortion."""

from __future__ import annotations

import math

import numpy as np
from scipy.fft import dct

from ..errors import ShapeError

MCD_CONST = 10.0 / math.log(10.0)
N_CEPSTRA = 13


def mel_cepstrum(mel, n_cepstra: int = N_CEPSTRA) -> np.ndarray:
    """Orthonormal DCT-II of each log-mel frame, coefficients 1..n (c0 dropped).

    ``mel`` is [n_mels, n_frames]; returns [n_cepstra, n_frames].
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.shape[0] <= n_cepstra:
        raise ShapeError(f"need more than {n_cepstra} mel bins, got {mel.shape[0]}")
    return dct(mel, type=2, norm="ortho", axis=0)[1:n_cepstra + 1]


def mcd(ref, hyp, n_cepstra: int = N_CEPSTRA) -> float:
    ref, hyp = np.asarray(ref), np.asarray(hyp)
    if ref.shape[0] != hyp.shape[0]:
        raise ShapeError("mel bin counts differ")
    if ref.shape[1] != hyp.shape[1]:
        raise ShapeError(f"frame counts differ ({ref.shape[1]} vs {hyp.shape[1]}); align first")
    diff = mel_cepstrum(ref, n_cepstra) - mel_cepstrum(hyp, n_cepstra)
    return float(np.mean(MCD_CONST * np.sqrt(2.0 * np.sum(diff ** 2, axis=0))))
