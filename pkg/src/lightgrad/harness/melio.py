"""Binary mel-spectrogram files.

``b"MELB" | version:u32 | n_frames:u32 | n_mels:u32 | f32[n_frames * n_mels]``,
little-endian, one frame (all mel bins) after another.  In memory a mel is
``[n_mels, n_frames]``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"MELB"
VERSION = 1
SAMPLE_RATE = 22050
HOP_LENGTH = 256
WIN_LENGTH = 1024


def frames_to_seconds(n_frames: int) -> float:
    return n_frames * HOP_LENGTH / SAMPLE_RATE


def encode_mel(mel) -> bytes:
    mel = np.asarray(mel, dtype=np.float32)
    if mel.ndim != 2:
        raise FormatError("mel must be [n_mels, n_frames]")
    n_mels, n_frames = mel.shape
    return MAGIC + struct.pack("<III", VERSION, n_frames, n_mels) + np.ascontiguousarray(mel.T).astype("<f4").tobytes()


def decode_mel(buf: bytes, path=None) -> np.ndarray:
    if len(buf) < 16 or buf[:4] != MAGIC:
        raise FormatError("not a mel file (bad magic)", path)
    version, n_frames, n_mels = struct.unpack_from("<III", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported mel file version {version}", path)
    expected = 16 + 4 * n_frames * n_mels
    if len(buf) != expected:
        raise FormatError(f"payload is {len(buf) - 16} bytes, header implies {expected - 16}", path)
    frames = np.frombuffer(buf, dtype="<f4", offset=16).reshape(n_frames, n_mels)
    return frames.T.astype(np.float32)


def write_mel(path, mel) -> None:
    Path(path).write_bytes(encode_mel(mel))


def read_mel(path) -> np.ndarray:
    return decode_mel(Path(path).read_bytes(), path)
