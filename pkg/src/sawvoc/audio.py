"""PCM audio I/O and 8-bit mu-law companding.

Only 16-bit signed mono RIFF/WAVE is supported; everything in the pipeline
runs on [-1, 1] float samples at 16 kHz. Quantization maps the companded
value onto 256 classes by flooring, and decoding returns bin centers, which
makes encode(decode(i)) == i for every index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MU = 255
QUANT_CLASSES = 256
_LOG1P_MU = np.log1p(MU)


class WavError(Exception):
    """Base class for WAV container problems."""


class MalformedWavError(WavError):
    """File is not a readable RIFF/WAVE container."""


class UnsupportedWavError(WavError):
    """Container is valid but not 16-bit mono integer PCM."""


@dataclass
class Waveform:
    """Mono sample sequence in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_sec(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass
class QuantizedWaveform:
    """Mu-law class indices in [0, 255] with the source sample rate."""

    indices: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.size and (
            self.indices.min() < 0 or self.indices.max() >= QUANT_CLASSES
        ):
            raise ValueError("quantized indices out of [0, 255]")

    def __len__(self):
        return self.indices.shape[0]


def read_wav(path) -> Waveform:
    """Read a 16-bit mono PCM RIFF/WAVE file into [-1, 1) floats.

    Walks the chunk list, so extra chunks (LIST, fact, ...) are tolerated.
    Raises MalformedWavError for broken containers and UnsupportedWavError
    for valid containers in any other encoding.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise MalformedWavError(f"{path}: truncated data chunk")
            pcm = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or pcm is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")

    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise UnsupportedWavError(f"{path}: non-PCM format tag {audio_format}")
    if channels != 1:
        raise UnsupportedWavError(f"{path}: {channels} channels, expected mono")
    if bits != 16:
        raise UnsupportedWavError(f"{path}: {bits}-bit samples, expected 16")
    if sample_rate <= 0:
        raise MalformedWavError(f"{path}: invalid sample rate {sample_rate}")

    raw = np.frombuffer(pcm[: len(pcm) - len(pcm) % 2], dtype="<i2")
    samples = np.clip(raw.astype(np.float64) / 32768.0, -1.0, 1.0)
    return Waveform(samples=samples, sample_rate_hz=sample_rate)


def write_wav(path, w: Waveform) -> None:
    """Write a waveform as canonical 16-bit mono PCM, clipping to [-1, 1]."""
    x = np.clip(np.asarray(w.samples, dtype=np.float64), -1.0, 1.0)
    ints = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
    pcm = ints.tobytes()

    sr = int(w.sample_rate_hz)
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(pcm)),
            b"WAVE",
            b"fmt ",
            struct.pack("<IHHIIHH", 16, 1, 1, sr, sr * 2, 2, 16),
            b"data",
            struct.pack("<I", len(pcm)),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(header + pcm)


def mulaw_compand(x: np.ndarray) -> np.ndarray:
    """Continuous mu-law companding F(x) = sign(x) ln(1+mu|x|)/ln(1+mu)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(MU * np.abs(x)) / _LOG1P_MU


def mulaw_expand(y: np.ndarray) -> np.ndarray:
    """Inverse companding: y in [-1, 1] back to a linear amplitude."""
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * (np.expm1(np.abs(y) * _LOG1P_MU)) / MU


def mulaw_encode(w: Waveform) -> QuantizedWaveform:
    """Quantize samples to 256 mu-law classes (floor of the shifted compand)."""
    x = np.clip(w.samples, -1.0, 1.0)
    f = mulaw_compand(x)
    idx = np.floor((f + 1.0) / 2.0 * QUANT_CLASSES).astype(np.int64)
    idx = np.clip(idx, 0, QUANT_CLASSES - 1)
    return QuantizedWaveform(indices=idx, sample_rate_hz=w.sample_rate_hz)


def mulaw_decode(q: QuantizedWaveform) -> Waveform:
    """Map class indices to their companded bin centers, then expand."""
    y = (2.0 * q.indices.astype(np.float64) + 1.0) / QUANT_CLASSES - 1.0
    x = mulaw_expand(y)
    return Waveform(samples=x, sample_rate_hz=q.sample_rate_hz)


def mulaw_decode_indices(indices: np.ndarray) -> np.ndarray:
    """Decode raw index arrays without wrapping them in a QuantizedWaveform."""
    y = (2.0 * np.asarray(indices, dtype=np.float64) + 1.0) / QUANT_CLASSES - 1.0
    return mulaw_expand(y)
