"""Frame-level acoustic features: 40 mel-cepstra, log-energy, log-F0, V/UV.

The same 43-dim layout conditions both the speaker encoder and the
vocoder. Extraction is a Hann-windowed STFT, triangular mel filterbank
(80 bands, 0-8 kHz), log with a 1e-10 floor, and an orthonormal DCT-II
truncated to 40 coefficients, plus a normalized-autocorrelation pitch
tracker with parabolic lag interpolation.

Column layout, fixed: [0..39] mel-cepstra, [40] log-energy,
[41] log-F0 (natural log of Hz, 0 where unvoiced), [42] V/UV flag.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .audio import Waveform
from .ioutil import Reader, atomic_write_bytes

FEATURE_DIM = 43
MEL_ORDER = 40
COL_ENERGY = 40
COL_LOG_F0 = 41
COL_VUV = 42

DEFAULT_WINDOW = 400
DEFAULT_SHIFT = 80
DEFAULT_NUM_MEL_BANDS = 80
DEFAULT_NFFT = 512
LOG_FLOOR = 1e-10

F0_MIN_HZ = 50.0
F0_MAX_HZ = 500.0
VOICING_THRESHOLD = 0.3
SUBHARMONIC_FACTOR = 0.9


class TooShortError(ValueError):
    """Signal shorter than one analysis window."""


@dataclass
class AcousticFeatureSequence:
    frames: np.ndarray  # [num_frames, 43] float32
    frame_shift_samples: int = DEFAULT_SHIFT
    window_size_samples: int = DEFAULT_WINDOW
    sample_rate_hz: int = 16000

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != FEATURE_DIM:
            raise ValueError(f"feature matrix must be [N, {FEATURE_DIM}], got {self.frames.shape}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def mel(self) -> np.ndarray:
        return self.frames[:, :MEL_ORDER]

    @property
    def log_energy(self) -> np.ndarray:
        return self.frames[:, COL_ENERGY]

    @property
    def log_f0(self) -> np.ndarray:
        return self.frames[:, COL_LOG_F0]

    @property
    def vuv(self) -> np.ndarray:
        return self.frames[:, COL_VUV]

    @property
    def f0_hz(self) -> np.ndarray:
        """Linear-Hz track recovered from the stored log-F0 (0 if unvoiced)."""
        voiced = self.vuv > 0.5
        return np.where(voiced, np.exp(self.frames[:, COL_LOG_F0].astype(np.float64)), 0.0)


def num_frames_for(num_samples: int, window: int, shift: int) -> int:
    return (num_samples - window) // shift + 1


def frame_signal(w: Waveform, window: int = DEFAULT_WINDOW, shift: int = DEFAULT_SHIFT) -> np.ndarray:
    """Slice into Hann-windowed frames of `window` samples every `shift`."""
    if not (window >= shift > 0):
        raise ValueError("need window >= shift > 0")
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) < window:
        raise TooShortError(f"signal of {len(x)} samples is shorter than one {window}-sample window")
    n = num_frames_for(len(x), window, shift)
    idx = np.arange(window)[None, :] + shift * np.arange(n)[:, None]
    return x[idx] * np.hanning(window)[None, :]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_bands=DEFAULT_NUM_MEL_BANDS, nfft=DEFAULT_NFFT, sample_rate=16000,
                   fmin=0.0, fmax=8000.0):
    """Triangular filters on rfft bins; returns (weights [bands, bins], centers_hz)."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_bands + 2))
    freqs = np.fft.rfftfreq(nfft, d=1.0 / sample_rate)
    weights = np.zeros((num_bands, freqs.size))
    for b in range(num_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        weights[b] = np.maximum(0.0, np.minimum(up, down))
    return weights, edges[1:-1]


_fb_cache: dict[tuple, np.ndarray] = {}


def _filterbank_for(num_bands, nfft, sample_rate):
    key = (num_bands, nfft, sample_rate)
    if key not in _fb_cache:
        _fb_cache[key], _ = mel_filterbank(num_bands, nfft, sample_rate)
    return _fb_cache[key]


def mel_cepstra(frame: np.ndarray, order: int = MEL_ORDER, num_mel_bands: int = DEFAULT_NUM_MEL_BANDS,
                nfft: int = DEFAULT_NFFT, sample_rate: int = 16000) -> np.ndarray:
    """Mel-cepstral coefficients of one Hann-windowed frame.

    Magnitude spectrum -> mel band energies -> log (floored) -> DCT-II
    (orthonormal) -> first `order` coefficients.
    """
    if num_mel_bands < order:
        raise ValueError("need at least as many mel bands as cepstral coefficients")
    frame = np.asarray(frame, dtype=np.float64)
    mag = np.abs(np.fft.rfft(frame, n=nfft))
    fb = _filterbank_for(num_mel_bands, nfft, sample_rate)
    band_energy = fb @ (mag * mag)
    logmel = np.log(band_energy + LOG_FLOOR)
    return dct(logmel, type=2, norm="ortho")[:order]


def frame_energy(frame: np.ndarray) -> float:
    """log(floor + mean squared sample) of one windowed frame."""
    frame = np.asarray(frame, dtype=np.float64)
    return float(np.log(LOG_FLOOR + np.mean(frame * frame)))


def _frame_f0(frame: np.ndarray, sample_rate: int, lag_min: int, lag_max: int,
              voicing_threshold: float) -> tuple[float, int]:
    """Pitch of one raw (unwindowed) frame via normalized autocorrelation."""
    w = frame.size
    energy = frame @ frame
    if energy < 1e-12:
        return 0.0, 0

    raw = np.correlate(frame, frame, mode="full")[w - 1 :]
    cs = np.concatenate(([0.0], np.cumsum(frame * frame)))
    lags = np.arange(lag_max + 2)
    e_head = cs[w - lags]
    e_tail = cs[w] - cs[lags]
    norm = np.sqrt(np.maximum(e_head * e_tail, 1e-20))
    r = raw[: lag_max + 2] / norm

    seg = r[lag_min : lag_max + 1]
    peak = float(seg.max())
    if peak < voicing_threshold:
        return 0.0, 0

    # local maxima; prefer the smallest lag among near-best peaks to avoid
    # halving the pitch when multiple period multiples score alike
    interior = r[lag_min : lag_max + 1]
    left = r[lag_min - 1 : lag_max]
    right = r[lag_min + 1 : lag_max + 2]
    is_max = (interior >= left) & (interior >= right)
    candidates = np.nonzero(is_max & (interior >= SUBHARMONIC_FACTOR * peak)
                            & (interior >= voicing_threshold))[0]
    if candidates.size == 0:
        best = int(np.argmax(interior)) + lag_min
    else:
        best = int(candidates[0]) + lag_min

    # parabolic interpolation around the integer-lag peak
    lag = float(best)
    if lag_min < best < lag_max:
        ym, y0, yp = r[best - 1], r[best], r[best + 1]
        denom = ym - 2.0 * y0 + yp
        if abs(denom) > 1e-12:
            delta = 0.5 * (ym - yp) / denom
            if -1.0 < delta < 1.0:
                lag += delta
    f0 = sample_rate / lag
    f0 = float(np.clip(f0, sample_rate / lag_max, sample_rate / lag_min))
    return f0, 1


def estimate_f0(w: Waveform, shift: int = DEFAULT_SHIFT, window: int = DEFAULT_WINDOW,
                fmin: float = F0_MIN_HZ, fmax: float = F0_MAX_HZ,
                voicing_threshold: float = VOICING_THRESHOLD) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame (f0_hz, vuv) on the same frame grid as frame_signal."""
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) < window:
        raise TooShortError(f"signal of {len(x)} samples is shorter than one {window}-sample window")
    sr = w.sample_rate_hz
    lag_min = int(np.floor(sr / fmax))
    lag_max = int(np.ceil(sr / fmin))
    lag_max = min(lag_max, window - 2)
    n = num_frames_for(len(x), window, shift)

    f0 = np.zeros(n)
    vuv = np.zeros(n, dtype=np.int64)
    for k in range(n):
        frame = x[k * shift : k * shift + window]
        f0[k], vuv[k] = _frame_f0(frame, sr, lag_min, lag_max, voicing_threshold)
    return f0, vuv


def extract_features(w: Waveform, window: int = DEFAULT_WINDOW, shift: int = DEFAULT_SHIFT,
                     num_mel_bands: int = DEFAULT_NUM_MEL_BANDS,
                     voicing_threshold: float = VOICING_THRESHOLD) -> AcousticFeatureSequence:
    """Full 43-dim feature sequence for one waveform."""
    windowed = frame_signal(w, window, shift)
    n = windowed.shape[0]
    out = np.zeros((n, FEATURE_DIM), dtype=np.float64)
    for k in range(n):
        out[k, :MEL_ORDER] = mel_cepstra(windowed[k], num_mel_bands=num_mel_bands,
                                         sample_rate=w.sample_rate_hz)
        out[k, COL_ENERGY] = frame_energy(windowed[k])
    f0, vuv = estimate_f0(w, shift, window, voicing_threshold=voicing_threshold)
    voiced = vuv > 0
    out[voiced, COL_LOG_F0] = np.log(f0[voiced])
    out[:, COL_VUV] = vuv
    return AcousticFeatureSequence(
        frames=out.astype(np.float32),
        frame_shift_samples=shift,
        window_size_samples=window,
        sample_rate_hz=w.sample_rate_hz,
    )


# -- feature file container ----------------------------------------------
#
#   magic b"SAWF", u32 version=1, u32 num_frames, u32 dim, u32 shift,
#   u32 window, u32 sample_rate, then num_frames*dim little-endian f32
#   in row-major order.

FEATURE_MAGIC = b"SAWF"
FEATURE_VERSION = 1


def save_features(path, feats: AcousticFeatureSequence) -> None:
    header = FEATURE_MAGIC + struct.pack(
        "<IIIIII",
        FEATURE_VERSION,
        feats.num_frames,
        feats.frames.shape[1],
        feats.frame_shift_samples,
        feats.window_size_samples,
        feats.sample_rate_hz,
    )
    body = np.ascontiguousarray(feats.frames, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + body)


def load_features(path) -> AcousticFeatureSequence:
    with open(path, "rb") as fh:
        r = Reader(fh.read(), context=str(path))
    if r.take(4) != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature file")
    version, n, dim, shift, window, sr = r.unpack("<IIIIII")
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported feature file version {version}")
    data = np.frombuffer(r.take(n * dim * 4), dtype="<f4").reshape(n, dim)
    return AcousticFeatureSequence(
        frames=data.copy(), frame_shift_samples=shift,
        window_size_samples=window, sample_rate_hz=sr,
    )
