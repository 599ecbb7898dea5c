"""Objective evaluation: waveform metrics, verification EER, correlation.

Distance metrics compare a generated waveform against its natural
reference: SNR on samples, RMSE of log amplitude spectra on STFT frames,
mel-cepstral distortion (c0 excluded by default), RMSE-F0 in cents over
co-voiced frames, and the V/UV disagreement rate. Generation is
frame-quantized, so pairs are trimmed to a common length first; residual
mismatches beyond one frame indicate a pipeline bug and fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import betainc

from .audio import Waveform
from .features import AcousticFeatureSequence, frame_signal

SAMPLE_TRIM_TOLERANCE = 80
FRAME_TRIM_TOLERANCE = 1
SNR_CAP_DB = 100.0
LAS_FLOOR = 1e-10
MCD_CONST = 10.0 * np.sqrt(2.0) / np.log(10.0)
CENTS_PER_OCTAVE = 1200.0


def _trim_pair(a: np.ndarray, b: np.ndarray, tolerance: int, what: str):
    if abs(len(a) - len(b)) > tolerance:
        raise ValueError(f"{what} length mismatch: {len(a)} vs {len(b)} (tolerance {tolerance})")
    n = min(len(a), len(b))
    return a[:n], b[:n]


def snr(ref: Waveform, gen: Waveform) -> float:
    """Signal-to-noise ratio in dB, capped at +100 for negligible noise."""
    r, g = _trim_pair(ref.samples, gen.samples, SAMPLE_TRIM_TOLERANCE, "waveform")
    signal = float(r @ r)
    if signal <= 0.0:
        raise ValueError("all-zero reference signal")
    noise = float((r - g) @ (r - g))
    if noise < 1e-12 * signal:
        return SNR_CAP_DB
    return 10.0 * np.log10(signal / noise)


def log_amplitude_spectra(w: Waveform, window=400, shift=80, nfft=512) -> np.ndarray:
    frames = frame_signal(w, window, shift)
    mag = np.abs(np.fft.rfft(frames, n=nfft, axis=1))
    return 20.0 * np.log10(mag + LAS_FLOOR)


def rmse_las(ref: Waveform, gen: Waveform, window=400, shift=80, nfft=512) -> float:
    """RMSE of log amplitude spectra in dB over all frames and bins."""
    r, g = _trim_pair(ref.samples, gen.samples, SAMPLE_TRIM_TOLERANCE, "waveform")
    sr = ref.sample_rate_hz
    lr = log_amplitude_spectra(Waveform(r, sr), window, shift, nfft)
    lg = log_amplitude_spectra(Waveform(g, sr), window, shift, nfft)
    diff = lr - lg
    return float(np.sqrt(np.mean(diff * diff)))


def _mel_matrix(feats) -> np.ndarray:
    if isinstance(feats, AcousticFeatureSequence):
        return feats.mel
    return np.asarray(feats)


def mcd(ref_feats, gen_feats, include_c0: bool = False) -> float:
    """Mel-cepstral distortion in dB, mean over frames."""
    r = _mel_matrix(ref_feats).astype(np.float64)
    g = _mel_matrix(gen_feats).astype(np.float64)
    r, g = _trim_pair(r, g, FRAME_TRIM_TOLERANCE, "feature frame")
    lo = 0 if include_c0 else 1
    diff = r[:, lo:] - g[:, lo:]
    return float(np.mean(MCD_CONST * np.sqrt((diff * diff).sum(axis=1))))


def rmse_f0(ref_track, gen_track) -> tuple[float, int]:
    """RMSE-F0 in cents over frames voiced in both tracks.

    Tracks are (f0_hz, vuv) pairs. Returns (rmse_cents, co-voiced frame
    count); the value is 0 with count 0 when no frame is voiced in both.
    """
    ref_f0, ref_vuv = (np.asarray(a, dtype=np.float64) for a in ref_track)
    gen_f0, gen_vuv = (np.asarray(a, dtype=np.float64) for a in gen_track)
    ref_f0, gen_f0 = _trim_pair(ref_f0, gen_f0, FRAME_TRIM_TOLERANCE, "F0 frame")
    ref_vuv, gen_vuv = _trim_pair(ref_vuv, gen_vuv, FRAME_TRIM_TOLERANCE, "V/UV frame")
    both = (ref_vuv > 0.5) & (gen_vuv > 0.5)
    n = int(both.sum())
    if n == 0:
        return 0.0, 0
    cents = CENTS_PER_OCTAVE * np.log2(gen_f0[both] / ref_f0[both])
    return float(np.sqrt(np.mean(cents * cents))), n


def vuv_error_rate(ref_vuv, gen_vuv) -> float:
    """Fraction of frames whose voicing flags disagree."""
    r = np.asarray(ref_vuv, dtype=np.float64)
    g = np.asarray(gen_vuv, dtype=np.float64)
    r, g = _trim_pair(r, g, FRAME_TRIM_TOLERANCE, "V/UV frame")
    return float(np.mean((r > 0.5) != (g > 0.5)))


# -- speaker verification --------------------------------------------------


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(a @ b / np.sqrt((a @ a) * (b @ b) + 1e-300))


def enrollment_centroid(embeddings) -> np.ndarray:
    """L2-normalized mean of a speaker's enrollment embeddings."""
    e = np.mean(np.asarray(embeddings, dtype=np.float64), axis=0)
    return e / np.sqrt(e @ e + 1e-300)


@dataclass
class Trial:
    embedding: np.ndarray
    centroid: np.ndarray
    is_target: bool


@dataclass
class TrialSet:
    trials: list

    def scores(self) -> np.ndarray:
        return np.array([cosine_similarity(t.embedding, t.centroid) for t in self.trials])

    def labels(self) -> np.ndarray:
        return np.array([t.is_target for t in self.trials], dtype=bool)


def make_trials(test_embeddings: dict, enrolled_centroids: dict) -> TrialSet:
    """Pair every test utterance with every enrolled speaker."""
    trials = []
    for utt_id in sorted(test_embeddings):
        speaker, emb = test_embeddings[utt_id]
        for enrolled in sorted(enrolled_centroids):
            trials.append(Trial(emb, enrolled_centroids[enrolled], speaker == enrolled))
    return TrialSet(trials)


def eer_from_scores(scores, labels) -> float:
    """EER where FAR and FRR cross, linearly interpolated between thresholds."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    target = np.sort(scores[labels])
    nontarget = np.sort(scores[~labels])
    if target.size == 0 or nontarget.size == 0:
        raise ValueError("trial set needs both target and non-target trials")

    thresholds = np.concatenate([np.unique(scores), [scores.max() + 1.0]])
    far = 1.0 - np.searchsorted(nontarget, thresholds, side="left") / nontarget.size
    frr = np.searchsorted(target, thresholds, side="left") / target.size

    diff = far - frr  # starts at 1, ends at -1
    i = int(np.argmax(diff <= 0.0))
    if diff[i] == 0.0:
        return float(far[i])
    t = diff[i - 1] / (diff[i - 1] - diff[i])
    return float(far[i - 1] + t * (far[i] - far[i - 1]))


def eer(trials: TrialSet) -> float:
    """Equal error rate of a cosine-scored trial set, as a fraction."""
    return eer_from_scores(trials.scores(), trials.labels())


# -- correlation -------------------------------------------------------------


def pearson(x, y) -> tuple[float, float]:
    """Pearson r with a two-sided t-test p-value (incomplete-beta CDF)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n != y.size:
        raise ValueError("length mismatch")
    if n < 3:
        raise ValueError("need at least 3 points")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise ValueError("zero variance")
    r = float(np.clip(dx @ dy / np.sqrt(vx * vy), -1.0, 1.0))
    dof = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    t_sq = r * r * dof / (1.0 - r * r)
    p = float(betainc(dof / 2.0, 0.5, dof / (dof + t_sq)))
    return r, p


# -- per-utterance report -----------------------------------------------------


@dataclass
class UtteranceMetrics:
    utterance_id: str
    duration_sec: float
    snr_db: float
    rmse_las_db: float
    mcd_db: float
    rmse_f0_cent: float
    vuv_error_rate: float
    covoiced_frames: int

    METRIC_FIELDS = ("snr_db", "rmse_las_db", "mcd_db", "rmse_f0_cent", "vuv_error_rate")


@dataclass
class MetricReport:
    utterances: list
    aggregates: dict
    eer_percent: Optional[float] = None
    correlations: Optional[dict] = None


def aggregate(utterances: list) -> dict:
    out = {}
    for name in UtteranceMetrics.METRIC_FIELDS:
        out[name] = float(np.mean([getattr(u, name) for u in utterances]))
    return out


def compare_pair(utterance_id: str, ref: Waveform, gen: Waveform,
                 extract=None) -> UtteranceMetrics:
    """All waveform metrics for one (reference, generated) pair.

    Lengths are first cut to the shorter of the two; generation is
    frame-quantized so the reference may carry up to window+shift extra
    tail samples, anything beyond that is treated as a pipeline error.
    """
    from .features import DEFAULT_SHIFT, DEFAULT_WINDOW, extract_features

    if extract is None:
        extract = extract_features
    if ref.sample_rate_hz != gen.sample_rate_hz:
        raise ValueError("sample rate mismatch")
    max_slack = DEFAULT_WINDOW + DEFAULT_SHIFT
    if abs(len(ref) - len(gen)) >= max_slack:
        raise ValueError(
            f"{utterance_id}: reference {len(ref)} vs generated {len(gen)} samples "
            f"differ beyond the frame-quantization slack of {max_slack}"
        )
    n = min(len(ref), len(gen))
    ref = Waveform(ref.samples[:n], ref.sample_rate_hz)
    gen = Waveform(gen.samples[:n], gen.sample_rate_hz)

    ref_feats = extract(ref)
    gen_feats = extract(gen)
    f0_rmse, covoiced = rmse_f0(
        (ref_feats.f0_hz, ref_feats.vuv), (gen_feats.f0_hz, gen_feats.vuv)
    )
    return UtteranceMetrics(
        utterance_id=utterance_id,
        duration_sec=n / ref.sample_rate_hz,
        snr_db=snr(ref, gen),
        rmse_las_db=rmse_las(ref, gen),
        mcd_db=mcd(ref_feats, gen_feats),
        rmse_f0_cent=f0_rmse,
        vuv_error_rate=vuv_error_rate(ref_feats.vuv, gen_feats.vuv),
        covoiced_frames=covoiced,
    )


def correlation_table(utterances: list) -> dict:
    """Pearson (coefficient, p) of each metric against utterance duration."""
    durations = [u.duration_sec for u in utterances]
    out = {}
    for name in UtteranceMetrics.METRIC_FIELDS:
        out[name] = pearson(durations, [getattr(u, name) for u in utterances])
    return out
