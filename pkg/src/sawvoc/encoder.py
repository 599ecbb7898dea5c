"""Speaker encoder: stacked projected LSTM trained with the GE2E loss.

An utterance's d-vector is the L2-normalized final-frame output of the
LSTM stack, computed over sliding windows (default 160 frames, 50%
overlap) and averaged. Training pulls same-speaker window embeddings
toward their centroid and pushes other speakers' centroids away through
a scaled-cosine softmax with learnable scale w and bias b.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ParameterStore, Tensor, adam_step, no_grad
from .nn.layers import LstmProjected
from .nn.tensor import as_tensor

INIT_STREAM = 11
BATCH_STREAM = 12

GE2E_W_INIT = 10.0
GE2E_B_INIT = -5.0
GE2E_W_MIN = 1e-4


class InsufficientSpeakersError(ValueError):
    """Training corpus cannot form a GE2E batch."""


@dataclass
class SpeakerEncoderConfig:
    input_dim: int = 43
    num_layers: int = 3
    cell_size: int = 768
    proj_size: int = 256
    window_frames: int = 160
    hop_frames: int = 80
    min_window_frames: int = 40

    def metadata(self) -> dict:
        return {
            "kind": "speaker-encoder",
            "input_dim": self.input_dim,
            "num_layers": self.num_layers,
            "cell_size": self.cell_size,
            "proj_size": self.proj_size,
            "window_frames": self.window_frames,
            "hop_frames": self.hop_frames,
        }


def l2_normalize(t: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-normalize along the last axis, differentiable."""
    sq = (t * t).sum(axis=-1, keepdims=True)
    return t / (sq + eps).sqrt()


class SpeakerEncoder:
    def __init__(self, config: SpeakerEncoderConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.store = ParameterStore()
        rng = np.random.default_rng([seed, INIT_STREAM])
        self.layers = []
        in_dim = config.input_dim
        for i in range(config.num_layers):
            self.layers.append(
                LstmProjected(self.store, f"lstm{i}", in_dim, config.cell_size,
                              config.proj_size, rng, dtype=dtype)
            )
            in_dim = config.proj_size
        self.w = self.store.param("ge2e.w", np.asarray(GE2E_W_INIT, dtype=dtype))
        self.b = self.store.param("ge2e.b", np.asarray(GE2E_B_INIT, dtype=dtype))
        self.dtype = dtype

    def forward(self, x) -> Tensor:
        """Windows [B, T, input_dim] -> unit-norm embeddings [B, proj_size]."""
        h = as_tensor(x)
        for layer in self.layers:
            h, _ = layer(h)
        return l2_normalize(h[:, -1, :])

    def encode_window(self, segment: np.ndarray) -> np.ndarray:
        """One fixed-length window [window_frames, input_dim] -> d-vector."""
        segment = np.asarray(segment, dtype=self.dtype)
        if segment.ndim != 2 or segment.shape[1] != self.config.input_dim:
            raise ValueError(f"window must be [T, {self.config.input_dim}]")
        if segment.shape[0] != self.config.window_frames:
            raise ValueError(
                f"window must have exactly {self.config.window_frames} frames, got {segment.shape[0]}"
            )
        with no_grad():
            return self.forward(segment[None]).data[0].copy()

    def window_starts(self, num_frames: int) -> list[int]:
        win, hop = self.config.window_frames, self.config.hop_frames
        if num_frames < win:
            return [0]
        return list(range(0, num_frames - win + 1, hop))

    def embed_utterance(self, frames: np.ndarray) -> np.ndarray:
        """Sliding-window d-vectors averaged and re-normalized.

        Utterances shorter than one window are embedded as a single
        window of their full length (at least min_window_frames frames).
        """
        frames = np.asarray(frames, dtype=self.dtype)
        if frames.ndim != 2 or frames.shape[1] != self.config.input_dim:
            raise ValueError(f"features must be [T, {self.config.input_dim}]")
        n = frames.shape[0]
        if n == 0:
            raise ValueError("empty feature sequence")
        win = self.config.window_frames
        with no_grad():
            if n < win:
                if n < self.config.min_window_frames:
                    raise ValueError(
                        f"utterance of {n} frames is below the {self.config.min_window_frames}-frame minimum"
                    )
                windows = frames[None]
            else:
                starts = self.window_starts(n)
                windows = np.stack([frames[s : s + win] for s in starts])
            emb = self.forward(windows).data
        mean = emb.mean(axis=0)
        return (mean / np.sqrt((mean * mean).sum() + 1e-12)).astype(self.dtype)


def ge2e_loss_from_embeddings(emb: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """GE2E softmax loss over raw window embeddings [N, M, D].

    Similarity of embedding (j, i) to speaker k's centroid is
    w * cos + b, where the own-speaker centroid excludes the embedding
    itself. Returns the mean over all N*M elements of
    -S(j,i,j) + log sum_k exp(S(j,i,k)).
    """
    emb = as_tensor(emb)
    n_spk, n_utt, dim = emb.shape
    if n_spk < 2 or n_utt < 2:
        raise InsufficientSpeakersError(
            f"GE2E needs N >= 2 speakers and M >= 2 utterances, got N={n_spk}, M={n_utt}"
        )

    en = l2_normalize(emb)
    centroid = en.sum(axis=1) * (1.0 / n_utt)  # [N, D]
    # leave-one-out centroid for the own speaker
    excl = (centroid.reshape(n_spk, 1, dim) * float(n_utt) - en) * (1.0 / (n_utt - 1))

    sim_all = (en.reshape(n_spk * n_utt, dim) @ l2_normalize(centroid).T).reshape(
        n_spk, n_utt, n_spk
    )
    sim_self = (en * l2_normalize(excl)).sum(axis=2)  # [N, M]

    s_all = sim_all * w + b
    s_self = sim_self * w + b

    own = np.eye(n_spk, dtype=emb.dtype).reshape(n_spk, 1, n_spk)
    s = s_all * (1.0 - own) + s_self.reshape(n_spk, n_utt, 1) * own

    stab = Tensor(s.data.max(axis=2, keepdims=True))  # constant wrt grad
    logsumexp = ((s - stab).exp().sum(axis=2, keepdims=True)).log() + stab
    positive = (s * own).sum(axis=2, keepdims=True)
    return (logsumexp - positive).mean()


def ge2e_loss(encoder: SpeakerEncoder, batch: np.ndarray) -> Tensor:
    """Loss of a [N, M, T, input_dim] batch of fixed-length crops."""
    n_spk, n_utt, t_len, dim = batch.shape
    flat = batch.reshape(n_spk * n_utt, t_len, dim).astype(encoder.dtype)
    emb = encoder.forward(flat).reshape(n_spk, n_utt, encoder.config.proj_size)
    return ge2e_loss_from_embeddings(emb, encoder.w, encoder.b)


@dataclass
class EncoderTrainConfig:
    steps: int = 500
    batch_speakers: int = 4
    batch_utterances: int = 4
    crop_frames: int = 160
    learning_rate: float = 0.001
    seed: int = 0
    log_every: int = 50
    stop_loss: float | None = None  # early stop once reached


def sample_ge2e_batch(corpus: dict[str, list[np.ndarray]], cfg: EncoderTrainConfig, step: int,
                      feature_dim: int) -> np.ndarray:
    """Draw N speakers x M random fixed-length crops for one step."""
    rng = np.random.default_rng([cfg.seed, BATCH_STREAM, step])
    speakers = sorted(corpus)
    chosen = rng.choice(len(speakers), size=cfg.batch_speakers, replace=False)
    batch = np.zeros(
        (cfg.batch_speakers, cfg.batch_utterances, cfg.crop_frames, feature_dim),
        dtype=np.float32,
    )
    for si, spk_idx in enumerate(chosen):
        utts = corpus[speakers[spk_idx]]
        for ui in range(cfg.batch_utterances):
            u = utts[rng.integers(len(utts))]
            off = rng.integers(0, u.shape[0] - cfg.crop_frames + 1)
            batch[si, ui] = u[off : off + cfg.crop_frames]
    return batch


def validate_corpus(corpus: dict[str, list[np.ndarray]], cfg: EncoderTrainConfig):
    eligible = {
        spk: [u for u in utts if u.shape[0] >= cfg.crop_frames]
        for spk, utts in corpus.items()
    }
    eligible = {spk: utts for spk, utts in eligible.items() if utts}
    if len(eligible) < 2:
        raise InsufficientSpeakersError(
            f"need >= 2 speakers with crops of {cfg.crop_frames} frames, have {len(eligible)}"
        )
    if len(eligible) < cfg.batch_speakers:
        raise InsufficientSpeakersError(
            f"batch wants {cfg.batch_speakers} speakers but only {len(eligible)} are usable"
        )
    return eligible


def train_encoder(corpus: dict[str, list[np.ndarray]], encoder: SpeakerEncoder,
                  cfg: EncoderTrainConfig, log=None) -> list[float]:
    """GE2E training loop; mutates the encoder, returns the loss curve."""
    eligible = validate_corpus(corpus, cfg)
    dim = encoder.config.input_dim
    losses = []
    for step in range(cfg.steps):
        batch = sample_ge2e_batch(eligible, cfg, step, dim)
        loss = ge2e_loss(encoder, batch)
        encoder.store.zero_grad()
        loss.backward()
        adam_step(encoder.store, lr=cfg.learning_rate)
        # scale must stay positive for the cosine softmax to make sense
        encoder.w.data = np.maximum(encoder.w.data, GE2E_W_MIN)
        losses.append(loss.item())
        if log and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log(f"ge2e step {step}: loss {losses[-1]:.4f}")
        if cfg.stop_loss is not None and losses[-1] <= cfg.stop_loss:
            break
    return losses
