"""Speaker-aware WaveNet vocoder.

Condition path: per-frame features (43 dims, z-normalized) concatenated
with the utterance d-vector (256 dims, or nothing in speaker-independent
mode) -> 1x1 conv -> 4 dilated conv layers (tanh between layers) ->
per-frame repetition up to sample rate. The conditioned stack is the
usual residual/skip WaveNet over 8-bit mu-law classes: causal dilated
convs of width 2, gated units with a per-layer 1x1 projection of the
condition added to both halves, skip sum -> relu -> 1x1 -> relu -> 1x1
-> 256 logits.

Generation keeps a per-layer ring buffer of past activations so each new
sample costs one small matmul per layer instead of re-running the stack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .nn import ParameterStore, Tensor, adam_step, lr_schedule, no_grad
from .nn.layers import (
    CausalConv1d,
    Linear,
    causal_dilated_conv1d,
    gated_activation,
    softmax,
    uniform_init,
)

INIT_STREAM = 21
CHUNK_STREAM = 22

MID_SCALE_INDEX = 128  # mu-law silence, used as the t=0 predecessor


class AlignmentError(ValueError):
    """Waveform and feature lengths disagree beyond one frame."""


@dataclass
class WaveNetConfig:
    blocks: int = 4
    layers_per_block: int = 10
    filter_width: int = 2
    residual_channels: int = 100
    gate_channels: int = 100
    skip_channels: int = 256
    quantization_classes: int = 256
    condition_channels: int = 80
    condition_filter: int = 3
    condition_dilations: tuple = (1, 2, 4, 8)
    feature_dim: int = 43
    embedding_dim: int = 256  # 0 for the speaker-independent variant
    frame_shift_samples: int = 80

    @property
    def condition_input_dim(self) -> int:
        return self.feature_dim + self.embedding_dim

    @property
    def dilations(self) -> list[int]:
        return [2**l for _ in range(self.blocks) for l in range(self.layers_per_block)]

    @property
    def receptive_field(self) -> int:
        per_block = (self.filter_width - 1) * (2**self.layers_per_block - 1)
        return self.blocks * per_block + 1

    def metadata(self) -> dict:
        return {
            "kind": "wavenet-vocoder",
            "mode": "si" if self.embedding_dim == 0 else "osa",
            "blocks": self.blocks,
            "layers_per_block": self.layers_per_block,
            "filter_width": self.filter_width,
            "residual_channels": self.residual_channels,
            "gate_channels": self.gate_channels,
            "skip_channels": self.skip_channels,
            "quantization_classes": self.quantization_classes,
            "condition_channels": self.condition_channels,
            "condition_input_dim": self.condition_input_dim,
            "frame_shift_samples": self.frame_shift_samples,
        }


class WaveNetVocoder:
    def __init__(self, config: WaveNetConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.store = ParameterStore()
        store = self.store
        rng = np.random.default_rng([seed, INIT_STREAM])
        cc = config.condition_channels

        self.cond_pre = Linear(store, "cond.pre", config.condition_input_dim, cc, rng, dtype)
        self.cond_convs = [
            CausalConv1d(store, f"cond.conv{i}", cc, cc, config.condition_filter, d, rng, dtype)
            for i, d in enumerate(config.condition_dilations)
        ]

        res, gate, skip = config.residual_channels, config.gate_channels, config.skip_channels
        self.input_embed = store.param(
            "wn.input.W",
            uniform_init(rng, (config.quantization_classes, res), config.quantization_classes, dtype),
        )
        self.layer_convs = []
        self.layer_cond = []
        self.layer_res = []
        self.layer_skip = []
        for i, d in enumerate(self.config.dilations):
            self.layer_convs.append(
                CausalConv1d(store, f"wn.l{i}.conv", res, 2 * gate, config.filter_width, d, rng, dtype)
            )
            self.layer_cond.append(
                store.param(f"wn.l{i}.cond", uniform_init(rng, (cc, 2 * gate), cc, dtype))
            )
            self.layer_res.append(Linear(store, f"wn.l{i}.res", gate, res, rng, dtype))
            self.layer_skip.append(Linear(store, f"wn.l{i}.skip", gate, skip, rng, dtype))
        self.post1 = Linear(store, "wn.post1", skip, skip, rng, dtype)
        self.post2 = Linear(store, "wn.post2", skip, config.quantization_classes, rng, dtype)

    # -- condition network -------------------------------------------------

    def assemble_condition_input(self, features: np.ndarray, embedding: np.ndarray | None) -> np.ndarray:
        """Concatenate the d-vector onto every frame (no-op in SI mode)."""
        features = np.asarray(features, dtype=self.dtype)
        if features.ndim != 2 or features.shape[1] != self.config.feature_dim:
            raise ValueError(f"features must be [F, {self.config.feature_dim}]")
        if self.config.embedding_dim == 0:
            return features
        embedding = np.asarray(embedding, dtype=self.dtype)
        if embedding.shape != (self.config.embedding_dim,):
            raise ValueError(f"embedding must have {self.config.embedding_dim} dims")
        rep = np.broadcast_to(embedding, (features.shape[0], embedding.size))
        return np.concatenate([features, rep], axis=1)

    def condition_frames(self, cond_input) -> Tensor:
        """Per-frame condition: 1x1 conv then dilated convs, tanh between."""
        h = cond_input if isinstance(cond_input, Tensor) else Tensor(np.asarray(cond_input, dtype=self.dtype))
        h = self.cond_pre(h)
        for conv in self.cond_convs:
            h = conv(h.tanh())
        return h

    def build_condition(self, features: np.ndarray, embedding: np.ndarray | None) -> np.ndarray:
        """Per-sample condition matrix [F*shift, condition_channels]."""
        with no_grad():
            per_frame = self.condition_frames(self.assemble_condition_input(features, embedding))
        return np.repeat(per_frame.data, self.config.frame_shift_samples, axis=0)

    # -- teacher-forced stack ----------------------------------------------

    def stack_logits(self, input_idx: np.ndarray, cond_frames, sample_offset: int = 0) -> Tensor:
        """Logits[t] as a function of stack inputs x[<=t] (no shift).

        cond_frames is the [F, condition_input_dim] matrix for the whole
        utterance; rows for samples [sample_offset, sample_offset + T)
        are selected after frame-rate processing and x80 repetition.
        """
        input_idx = np.asarray(input_idx, dtype=np.int64)
        t_len = input_idx.shape[0]
        shift = self.config.frame_shift_samples
        cond_seq = self.condition_frames(cond_frames)
        frame_of_sample = (sample_offset + np.arange(t_len)) // shift
        if frame_of_sample[-1] >= cond_seq.shape[0]:
            raise ValueError(
                f"condition covers {cond_seq.shape[0]} frames but samples need frame {frame_of_sample[-1]}"
            )
        cond_up = cond_seq[frame_of_sample]  # [T, cc]

        gate = self.config.gate_channels
        x = self.input_embed[input_idx]  # one-hot @ W == row gather
        skip_sum = None
        for conv, cproj, res, skipl in zip(
            self.layer_convs, self.layer_cond, self.layer_res, self.layer_skip
        ):
            z = conv(x) + cond_up @ cproj
            a = gated_activation(z[:, :gate], z[:, gate:])
            s = skipl(a)
            skip_sum = s if skip_sum is None else skip_sum + s
            x = x + res(a)
        h = self.post1(skip_sum.relu()).relu()
        return self.post2(h)

    def teacher_forced_logits(self, x_quantized: np.ndarray, cond_frames, sample_offset: int = 0,
                              predecessor: int = MID_SCALE_INDEX) -> Tensor:
        """Logits[t] predicting x[t] from x[<t]; input shifted right by one."""
        x_quantized = np.asarray(x_quantized, dtype=np.int64)
        shifted = np.concatenate(([predecessor], x_quantized[:-1]))
        return self.stack_logits(shifted, cond_frames, sample_offset=sample_offset)

    # -- autoregressive generation ------------------------------------------

    def _generation_tables(self, cond_frames):
        """Precompute per-frame condition projections and flat weights."""
        with no_grad():
            cond_seq = self.condition_frames(cond_frames).data
        cfg = self.config
        layers = []
        for i in range(len(cfg.dilations)):
            layers.append(
                {
                    "dilation": cfg.dilations[i],
                    "taps": [np.ascontiguousarray(k) for k in self.layer_convs[i].kernel.data],
                    "bias": self.layer_convs[i].bias.data,
                    "cond": cond_seq @ self.layer_cond[i].data,  # [F, 2*gate]
                    "res_w": self.layer_res[i].W.data,
                    "res_b": self.layer_res[i].b.data,
                    "skip_w": self.layer_skip[i].W.data,
                    "skip_b": self.layer_skip[i].b.data,
                }
            )
        return layers

    def incremental_logits(self, forced_idx: np.ndarray, cond_frames) -> np.ndarray:
        """Cached logits for a forced stack-input sequence (cache test path)."""
        forced_idx = np.asarray(forced_idx, dtype=np.int64)
        layers = self._generation_tables(cond_frames)
        state = _GenerationState(self.config, layers)
        out = np.zeros((forced_idx.shape[0], self.config.quantization_classes), dtype=np.float64)
        for t, idx in enumerate(forced_idx):
            out[t] = self._step(state, layers, int(idx), t)
        return out

    def _step(self, state, layers, input_idx: int, t: int) -> np.ndarray:
        cfg = self.config
        gate = cfg.gate_channels
        fr = t // cfg.frame_shift_samples
        v = self.input_embed.data[input_idx]
        skip_sum = np.zeros(cfg.skip_channels, dtype=self.dtype)
        for layer, buffers in zip(layers, state.buffers):
            z = v @ layer["taps"][0] + layer["bias"] + layer["cond"][fr]
            span = buffers.shape[0]
            if span:
                for j in range(1, len(layer["taps"])):
                    z = z + buffers[(t - j * layer["dilation"]) % span] @ layer["taps"][j]
                buffers[t % span] = v
            a = np.tanh(z[:gate]) * expit(z[gate:])
            skip_sum += a @ layer["skip_w"] + layer["skip_b"]
            v = v + a @ layer["res_w"] + layer["res_b"]
        h = np.maximum(skip_sum, 0.0) @ self.post1.W.data + self.post1.b.data
        return np.maximum(h, 0.0) @ self.post2.W.data + self.post2.b.data

    def generate(self, features: np.ndarray, embedding: np.ndarray | None,
                 sampling: str = "sample", seed: int = 0,
                 num_samples: int | None = None) -> np.ndarray:
        """Autoregressive mu-law indices for an utterance's features."""
        if sampling not in ("sample", "argmax"):
            raise ValueError("sampling must be 'sample' or 'argmax'")
        cond_input = self.assemble_condition_input(features, embedding)
        n_frames = cond_input.shape[0]
        total = n_frames * self.config.frame_shift_samples if num_samples is None else num_samples
        layers = self._generation_tables(cond_input)
        state = _GenerationState(self.config, layers)
        rng = np.random.default_rng(seed)

        out = np.zeros(total, dtype=np.int64)
        prev = MID_SCALE_INDEX
        for t in range(total):
            logits = self._step(state, layers, prev, t)
            if sampling == "argmax":
                idx = int(np.argmax(logits))
            else:
                p = softmax(logits.astype(np.float64))
                idx = int(np.searchsorted(np.cumsum(p), rng.random()))
                idx = min(idx, p.size - 1)
            out[t] = idx
            prev = idx
        return out


class _GenerationState:
    """Per-layer ring buffers of the last (filter_width-1)*dilation inputs."""

    def __init__(self, config: WaveNetConfig, layers):
        span = config.filter_width - 1
        self.buffers = [
            np.zeros((span * layer["dilation"], config.residual_channels), dtype=np.float32)
            for layer in layers
        ]


# -- training ---------------------------------------------------------------


@dataclass
class VocoderTrainConfig:
    steps: int = 1000
    chunk_samples: int = 1200
    initial_lr: float = 0.0001
    lr_halve_every: int = 100000
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class VocoderUtterance:
    """One aligned training triple: mu-law targets plus condition input."""

    utterance_id: str
    quantized: np.ndarray  # [T] int64 mu-law indices, T = frames * shift
    cond_input: np.ndarray  # [F, condition_input_dim]


def align_lengths(num_samples: int, num_frames: int, shift: int) -> tuple[int, int]:
    """Usable (samples, frames) pair; errors beyond one frame of slack."""
    if abs(num_samples - num_frames * shift) > shift:
        raise AlignmentError(
            f"waveform has {num_samples} samples but features cover {num_frames * shift}"
        )
    frames = min(num_frames, num_samples // shift)
    return frames * shift, frames


def sample_chunk(rng, total_samples: int, chunk: int, receptive_field: int):
    """Random chunk range plus the receptive-field history that precedes it."""
    if total_samples <= chunk:
        start, stop = 0, total_samples
    else:
        start = int(rng.integers(0, total_samples - chunk + 1))
        stop = start + chunk
    history = min(receptive_field - 1, start)
    return start, stop, history


def vocoder_train_step(model: WaveNetVocoder, corpus: list[VocoderUtterance],
                       cfg: VocoderTrainConfig, step_index: int) -> float:
    """One teacher-forced Adam step on a random chunk; returns the CE loss."""
    rng = np.random.default_rng([cfg.seed, CHUNK_STREAM, step_index])
    utt = corpus[int(rng.integers(len(corpus)))]
    start, stop, history = sample_chunk(
        rng, utt.quantized.shape[0], cfg.chunk_samples, model.config.receptive_field
    )
    lo = start - history
    targets = utt.quantized[lo:stop]
    logits = model.teacher_forced_logits(
        targets, utt.cond_input, sample_offset=lo,
        predecessor=MID_SCALE_INDEX if lo == 0 else int(utt.quantized[lo - 1]),
    )
    from .nn.layers import softmax_cross_entropy

    loss = softmax_cross_entropy(logits[history:], targets[history:])
    model.store.zero_grad()
    loss.backward()
    lr = lr_schedule(model.store.step_count, cfg.initial_lr, cfg.lr_halve_every)
    adam_step(model.store, lr=lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    return loss.item()


def train_vocoder(model: WaveNetVocoder, corpus: list[VocoderUtterance],
                  cfg: VocoderTrainConfig, log=None, on_checkpoint=None) -> list[float]:
    """Chunked teacher-forced training; returns the loss curve.

    The step counter lives in the parameter store, so resuming from a
    checkpoint continues the same chunk sequence and learning-rate
    schedule as an uninterrupted run.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    for utt in corpus:
        expected = utt.cond_input.shape[0] * model.config.frame_shift_samples
        if utt.quantized.shape[0] != expected:
            raise AlignmentError(
                f"{utt.utterance_id}: {utt.quantized.shape[0]} samples vs {expected} conditioned"
            )
    losses = []
    for _ in range(cfg.steps):
        step_index = model.store.step_count
        losses.append(vocoder_train_step(model, corpus, cfg, step_index))
        if log and (step_index % cfg.log_every == 0):
            log(f"vocoder step {step_index}: ce {losses[-1]:.4f}")
        if cfg.checkpoint_every and on_checkpoint and (
            model.store.step_count % cfg.checkpoint_every == 0
        ):
            on_checkpoint(model)
    return losses
