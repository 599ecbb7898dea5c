"""Network building blocks: linear, causal dilated conv, gated unit,
projected LSTM, and the softmax cross-entropy head.

Weights init as uniform(+-sqrt(1/fan_in)), biases zero except the LSTM
forget gate (+1). Layers register their parameters in a ParameterStore so
the optimizer and checkpointing see one flat named map.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_node, stack


def uniform_init(rng, shape, fan_in, dtype=np.float32):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear:
    """y = x @ W + b on 2-D inputs."""

    def __init__(self, store, name, in_dim, out_dim, rng, dtype=np.float32):
        self.W = store.param(name + ".W", uniform_init(rng, (in_dim, out_dim), in_dim, dtype))
        self.b = store.param(name + ".b", np.zeros(out_dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W + self.b


def causal_dilated_conv1d(x: Tensor, kernel: Tensor, dilation: int, bias: Tensor | None = None) -> Tensor:
    """Causal dilated 1-D convolution over a [T, C_in] sequence.

    out[t] = sum_j x[t - j*dilation] @ kernel[j], with zeros left of t=0,
    so tap 0 is the current sample and the output keeps the input length.
    """
    if dilation < 1:
        raise ValueError("dilation must be >= 1")
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    k, c_in, c_out = kernel.shape
    t_len = x.shape[0]
    if x.shape[1] != c_in:
        raise ValueError(f"conv input has {x.shape[1]} channels, kernel expects {c_in}")

    pad = (k - 1) * dilation
    xp = np.zeros((t_len + pad, c_in), dtype=x.dtype)
    xp[pad:] = x.data
    y = np.zeros((t_len, c_out), dtype=x.dtype)
    for j in range(k):
        off = pad - j * dilation  # tap j looks j*dilation steps back
        y += xp[off : off + t_len] @ kernel.data[j]
    if bias is not None:
        y = y + bias.data

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        if kernel.requires_grad or x.requires_grad:
            gxp = np.zeros_like(xp) if x.requires_grad else None
            for j in range(k):
                off = pad - j * dilation
                if kernel.requires_grad:
                    kernel._accum_at(j, xp[off : off + t_len].T @ g)
                if x.requires_grad:
                    gxp[off : off + t_len] += g @ kernel.data[j].T
            if x.requires_grad:
                x._accum(gxp[pad:])
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=0))

    return make_node(y, parents, bw)


class CausalConv1d:
    """Owns the kernel/bias of one causal dilated conv layer."""

    def __init__(self, store, name, in_ch, out_ch, width, dilation, rng, dtype=np.float32):
        self.dilation = dilation
        fan_in = width * in_ch
        self.kernel = store.param(
            name + ".kernel", uniform_init(rng, (width, in_ch, out_ch), fan_in, dtype)
        )
        self.bias = store.param(name + ".bias", np.zeros(out_ch, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return causal_dilated_conv1d(x, self.kernel, self.dilation, self.bias)


def gated_activation(x_filter: Tensor, x_gate: Tensor) -> Tensor:
    """tanh(x_filter) * sigmoid(x_gate), elementwise."""
    if x_filter.shape != x_gate.shape:
        raise ValueError(f"gated activation shape mismatch {x_filter.shape} vs {x_gate.shape}")
    return x_filter.tanh() * x_gate.sigmoid()


class LstmProjected:
    """LSTM cell with a linear projection of the hidden state.

    The recurrence runs on the projected state p (dimension proj_size),
    gate order is (input, forget, cell, output). Accepts [T, in] or
    [B, T, in] input and returns the projected output sequence plus the
    final (cell, projected) state.
    """

    def __init__(self, store, name, in_dim, cell_size, proj_size, rng, dtype=np.float32):
        self.cell_size = cell_size
        self.proj_size = proj_size
        h4 = 4 * cell_size
        self.Wx = store.param(name + ".Wx", uniform_init(rng, (in_dim, h4), in_dim, dtype))
        self.Wh = store.param(name + ".Wh", uniform_init(rng, (proj_size, h4), proj_size, dtype))
        b = np.zeros(h4, dtype=dtype)
        b[cell_size : 2 * cell_size] = 1.0  # forget gate bias
        self.b = store.param(name + ".b", b)
        self.Wp = store.param(name + ".Wp", uniform_init(rng, (cell_size, proj_size), cell_size, dtype))

    def __call__(self, x: Tensor, state=None):
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, x.shape[0], x.shape[1])
        bsz, t_len, in_dim = x.shape
        h = self.cell_size

        if state is None:
            c = Tensor(np.zeros((bsz, h), dtype=x.dtype))
            p = Tensor(np.zeros((bsz, self.proj_size), dtype=x.dtype))
        else:
            c, p = state

        # input contribution for all steps in one matmul
        xw = (x.reshape(bsz * t_len, in_dim) @ self.Wx + self.b).reshape(bsz, t_len, 4 * h)

        outs = []
        for t in range(t_len):
            gates = xw[:, t, :] + p @ self.Wh
            i = gates[:, 0:h].sigmoid()
            f = gates[:, h : 2 * h].sigmoid()
            g = gates[:, 2 * h : 3 * h].tanh()
            o = gates[:, 3 * h : 4 * h].sigmoid()
            c = f * c + i * g
            p = o * c.tanh() @ self.Wp
            outs.append(p)

        seq = stack(outs, axis=1)
        if squeeze:
            seq = seq.reshape(t_len, self.proj_size)
        return seq, (c, p)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax of the target classes.

    Stabilized by row-max subtraction; backward is (softmax - onehot)/T.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    t_len, classes = logits.shape
    if targets.shape != (t_len,):
        raise ValueError(f"targets shape {targets.shape} does not match logits rows {t_len}")
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        raise ValueError("target class index out of range")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(t_len), targets].mean()

    def bw(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[np.arange(t_len), targets] -= 1.0
            logits._accum((g * grad / t_len).astype(logits.dtype))

    return make_node(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain-numpy softmax over the last axis (inference paths)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
