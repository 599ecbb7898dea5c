"""Named parameter store with Adam state, plus the step-halving LR schedule."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Flat named map of trainable tensors and their Adam moments."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def param(self, name, value) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value), requires_grad=True)
        t.zero_grad()
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def num_values(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())


def adam_step(store: ParameterStore, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place. Counts as one step."""
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            continue
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)


def lr_schedule(step: int, initial_lr: float, halve_every: int) -> float:
    """Learning rate halved every `halve_every` steps."""
    if step < 0 or halve_every <= 0:
        raise ValueError("step must be >= 0 and halve_every > 0")
    return initial_lr * 0.5 ** (step // halve_every)
