"""First-order adaptive optimizer (Adam) over a named parameter set."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteGradient
from .tensor import Tensor


class Adam:
    def __init__(self, params: dict[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        """Apply one update in place. Rejects the whole step on any
        non-finite gradient, naming the offending parameter."""
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(f"non-finite gradient for parameter '{name}'")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Flatten optimizer state for checkpointing."""
        out = {"opt.t": np.array([self.t], dtype=np.float32)}
        for k in self.params:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        return out

    def load_state_tensors(self, entries: dict[str, np.ndarray]):
        self.t = int(entries["opt.t"][0])
        for k in self.params:
            self.m[k] = entries[f"opt.m.{k}"].astype(self.m[k].dtype).reshape(self.m[k].shape)
            self.v[k] = entries[f"opt.v.{k}"].astype(self.v[k].dtype).reshape(self.v[k].shape)
