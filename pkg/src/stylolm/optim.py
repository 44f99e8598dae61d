"""AdamW: Adam with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .errors import GradientError


class AdamW:
    """Keeps first/second-moment buffers per parameter and a shared step count.

    Update per step, with bias-corrected moments m^, v^:

        p <- p - lr * m^ / (sqrt(v^) + eps) - lr * weight_decay * p

    Weight decay is applied directly to the parameter (decoupled), not
    folded into the gradient.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 5e-5,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            if p.grad is None:
                raise GradientError(f"parameter {name!r} has no gradient")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            m_hat = m / bc1
            v_hat = v / bc2
            update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay:
                update = update + self.lr * self.weight_decay * p.data
            p.data -= update.astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad_()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat view of optimizer state for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for k in self.params:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for k, p in self.params.items():
            self.m[k] = np.array(arrays[f"m/{k}"], dtype=p.data.dtype)
            self.v[k] = np.array(arrays[f"v/{k}"], dtype=p.data.dtype)
        self.t = int(t)
