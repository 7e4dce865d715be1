"""AMSGrad without bias correction."""

from __future__ import annotations

import numpy as np

from .tensor import NonFiniteError, Tensor


class AMSGrad:
    """``m <- b1 m + (1-b1) g``; ``v <- b2 v + (1-b2) g^2``; ``vhat <- max(vhat, v)``;
    ``theta <- theta - lr * m / (sqrt(vhat) + eps)``.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 0.0046, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.vhat = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        grads = {}
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {k}; step aborted")
            grads[k] = g
        for k, p in self.params.items():
            amsgrad_update(p.data, grads[k], self.m[k], self.v[k], self.vhat[k],
                           self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
            out[f"vhat.{k}"] = self.vhat[k]
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k in self.params:
            for slot, store in (("m", self.m), ("v", self.v), ("vhat", self.vhat)):
                arr = state[f"{slot}.{k}"]
                if arr.shape != store[k].shape:
                    raise ValueError(f"optimizer state {slot}.{k}: shape {arr.shape} != {store[k].shape}")
                store[k][...] = arr


def amsgrad_update(theta, g, m, v, vhat, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """In-place AMSGrad update of ``theta`` and its state arrays."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    np.maximum(vhat, v, out=vhat)
    theta -= lr * m / (np.sqrt(vhat) + eps)
