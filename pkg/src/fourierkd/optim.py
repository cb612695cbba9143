"""SGD with momentum and Adam, over lists of Tensor parameters.

Both optimizers keep per-parameter state keyed by position in the
parameter list and expose ``state_blocks``/``load_state_blocks`` so a
checkpoint can round-trip the exact optimizer state.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["SGD", "Adam"]


def _check_params(params: list[Tensor]) -> list[Tensor]:
    params = list(params)
    seen = set()
    for p in params:
        if not isinstance(p, Tensor):
            raise TypeError(f"optimizer parameters must be Tensors, got {type(p).__name__}")
        if id(p) in seen:
            raise ValueError("duplicate parameter handed to optimizer")
        seen.add(id(p))
    return params


class SGD:
    """Momentum SGD with decoupled-from-nothing classic L2 weight decay.

    velocity <- momentum * velocity + grad + weight_decay * param
    param    <- param - lr * velocity
    """

    def __init__(self, params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        if lr < 0.0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        if weight_decay < 0.0:
            raise ValueError(f"weight decay must be non-negative, got {weight_decay}")
        self.params = _check_params(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self.steps = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= self.lr * v
        self.steps += 1

    def state_blocks(self, prefix: str) -> dict[str, np.ndarray]:
        blocks = {f"{prefix}.v{i}": v for i, v in enumerate(self.velocity)}
        blocks[f"{prefix}.steps"] = np.array([self.steps], dtype=np.int64)
        return blocks

    def load_state_blocks(self, prefix: str, blocks: dict[str, np.ndarray]) -> None:
        for i, v in enumerate(self.velocity):
            src = blocks[f"{prefix}.v{i}"]
            if src.shape != v.shape:
                raise ValueError(
                    f"optimizer state shape mismatch at {prefix}.v{i}: "
                    f"{src.shape} vs {v.shape}"
                )
            v[...] = src
        self.steps = int(blocks[f"{prefix}.steps"][0])


class Adam:
    """Adam with bias correction (the standard update, no weight decay)."""

    def __init__(self, params, lr: float, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        if lr < 0.0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        b1, b2 = float(betas[0]), float(betas[1])
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        if eps <= 0.0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.params = _check_params(params)
        self.lr = float(lr)
        self.betas = (b1, b2)
        self.eps = float(eps)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.steps = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self) -> None:
        self.steps += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.steps
        c2 = 1.0 - b2 ** self.steps
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_blocks(self, prefix: str) -> dict[str, np.ndarray]:
        blocks: dict[str, np.ndarray] = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            blocks[f"{prefix}.m{i}"] = m
            blocks[f"{prefix}.v{i}"] = v
        blocks[f"{prefix}.steps"] = np.array([self.steps], dtype=np.int64)
        return blocks

    def load_state_blocks(self, prefix: str, blocks: dict[str, np.ndarray]) -> None:
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            sm, sv = blocks[f"{prefix}.m{i}"], blocks[f"{prefix}.v{i}"]
            if sm.shape != m.shape or sv.shape != v.shape:
                raise ValueError(f"optimizer state shape mismatch at {prefix} index {i}")
            m[...] = sm
            v[...] = sv
        self.steps = int(blocks[f"{prefix}.steps"][0])
