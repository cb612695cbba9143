"""Stateful layers built on the autodiff primitives.

Layers hold their parameters as Tensors and expose ``named_params`` /
``named_buffers`` for optimizer grouping and checkpointing.  There is no
module registry; networks list their layers explicitly.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = ["Conv1x1", "BatchNorm2d", "Linear"]


class Conv1x1:
    """Pointwise channel-mixing convolution, no bias."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        if in_channels < 1 or out_channels < 1:
            raise ValueError(
                f"conv channels must be positive, got {in_channels} -> {out_channels}"
            )
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        std = np.sqrt(2.0 / in_channels)
        self.w = Tensor(rng.normal(0.0, std, size=(out_channels, in_channels)),
                        requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1x1(x, self.w)

    def named_params(self, prefix: str):
        return [(f"{prefix}.w", self.w)]

    def named_buffers(self, prefix: str):
        return []


class BatchNorm2d:
    """Per-channel batch normalization over [B, C, H, W].

    Training mode normalizes with the biased batch variance and updates the
    running estimates (unbiased variance) with momentum 0.1.  Eval mode
    normalizes with the stored running estimates; that path stays
    differentiable with respect to the input and the affine parameters, so
    gradients can flow through frozen, eval-mode layers.
    """

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        if num_features < 1:
            raise ValueError(f"num_features must be positive, got {num_features}")
        self.num_features = int(num_features)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = Tensor(np.ones(num_features), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.data.ndim != 4:
            raise ValueError(f"batch norm expects [B, C, H, W], got shape {x.data.shape}")
        if x.data.shape[1] != self.num_features:
            raise ValueError(
                f"batch norm built for {self.num_features} channels, input has {x.data.shape[1]}"
            )
        if training:
            B, _, H, W = x.data.shape
            n = B * H * W
            if B < 2:
                raise ValueError(f"training-mode batch norm needs batch size >= 2, got {B}")
            out, mu, var = T.batch_norm_train(x, self.gamma, self.beta, self.eps)
            # running stats track the unbiased variance
            self.running_mean += self.momentum * (mu - self.running_mean)
            self.running_var += self.momentum * (var * (n / (n - 1.0)) - self.running_var)
            return out
        return T.batch_norm_eval(x, self.gamma, self.beta,
                                 self.running_mean, self.running_var, self.eps)

    def named_params(self, prefix: str):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def named_buffers(self, prefix: str):
        return [(f"{prefix}.running_mean", self.running_mean),
                (f"{prefix}.running_var", self.running_var)]

    def load_buffers(self, prefix: str, blocks: dict[str, np.ndarray]) -> None:
        self.running_mean[...] = blocks[f"{prefix}.running_mean"]
        self.running_var[...] = blocks[f"{prefix}.running_var"]


class Linear:
    """Affine layer on the last axis, with bias."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        if in_features < 1 or out_features < 1:
            raise ValueError(
                f"linear sizes must be positive, got {in_features} -> {out_features}"
            )
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        bound = 1.0 / np.sqrt(in_features)
        self.w = Tensor(rng.uniform(-bound, bound, size=(out_features, in_features)),
                        requires_grad=True)
        self.b = Tensor(rng.uniform(-bound, bound, size=out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.fully_connected(x, self.w, self.b)

    def named_params(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]

    def named_buffers(self, prefix: str):
        return []
