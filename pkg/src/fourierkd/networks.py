"""Small channel-mixing classifier networks used as teacher and student.

A network is a chain of residual blocks.  Each block runs a pointwise
two-conv body at the incoming spatial size, adds a skip (identity when
the channel count is unchanged, zero-padded otherwise), applies relu, and
then halves the spatial size with 2x2 average pooling.  The classifier
head global-pools the last block's output and applies one affine layer.

The pre-pool body outputs are the feature maps everything downstream
(spectral decoupling, adapters, distillation) operates on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, Conv1x1, Linear
from .tensor import Tensor

__all__ = ["NetworkSpec", "Block", "ToyNet", "build_block", "count_params"]


@dataclass(frozen=True)
class NetworkSpec:
    """Shape description of a ToyNet."""

    block_channels: tuple[int, ...] = (8, 16, 32, 64)
    in_channels: int = 3
    input_hw: tuple[int, int] = (32, 32)
    n_classes: int = 7

    def __post_init__(self):
        if len(self.block_channels) < 1:
            raise ValueError("need at least one block")
        if any(c < 1 for c in self.block_channels):
            raise ValueError(f"block channels must be positive, got {self.block_channels}")
        if self.in_channels < 1 or self.n_classes < 2:
            raise ValueError(
                f"bad channel/class counts: in={self.in_channels}, classes={self.n_classes}"
            )
        H, W = self.input_hw
        d = 2 ** len(self.block_channels)
        if H % d != 0 or W % d != 0:
            raise ValueError(
                f"input size {self.input_hw} not divisible by 2^{len(self.block_channels)} "
                f"(one halving per block)"
            )

    @property
    def feature_hw(self) -> tuple[tuple[int, int], ...]:
        """Pre-pool spatial size of each block's body output."""
        H, W = self.input_hw
        sizes = []
        for i in range(len(self.block_channels)):
            sizes.append((H >> i, W >> i))
        return tuple(sizes)


class Block:
    """Residual pointwise block: conv-bn-relu-conv-bn + skip, then relu."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        if out_channels < in_channels:
            raise ValueError(
                f"block cannot shrink channels ({in_channels} -> {out_channels}); "
                f"the zero-padded skip only grows them"
            )
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.conv1 = Conv1x1(in_channels, out_channels, rng)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv1x1(out_channels, out_channels, rng)
        self.bn2 = BatchNorm2d(out_channels)

    def body(self, x: Tensor, training: bool) -> Tensor:
        t = T.relu(self.bn1(self.conv1(x), training))
        t = self.bn2(self.conv2(t), training)
        if self.out_channels == self.in_channels:
            s = x
        else:
            b, _, h, w = x.data.shape
            pad = Tensor(np.zeros((b, self.out_channels - self.in_channels, h, w)))
            s = T.concat([x, pad], axis=1)
        return T.relu(t + s)

    def pool(self, x: Tensor) -> Tensor:
        h, w = x.data.shape[-2], x.data.shape[-1]
        return T.avg_pool_to(x, (h // 2, w // 2))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.pool(self.body(x, training))

    def named_params(self, prefix: str):
        out = []
        out += self.conv1.named_params(f"{prefix}.conv1")
        out += self.bn1.named_params(f"{prefix}.bn1")
        out += self.conv2.named_params(f"{prefix}.conv2")
        out += self.bn2.named_params(f"{prefix}.bn2")
        return out

    def named_buffers(self, prefix: str):
        return (self.bn1.named_buffers(f"{prefix}.bn1")
                + self.bn2.named_buffers(f"{prefix}.bn2"))


def build_block(in_channels: int, out_channels: int, rng: np.random.Generator) -> Block:
    return Block(in_channels, out_channels, rng)


class ToyNet:
    """Residual pointwise classifier; see module docstring for the layout."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        self.spec = spec
        self.blocks: list[Block] = []
        c_in = spec.in_channels
        for c_out in spec.block_channels:
            self.blocks.append(build_block(c_in, c_out, rng))
            c_in = c_out
        self.head = Linear(spec.block_channels[-1], spec.n_classes, rng)

    def forward(self, x: Tensor, training: bool,
                want_features: bool = False):
        """Run the network; optionally also return pre-pool block features."""
        if x.data.ndim != 4:
            raise ValueError(f"expected input [B, C, H, W], got shape {x.data.shape}")
        if x.data.shape[1] != self.spec.in_channels:
            raise ValueError(
                f"expected {self.spec.in_channels} input channels, got {x.data.shape[1]}"
            )
        if tuple(x.data.shape[2:]) != tuple(self.spec.input_hw):
            raise ValueError(
                f"expected input spatial size {self.spec.input_hw}, got {tuple(x.data.shape[2:])}"
            )
        h = x
        features = []
        for block in self.blocks:
            f = block.body(h, training)
            features.append(f)
            h = block.pool(f)
        logits = self.head_logits(h)
        if want_features:
            return logits, features
        return logits

    def head_logits(self, pooled: Tensor) -> Tensor:
        """Classifier head on the final pooled feature map."""
        z = T.avg_pool_to(pooled, (1, 1))
        z = T.reshape(z, (z.data.shape[0], z.data.shape[1]))
        return self.head(z)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return self.forward(x, training)

    def named_params(self, prefix: str = ""):
        dot = f"{prefix}." if prefix else ""
        out = []
        for i, b in enumerate(self.blocks, start=1):
            out += b.named_params(f"{dot}block{i}")
        out += self.head.named_params(f"{dot}head")
        return out

    def named_buffers(self, prefix: str = ""):
        dot = f"{prefix}." if prefix else ""
        out = []
        for i, b in enumerate(self.blocks, start=1):
            out += b.named_buffers(f"{dot}block{i}")
        return out

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params():
            p.requires_grad = bool(flag)

    def bn_layers(self) -> list[BatchNorm2d]:
        out = []
        for b in self.blocks:
            out += [b.bn1, b.bn2]
        return out


def count_params(named_params) -> int:
    """Total element count over a named-parameter list."""
    return int(sum(p.data.size for _, p in named_params))
