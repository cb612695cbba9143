"""Fusing phase stacks across depths and gating them with learned attention.

The per-block phase stacks live at different spatial sizes.  ``fuse``
average-pools every stack down to the deepest one's size and concatenates
along channels, giving one [M, h, w] stack (M = sum of block channels).
``squeeze`` collapses it to a per-channel vector, ``attention`` turns that
vector into per-channel gates in (0, 1) through a bottleneck MLP, and
``activate`` applies the gates.

``map_features`` projects a student stack onto the teacher's channel
count with a relu bottleneck so the two can be compared elementwise.
The alternative weighting schemes (static per-block / per-channel gates)
produce S the same shape as the attention MLP does, so training code can
swap them freely.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "fuse",
    "channel_ranges",
    "squeeze",
    "ActivationParams",
    "attention",
    "activate",
    "FeatureMapParams",
    "map_features",
    "align_spatial",
    "make_weighting",
    "WEIGHTING_KINDS",
]


def _stack_dims(x: Tensor, op: str) -> tuple[int, int, int]:
    if x.data.ndim not in (3, 4):
        raise ValueError(f"{op} expects [C, H, W] or [B, C, H, W], got {x.data.shape}")
    c_axis = x.data.ndim - 3
    return x.data.shape[c_axis], x.data.shape[-2], x.data.shape[-1]


def fuse(phases: list[Tensor]) -> Tensor:
    """Pool every stack to the last (deepest) stack's spatial size and concat."""
    if not phases:
        raise ValueError("fuse needs at least one phase stack")
    ndims = {p.data.ndim for p in phases}
    if len(ndims) != 1:
        raise ValueError(f"phase stacks disagree on rank: {sorted(ndims)}")
    _, ht, wt = _stack_dims(phases[-1], "fuse")
    pooled = []
    for p in phases:
        _, h, w = _stack_dims(p, "fuse")
        if h % ht != 0 or w % wt != 0:
            raise ValueError(
                f"stack size {(h, w)} does not pool evenly to the deepest size {(ht, wt)}"
            )
        pooled.append(p if (h, w) == (ht, wt) else T.avg_pool_to(p, (ht, wt)))
    axis = pooled[0].data.ndim - 3
    return T.concat(pooled, axis=axis)


def channel_ranges(phases: list[Tensor]) -> list[tuple[int, int]]:
    """Half-open channel ranges each input stack occupies after fusion."""
    ranges = []
    lo = 0
    for p in phases:
        c, _, _ = _stack_dims(p, "channel_ranges")
        ranges.append((lo, lo + c))
        lo += c
    return ranges


def squeeze(fused: Tensor) -> Tensor:
    """Spatial mean: [.., M, h, w] -> [.., M]."""
    _stack_dims(fused, "squeeze")
    return fused.mean(axis=(-2, -1))


class ActivationParams:
    """Bias-free bottleneck MLP that produces per-channel gates."""

    def __init__(self, m: int, rng: np.random.Generator, ratio: int = 4):
        if m < 1:
            raise ValueError(f"channel count must be positive, got {m}")
        if ratio < 1:
            raise ValueError(f"bottleneck ratio must be >= 1, got {ratio}")
        hidden = max(1, m // ratio)
        self.m = int(m)
        self.hidden = hidden
        self.w1 = Tensor(rng.normal(0.0, np.sqrt(2.0 / m), size=(hidden, m)),
                         requires_grad=True)
        self.w2 = Tensor(rng.normal(0.0, np.sqrt(2.0 / hidden), size=(m, hidden)),
                         requires_grad=True)

    def named_params(self, prefix: str = "activation"):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.w2", self.w2)]

    def params(self) -> list[Tensor]:
        return [self.w1, self.w2]


def attention(z: Tensor, params: ActivationParams) -> Tensor:
    """Gates S = sigmoid(w2 @ relu(w1 @ z)), elementwise in (0, 1)."""
    if z.data.shape[-1] != params.m:
        raise ValueError(
            f"attention built for {params.m} channels, squeeze vector has {z.data.shape[-1]}"
        )
    h = T.relu(T.fully_connected(z, params.w1))
    return T.sigmoid(T.fully_connected(h, params.w2))


def activate(stack: Tensor, s: Tensor) -> Tensor:
    """Scale each channel of a stack by its gate."""
    c, _, _ = _stack_dims(stack, "activate")
    if s.data.shape[-1] != c:
        raise ValueError(
            f"gate vector has {s.data.shape[-1]} entries for a {c}-channel stack"
        )
    if s.data.ndim == 1:
        gates = T.reshape(s, (c, 1, 1))
    elif s.data.ndim == 2:
        if stack.data.ndim != 4 or s.data.shape[0] != stack.data.shape[0]:
            raise ValueError(
                f"batched gates {s.data.shape} do not match stack {stack.data.shape}"
            )
        gates = T.reshape(s, (s.data.shape[0], c, 1, 1))
    else:
        raise ValueError(f"gates must be rank 1 or 2, got {s.data.shape}")
    return stack * gates


def align_spatial(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Pool whichever stack is spatially larger down to the other's size."""
    _, ha, wa = _stack_dims(a, "align_spatial")
    _, hb, wb = _stack_dims(b, "align_spatial")
    if (ha, wa) == (hb, wb):
        return a, b
    if ha >= hb and wa >= wb:
        return T.avg_pool_to(a, (hb, wb)), b
    if hb >= ha and wb >= wa:
        return a, T.avg_pool_to(b, (ha, wa))
    raise ValueError(f"stack sizes {(ha, wa)} and {(hb, wb)} are not nested")


class FeatureMapParams:
    """Bottleneck channel projection from a student stack to teacher width."""

    def __init__(self, m_student: int, m_teacher: int, rng: np.random.Generator,
                 ratio: int = 4):
        if m_student < 1 or m_teacher < 1:
            raise ValueError(
                f"channel counts must be positive, got {m_student} -> {m_teacher}"
            )
        hidden = max(1, m_student // ratio)
        self.m_student = int(m_student)
        self.m_teacher = int(m_teacher)
        self.hidden = hidden
        self.w1 = Tensor(rng.normal(0.0, np.sqrt(2.0 / m_student), size=(hidden, m_student)),
                         requires_grad=True)
        self.w2 = Tensor(rng.normal(0.0, np.sqrt(2.0 / hidden), size=(m_teacher, hidden)),
                         requires_grad=True)

    def named_params(self, prefix: str = "mapping"):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.w2", self.w2)]

    def params(self) -> list[Tensor]:
        return [self.w1, self.w2]


def map_features(stack: Tensor, params: FeatureMapParams) -> Tensor:
    """Project channels: relu(w2 * relu(w1 * x)) at every spatial site."""
    c, _, _ = _stack_dims(stack, "map_features")
    if c != params.m_student:
        raise ValueError(
            f"mapping built for {params.m_student} input channels, stack has {c}"
        )
    h = T.relu(T.conv1x1(stack, params.w1))
    return T.relu(T.conv1x1(h, params.w2))


# ---- interchangeable producers of the gate vector S ----

WEIGHTING_KINDS = ("fusion-activation", "none", "block", "channel", "block+channel")


class FusionActivationWeighting:
    """Input-conditioned gates from the squeeze + attention MLP (the default).

    The squeeze input is detached: the gates carry gradient only into the
    MLP weights, never back into whatever produced the fused stack.
    """

    kind = "fusion-activation"

    def __init__(self, m: int, ranges, rng: np.random.Generator):
        self.activation = ActivationParams(m, rng)

    def compute(self, fused: Tensor) -> Tensor:
        return attention(squeeze(fused.detach()), self.activation)

    def named_params(self, prefix: str = "weighting"):
        return self.activation.named_params(prefix)

    def params(self) -> list[Tensor]:
        return self.activation.params()


class NoWeighting:
    """S identically one; fusion passes through ungated."""

    kind = "none"

    def __init__(self, m: int, ranges, rng: np.random.Generator):
        self.m = int(m)

    def compute(self, fused: Tensor) -> Tensor:
        return Tensor(np.ones(self.m))

    def named_params(self, prefix: str = "weighting"):
        return []

    def params(self) -> list[Tensor]:
        return []


class BlockWeighting:
    """One learned gate per block, broadcast over that block's channels."""

    kind = "block"

    def __init__(self, m: int, ranges, rng: np.random.Generator):
        self.ranges = [(int(lo), int(hi)) for lo, hi in ranges]
        if not self.ranges or self.ranges[-1][1] != m:
            raise ValueError(f"channel ranges {ranges} do not tile {m} channels")
        self.logits = Tensor(np.zeros(len(self.ranges)), requires_grad=True)
        # index of the owning block for each fused channel
        idx = np.empty(m, dtype=np.intp)
        for i, (lo, hi) in enumerate(self.ranges):
            idx[lo:hi] = i
        self._index = idx

    def compute(self, fused: Tensor) -> Tensor:
        return T.sigmoid(self.logits)[self._index]

    def named_params(self, prefix: str = "weighting"):
        return [(f"{prefix}.block_logits", self.logits)]

    def params(self) -> list[Tensor]:
        return [self.logits]


class ChannelWeighting:
    """One learned gate per fused channel."""

    kind = "channel"

    def __init__(self, m: int, ranges, rng: np.random.Generator):
        self.logits = Tensor(np.zeros(m), requires_grad=True)

    def compute(self, fused: Tensor) -> Tensor:
        return T.sigmoid(self.logits)

    def named_params(self, prefix: str = "weighting"):
        return [(f"{prefix}.channel_logits", self.logits)]

    def params(self) -> list[Tensor]:
        return [self.logits]


class BlockChannelWeighting:
    """Product of the block-level and channel-level gates."""

    kind = "block+channel"

    def __init__(self, m: int, ranges, rng: np.random.Generator):
        self.block = BlockWeighting(m, ranges, rng)
        self.channel = ChannelWeighting(m, ranges, rng)

    def compute(self, fused: Tensor) -> Tensor:
        return self.block.compute(fused) * self.channel.compute(fused)

    def named_params(self, prefix: str = "weighting"):
        return (self.block.named_params(prefix) + self.channel.named_params(prefix))

    def params(self) -> list[Tensor]:
        return self.block.params() + self.channel.params()


def make_weighting(kind: str, m: int, ranges, rng: np.random.Generator):
    table = {
        "fusion-activation": FusionActivationWeighting,
        "none": NoWeighting,
        "block": BlockWeighting,
        "channel": ChannelWeighting,
        "block+channel": BlockChannelWeighting,
    }
    if kind not in table:
        raise ValueError(f"unknown weighting '{kind}', expected one of {WEIGHTING_KINDS}")
    return table[kind](m, ranges, rng)
