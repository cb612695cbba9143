"""Amplitude adapters: learnable refurbishing of a frozen network's spectra.

Each adapter owns a bottleneck conv pipeline (conv C -> C/4, BN, relu,
conv C/4 -> C, BN) plus a two-logit mixing head.  For a feature map f it
produces

    f_ad    = bn2(conv2(relu(bn1(conv1(f)))))          adapted feature
    a,  p   = decouple(dft2(f))                        original spectrum
    a_ad    = amplitude(dft2(f_ad))                    adapted amplitudes
    lam     = softmax(mix_logits / t)[0]               learned mixing weight
    a_ref   = lam * a_ad + (1 - lam) * a               refurbished amplitudes
    f_ift   = idft2(couple(a_ref, p))                  back to feature space

The phase p is never altered; only amplitudes are mixed.  With lam -> 0
the adapter disappears and f_ift -> f exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral
from . import tensor as T
from .networks import ToyNet
from .nn import BatchNorm2d, Conv1x1
from .tensor import Tensor

__all__ = ["Adapter", "AdapterOutput", "AdaptedTeacher", "attach_adapters", "refurbish"]

PIN_LOGITS = (-10.0, 10.0)


def refurbish(amp: Tensor, amp_ad: Tensor, lam: Tensor) -> Tensor:
    """Convex mix of original and adapted amplitudes: lam*a_ad + (1-lam)*a."""
    if amp.data.shape != amp_ad.data.shape:
        raise ValueError(
            f"amplitude stacks must match: {amp.data.shape} vs {amp_ad.data.shape}"
        )
    return lam * amp_ad + (1.0 - lam) * amp


@dataclass
class AdapterOutput:
    f_ift: Tensor   # refurbished feature map, same shape as the input
    phase: Tensor   # original phase stack (untouched by the adapter)
    amp_ref: Tensor  # refurbished amplitude stack
    lam: Tensor     # scalar mixing weight actually used


class Adapter:
    """Bottleneck conv pipeline plus mixing head for one feature stack."""

    def __init__(self, channels: int, rng: np.random.Generator,
                 bottleneck_ratio: int = 4, mix_temperature: float = 1.0,
                 pin_lambda: bool = False):
        if channels < 1:
            raise ValueError(f"channels must be positive, got {channels}")
        if bottleneck_ratio < 1:
            raise ValueError(f"bottleneck ratio must be >= 1, got {bottleneck_ratio}")
        if mix_temperature <= 0.0:
            raise ValueError(f"mixing temperature must be positive, got {mix_temperature}")
        hidden = max(1, channels // bottleneck_ratio)
        self.channels = int(channels)
        self.hidden = hidden
        self.mix_temperature = float(mix_temperature)
        self.pinned = bool(pin_lambda)
        self.conv1 = Conv1x1(channels, hidden, rng)
        self.bn1 = BatchNorm2d(hidden)
        self.conv2 = Conv1x1(hidden, channels, rng)
        self.bn2 = BatchNorm2d(channels)
        init = PIN_LOGITS if pin_lambda else (-2.0, 2.0)
        self.mix_logits = Tensor(np.array(init), requires_grad=not pin_lambda)

    def mixing_weight(self) -> Tensor:
        """Scalar lam = softmax(mix_logits / t)[0]."""
        return T.softmax_t(self.mix_logits, self.mix_temperature)[0]

    def adapt(self, f: Tensor, training: bool) -> Tensor:
        """The conv pipeline alone (feature in, adapted feature out)."""
        t = T.relu(self.bn1(self.conv1(f), training))
        return self.bn2(self.conv2(t), training)

    def forward(self, f: Tensor, training: bool) -> AdapterOutput:
        if f.data.ndim != 4:
            raise ValueError(f"adapter expects [B, C, H, W], got shape {f.data.shape}")
        if f.data.shape[1] != self.channels:
            raise ValueError(
                f"adapter built for {self.channels} channels, input has {f.data.shape[1]}"
            )
        amp, ph = spectral.decouple_featuremap(f)
        f_ad = self.adapt(f, training)
        re_ad, im_ad = spectral.dft2(f_ad)
        amp_ad = spectral.amplitude(re_ad, im_ad)
        lam = self.mixing_weight()
        amp_ref = refurbish(amp, amp_ad, lam)
        re, im = spectral.couple(amp_ref, ph)
        f_ift = spectral.idft2(re, im)
        return AdapterOutput(f_ift=f_ift, phase=ph, amp_ref=amp_ref, lam=lam)

    def named_params(self, prefix: str):
        out = []
        out += self.conv1.named_params(f"{prefix}.conv1")
        out += self.bn1.named_params(f"{prefix}.bn1")
        out += self.conv2.named_params(f"{prefix}.conv2")
        out += self.bn2.named_params(f"{prefix}.bn2")
        out.append((f"{prefix}.mix_logits", self.mix_logits))
        return out

    def named_buffers(self, prefix: str):
        return (self.bn1.named_buffers(f"{prefix}.bn1")
                + self.bn2.named_buffers(f"{prefix}.bn2"))


@dataclass
class TeacherOutput:
    logits: Tensor
    phases: list[Tensor]     # per-block phase stacks, pre-pool sizes
    f_ifts: list[Tensor]     # per-block refurbished features
    lams: list[Tensor]       # per-adapter mixing weights (empty when adapter-free)


class AdaptedTeacher:
    """A frozen classifier with an adapter spliced in after every block body.

    The wrapped network's parameters are frozen at attach time and its
    batch-norm layers always run in eval mode here, so the backbone's
    behavior is pinned to its pretrained state.  Only the adapters learn.

    ``adapter_free=True`` skips the adapters entirely: features pass
    through untouched and the phase stacks come straight from the frozen
    features (used by ablations; combined with ``freeze=False`` the
    backbone itself becomes learnable).
    """

    def __init__(self, net: ToyNet, rng: np.random.Generator,
                 mix_temperature: float = 1.0, pin_lambda: bool = False,
                 adapter_free: bool = False, freeze: bool = True):
        self.net = net
        self.frozen = bool(freeze)
        self.adapter_free = bool(adapter_free)
        if freeze:
            net.set_requires_grad(False)
        self.adapters: list[Adapter] = []
        if not adapter_free:
            for c in net.spec.block_channels:
                self.adapters.append(Adapter(c, rng, mix_temperature=mix_temperature,
                                             pin_lambda=pin_lambda))

    def forward(self, x: Tensor, training: bool) -> TeacherOutput:
        """Run backbone + adapters; ``training`` drives the adapter BNs only,
        unless the backbone was left unfrozen (then its BNs follow too)."""
        backbone_training = training and not self.frozen
        h = x
        phases: list[Tensor] = []
        f_ifts: list[Tensor] = []
        lams: list[Tensor] = []
        for i, block in enumerate(self.net.blocks):
            f = block.body(h, backbone_training)
            if self.adapter_free:
                _, ph = spectral.decouple_featuremap(f)
                phases.append(ph)
                f_ifts.append(f)
                h = block.pool(f)
            else:
                out = self.adapters[i].forward(f, training)
                phases.append(out.phase)
                f_ifts.append(out.f_ift)
                lams.append(out.lam)
                h = block.pool(out.f_ift)
        logits = self.net.head_logits(h)
        return TeacherOutput(logits=logits, phases=phases, f_ifts=f_ifts, lams=lams)

    def adapter_named_params(self, prefix: str = "adapter"):
        out = []
        for i, ad in enumerate(self.adapters, start=1):
            out += ad.named_params(f"{prefix}{i}")
        return out

    def adapter_named_buffers(self, prefix: str = "adapter"):
        out = []
        for i, ad in enumerate(self.adapters, start=1):
            out += ad.named_buffers(f"{prefix}{i}")
        return out

    def adapter_params(self) -> list[Tensor]:
        return [p for _, p in self.adapter_named_params() if p.requires_grad]


def attach_adapters(net: ToyNet, rng: np.random.Generator,
                    mix_temperature: float = 1.0,
                    pin_lambda: bool = False) -> AdaptedTeacher:
    """Freeze a pretrained network and splice adapters after each block body.

    After this call every backbone parameter has ``requires_grad=False``;
    gradients of any loss with respect to them are identically zero.
    """
    return AdaptedTeacher(net, rng, mix_temperature=mix_temperature,
                          pin_lambda=pin_lambda)
