"""Central-difference verification of every backward rule.

Each registered check builds a randomized small instance of one operation
(or one composite chain), reduces its output to a scalar through a fixed
random weighting, runs the recorded backward, and compares against
two-sided finite differences on every input entry.  The reported number
per operation is the worst relative error

    max |analytic - numeric| / max(|analytic|_inf, |numeric|_inf, 1)

across all inputs and cases.  Inputs are sampled away from the genuine
kinks (relu at 0, magnitude at the origin) so the comparison probes the
derivative, not the subgradient convention.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import fusion
from . import losses
from . import spectral
from . import tensor as T
from .adapter import Adapter, refurbish
from .tensor import Tensor

__all__ = ["OpReport", "run_gradcheck", "check_op", "registered_ops", "DEFAULT_TOL"]

DEFAULT_TOL = 1e-4
_EPS = 1e-6


@dataclass
class OpReport:
    name: str
    cases: int
    worst: float
    ok: bool


def _away_from_zero(x: np.ndarray, margin: float = 0.2) -> np.ndarray:
    """Push entries out of (-margin, margin) so eps probes cannot cross 0."""
    return np.where(np.abs(x) < margin, np.sign(x + (x == 0)) * margin + x, x)


def _case_worst(params: list[Tensor], loss_fn) -> float:
    """Worst relative error between recorded and numeric gradients."""
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    worst = 0.0
    for p, an in zip(params, analytic):
        p.grad = None
        flat = p.data.reshape(-1)
        num = np.empty(flat.shape)
        with T.no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + _EPS
                hi = float(loss_fn().data)
                flat[i] = orig - _EPS
                lo = float(loss_fn().data)
                flat[i] = orig
                num[i] = (hi - lo) / (2.0 * _EPS)
        num = num.reshape(p.data.shape)
        scale = max(float(np.abs(an).max(initial=0.0)),
                    float(np.abs(num).max(initial=0.0)), 1.0)
        worst = max(worst, float(np.abs(an - num).max(initial=0.0)) / scale)
    return worst


def _t(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _weights(rng: np.random.Generator, like: Tensor) -> Tensor:
    return Tensor(rng.normal(size=like.data.shape))


def _projected(rng, out: Tensor) -> Tensor:
    """Scalarize through a fixed random weighting (probes the full Jacobian)."""
    return (out * _weights(rng, out)).sum()


# ---- one builder per operation ----
# Each returns (params, loss_fn); loss_fn re-runs the op on the params'
# current data, so the checker can nudge entries in place.


def _b_add(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [a, b], lambda: ((a + b) * Tensor(w)).sum()


def _b_sub(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4)   # broadcast on purpose
    w = rng.normal(size=(3, 4))
    return [a, b], lambda: ((a - b) * Tensor(w)).sum()


def _b_mul(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 3)
    w = rng.normal(size=(2, 3))
    return [a, b], lambda: ((a * b) * Tensor(w)).sum()


def _b_div(rng):
    a = _t(rng, 2, 3)
    b = Tensor(_away_from_zero(rng.normal(size=(2, 3))), requires_grad=True)
    w = rng.normal(size=(2, 3))
    return [a, b], lambda: ((a / b) * Tensor(w)).sum()


def _b_neg(rng):
    a = _t(rng, 5)
    w = rng.normal(size=5)
    return [a], lambda: ((-a) * Tensor(w)).sum()


def _b_pow(rng):
    a = Tensor(rng.uniform(0.5, 2.0, size=(3, 3)), requires_grad=True)
    w = rng.normal(size=(3, 3))
    return [a], lambda: ((a ** 1.7) * Tensor(w)).sum()


def _b_exp(rng):
    a = _t(rng, 3, 3)
    w = rng.normal(size=(3, 3))
    return [a], lambda: (T.exp(a) * Tensor(w)).sum()


def _b_log(rng):
    a = Tensor(rng.uniform(0.5, 3.0, size=(3, 3)), requires_grad=True)
    w = rng.normal(size=(3, 3))
    return [a], lambda: (T.log(a) * Tensor(w)).sum()


def _b_sqrt(rng):
    a = Tensor(rng.uniform(0.5, 3.0, size=(3, 3)), requires_grad=True)
    w = rng.normal(size=(3, 3))
    return [a], lambda: (T.sqrt(a) * Tensor(w)).sum()


def _b_sin(rng):
    a = _t(rng, 4)
    w = rng.normal(size=4)
    return [a], lambda: (T.sin(a) * Tensor(w)).sum()


def _b_cos(rng):
    a = _t(rng, 4)
    w = rng.normal(size=4)
    return [a], lambda: (T.cos(a) * Tensor(w)).sum()


def _b_relu(rng):
    a = Tensor(_away_from_zero(rng.normal(size=(3, 4))), requires_grad=True)
    w = rng.normal(size=(3, 4))
    return [a], lambda: (T.relu(a) * Tensor(w)).sum()


def _b_sigmoid(rng):
    a = _t(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [a], lambda: (T.sigmoid(a) * Tensor(w)).sum()


def _b_reshape(rng):
    a = _t(rng, 2, 6)
    w = rng.normal(size=(3, 4))
    return [a], lambda: (a.reshape(3, 4) * Tensor(w)).sum()


def _b_transpose(rng):
    a = _t(rng, 2, 3, 4)
    w = rng.normal(size=(4, 2, 3))
    return [a], lambda: (a.transpose((2, 0, 1)) * Tensor(w)).sum()


def _b_getitem(rng):
    a = _t(rng, 5, 3)
    idx = np.array([0, 2, 2, 4])   # repeated row on purpose
    w = rng.normal(size=(4, 3))
    return [a], lambda: (a[idx] * Tensor(w)).sum()


def _b_concat(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 2)
    w = rng.normal(size=(2, 5))
    return [a, b], lambda: (T.concat([a, b], axis=1) * Tensor(w)).sum()


def _b_sum(rng):
    a = _t(rng, 2, 3, 4)
    w = rng.normal(size=(2, 4))
    return [a], lambda: (a.sum(axis=1) * Tensor(w)).sum()


def _b_mean(rng):
    a = _t(rng, 2, 3, 4)
    w = rng.normal(size=(3,))
    return [a], lambda: (a.mean(axis=(0, 2)) * Tensor(w)).sum()


def _b_matmul(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4, 2)
    w = rng.normal(size=(3, 2))
    return [a, b], lambda: (T.matmul(a, b) * Tensor(w)).sum()


def _b_pick(rng):
    a = _t(rng, 4, 5)
    labels = rng.integers(0, 5, size=4)
    w = rng.normal(size=4)
    return [a], lambda: (T.pick(a, labels) * Tensor(w)).sum()


def _b_conv1x1(rng):
    x, w = _t(rng, 2, 3, 4, 4), _t(rng, 5, 3)
    pw = rng.normal(size=(2, 5, 4, 4))
    return [x, w], lambda: (T.conv1x1(x, w) * Tensor(pw)).sum()


def _b_avg_pool(rng):
    x = _t(rng, 2, 3, 4, 6)
    w = rng.normal(size=(2, 3, 2, 3))
    return [x], lambda: (T.avg_pool_to(x, (2, 3)) * Tensor(w)).sum()


def _b_fully_connected(rng):
    x, w, b = _t(rng, 3, 4), _t(rng, 2, 4), _t(rng, 2)
    pw = rng.normal(size=(3, 2))
    return [x, w, b], lambda: (T.fully_connected(x, w, b) * Tensor(pw)).sum()


def _b_bn_train(rng):
    x, g, b = _t(rng, 4, 3, 2, 2), _t(rng, 3), _t(rng, 3)
    pw = rng.normal(size=(4, 3, 2, 2))
    return [x, g, b], lambda: (
        T.batch_norm_train(x, g, b, 1e-5)[0] * Tensor(pw)).sum()


def _b_bn_eval(rng):
    x, g, b = _t(rng, 4, 3, 2, 2), _t(rng, 3), _t(rng, 3)
    rm = rng.normal(size=3)
    rv = rng.uniform(0.5, 2.0, size=3)
    pw = rng.normal(size=(4, 3, 2, 2))
    return [x, g, b], lambda: (
        T.batch_norm_eval(x, g, b, rm, rv, 1e-5) * Tensor(pw)).sum()


def _b_softmax(rng):
    a = _t(rng, 3, 5)
    w = rng.normal(size=(3, 5))
    return [a], lambda: (T.softmax_t(a, 2.5) * Tensor(w)).sum()


def _b_log_softmax(rng):
    a = _t(rng, 3, 5)
    w = rng.normal(size=(3, 5))
    return [a], lambda: (T.log_softmax(a, 2.5) * Tensor(w)).sum()


# ---- spectral ops ----


def _spectrum_pair(rng, *shape) -> tuple[Tensor, Tensor]:
    """re/im inputs bounded away from the zero-magnitude kink."""
    re = rng.normal(size=shape)
    im = rng.normal(size=shape)
    r = np.hypot(re, im)
    lift = np.where(r < 0.3, (0.3 - r) + 0.3, 0.0)
    re = re + lift * np.sign(re + (re == 0))
    return Tensor(re, requires_grad=True), Tensor(im, requires_grad=True)


def _b_dft2(rng):
    f = _t(rng, 2, 4, 4)
    wr = rng.normal(size=(2, 4, 4))
    wi = rng.normal(size=(2, 4, 4))

    def loss():
        re, im = spectral.dft2(f)
        return (re * Tensor(wr)).sum() + (im * Tensor(wi)).sum()

    return [f], loss


def _b_dft2_single(rng):
    # only one output consumed; the pair's combined backward must cope
    f = _t(rng, 2, 4, 4)
    wi = rng.normal(size=(2, 4, 4))

    def loss():
        _, im = spectral.dft2(f)
        return (im * Tensor(wi)).sum()

    return [f], loss


def _b_idft2(rng):
    re, im = _t(rng, 2, 4, 4), _t(rng, 2, 4, 4)
    w = rng.normal(size=(2, 4, 4))
    # independent re/im probes break conjugate symmetry; skip that check
    return [re, im], lambda: (
        spectral.idft2(re, im, imag_tol=None) * Tensor(w)).sum()


def _b_amplitude(rng):
    re, im = _spectrum_pair(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [re, im], lambda: (spectral.amplitude(re, im) * Tensor(w)).sum()


def _b_phase(rng):
    re, im = _spectrum_pair(rng, 3, 4)
    w = rng.normal(size=(3, 4))
    return [re, im], lambda: (spectral.phase(re, im) * Tensor(w)).sum()


def _b_decouple(rng):
    re, im = _spectrum_pair(rng, 3, 4)
    wa = rng.normal(size=(3, 4))
    wp = rng.normal(size=(3, 4))

    def loss():
        a, p = spectral.decouple(re, im)
        return (a * Tensor(wa)).sum() + (p * Tensor(wp)).sum()

    return [re, im], loss


def _b_couple(rng):
    a = Tensor(rng.uniform(0.3, 2.0, size=(3, 4)), requires_grad=True)
    p = Tensor(rng.uniform(-2.5, 2.5, size=(3, 4)), requires_grad=True)
    wr = rng.normal(size=(3, 4))
    wi = rng.normal(size=(3, 4))

    def loss():
        re, im = spectral.couple(a, p)
        return (re * Tensor(wr)).sum() + (im * Tensor(wi)).sum()

    return [a, p], loss


def _b_refurbish(rng):
    a = Tensor(rng.uniform(0.1, 2.0, size=(2, 3)), requires_grad=True)
    a_ad = Tensor(rng.uniform(0.1, 2.0, size=(2, 3)), requires_grad=True)
    lam = Tensor(rng.uniform(0.1, 0.9), requires_grad=True)
    w = rng.normal(size=(2, 3))
    return [a, a_ad, lam], lambda: (refurbish(a, a_ad, lam) * Tensor(w)).sum()


# ---- fusion ops ----


def _b_fuse(rng):
    p1, p2 = _t(rng, 2, 2, 4, 4), _t(rng, 2, 3, 2, 2)
    w = rng.normal(size=(2, 5, 2, 2))
    return [p1, p2], lambda: (fusion.fuse([p1, p2]) * Tensor(w)).sum()


def _b_squeeze(rng):
    x = _t(rng, 2, 3, 4, 4)
    w = rng.normal(size=(2, 3))
    return [x], lambda: (fusion.squeeze(x) * Tensor(w)).sum()


def _b_attention(rng):
    params = fusion.ActivationParams(6, rng)
    z = _t(rng, 2, 6)
    w = rng.normal(size=(2, 6))
    return [z] + params.params(), lambda: (
        fusion.attention(z, params) * Tensor(w)).sum()


def _b_activate(rng):
    x = _t(rng, 2, 3, 2, 2)
    s = Tensor(rng.uniform(0.1, 0.9, size=(2, 3)), requires_grad=True)
    w = rng.normal(size=(2, 3, 2, 2))
    return [x, s], lambda: (fusion.activate(x, s) * Tensor(w)).sum()


def _b_align_spatial(rng):
    a, b = _t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 2, 2)
    w = rng.normal(size=(2, 3, 2, 2))

    def loss():
        a2, b2 = fusion.align_spatial(a, b)
        return (a2 * Tensor(w)).sum() + (b2 * Tensor(w)).sum()

    return [a, b], loss


def _b_map_features(rng):
    params = fusion.FeatureMapParams(4, 6, rng)
    x = _t(rng, 2, 4, 2, 2)
    w = rng.normal(size=(2, 6, 2, 2))
    return [x] + params.params(), lambda: (
        fusion.map_features(x, params) * Tensor(w)).sum()


# ---- losses ----


def _b_ce(rng):
    logits = _t(rng, 4, 5)
    labels = rng.integers(0, 5, size=4)
    return [logits], lambda: losses.ce_loss(logits, labels)


def _b_kt_forward(rng):
    tgt = Tensor(rng.normal(size=(4, 5)))
    live = _t(rng, 4, 5)
    return [live], lambda: losses.kt_loss(tgt, live, tau=4.0, direction="forward")


def _b_kt_reverse(rng):
    tgt = Tensor(rng.normal(size=(4, 5)))
    live = _t(rng, 4, 5)
    return [live], lambda: losses.kt_loss(tgt, live, tau=4.0, direction="reverse")


def _b_dikt(rng):
    s = _t(rng, 2, 3, 2, 2)
    t_const = Tensor(rng.normal(size=(2, 3, 2, 2)))
    return [s], lambda: losses.dikt_loss(s, t_const)


# ---- composite chains ----


def _b_chain_adapter(rng):
    """Feature in, refurbished feature out, through the whole adapter."""
    ad = Adapter(4, rng)
    f = _t(rng, 2, 4, 4, 4)
    w = rng.normal(size=(2, 4, 4, 4))
    params = [f] + [p for _, p in ad.named_params("ad")]

    def loss():
        out = ad.forward(f, training=True)
        return (out.f_ift * Tensor(w)).sum()

    return params, loss


def _b_chain_fusion(rng):
    """Fused phases -> squeeze -> gates -> both stacks activated -> mse."""
    act = fusion.ActivationParams(5, rng)
    p1, p2 = _t(rng, 2, 2, 4, 4), _t(rng, 2, 3, 2, 2)
    s1 = _t(rng, 2, 5, 2, 2)

    def loss():
        fused = fusion.fuse([p1, p2])
        gates = fusion.attention(fusion.squeeze(fused), act)
        act_t = fusion.activate(fused, gates)
        act_s = fusion.activate(s1, gates)
        d = act_s - act_t
        return (d * d).mean()

    return [p1, p2, s1] + act.params(), loss


def _b_chain_teacher_total(rng):
    t_logits = _t(rng, 4, 5)
    s_logits = _t(rng, 4, 5)
    labels = rng.integers(0, 5, size=4)

    def loss():
        total, _ = losses.teacher_total(t_logits, s_logits, labels,
                                        beta=0.7, tau=4.0)
        return total

    return [t_logits], loss


def _b_chain_student_total(rng):
    s_logits = _t(rng, 4, 5)
    t_logits = Tensor(rng.normal(size=(4, 5)))
    act_s = _t(rng, 2, 3, 2, 2)
    act_t = Tensor(rng.normal(size=(2, 3, 2, 2)))
    labels = rng.integers(0, 5, size=4)

    def loss():
        dikt = losses.dikt_loss(act_s, act_t)
        total, _ = losses.student_total(s_logits, t_logits, labels, dikt,
                                        beta=0.7, gamma=1.3, tau=4.0)
        return total

    return [s_logits, act_s], loss


_REGISTRY = {
    "add": _b_add,
    "sub": _b_sub,
    "mul": _b_mul,
    "div": _b_div,
    "neg": _b_neg,
    "pow": _b_pow,
    "exp": _b_exp,
    "log": _b_log,
    "sqrt": _b_sqrt,
    "sin": _b_sin,
    "cos": _b_cos,
    "relu": _b_relu,
    "sigmoid": _b_sigmoid,
    "reshape": _b_reshape,
    "transpose": _b_transpose,
    "getitem": _b_getitem,
    "concat": _b_concat,
    "sum": _b_sum,
    "mean": _b_mean,
    "matmul": _b_matmul,
    "pick": _b_pick,
    "conv1x1": _b_conv1x1,
    "avg_pool": _b_avg_pool,
    "fully_connected": _b_fully_connected,
    "batch_norm_train": _b_bn_train,
    "batch_norm_eval": _b_bn_eval,
    "softmax": _b_softmax,
    "log_softmax": _b_log_softmax,
    "dft2": _b_dft2,
    "dft2_single_output": _b_dft2_single,
    "idft2": _b_idft2,
    "amplitude": _b_amplitude,
    "phase": _b_phase,
    "decouple": _b_decouple,
    "couple": _b_couple,
    "refurbish": _b_refurbish,
    "fuse": _b_fuse,
    "squeeze": _b_squeeze,
    "attention": _b_attention,
    "activate": _b_activate,
    "align_spatial": _b_align_spatial,
    "map_features": _b_map_features,
    "ce_loss": _b_ce,
    "kt_loss_forward": _b_kt_forward,
    "kt_loss_reverse": _b_kt_reverse,
    "dikt_loss": _b_dikt,
    "chain-adapter": _b_chain_adapter,
    "chain-fusion-activation": _b_chain_fusion,
    "chain-teacher-total": _b_chain_teacher_total,
    "chain-student-total": _b_chain_student_total,
}


def registered_ops() -> list[str]:
    return list(_REGISTRY)


def check_op(name: str, cases: int, seed: int, tol: float = DEFAULT_TOL) -> OpReport:
    """Run one operation's randomized checks; worst error over all cases."""
    if name not in _REGISTRY:
        raise ValueError(f"unknown gradcheck op '{name}'; see registered_ops()")
    if cases < 0:
        raise ValueError(f"cases must be non-negative, got {cases}")
    build = _REGISTRY[name]
    name_key = zlib.crc32(name.encode("utf-8"))
    worst = 0.0
    for k in range(cases):
        rng = np.random.default_rng(np.random.SeedSequence((seed, name_key, k)))
        params, loss_fn = build(rng)
        worst = max(worst, _case_worst(params, loss_fn))
    return OpReport(name=name, cases=cases, worst=worst, ok=worst < tol)


def run_gradcheck(names: list[str] | None = None, cases: int = 50, seed: int = 0,
                  tol: float = DEFAULT_TOL) -> list[OpReport]:
    """Check every registered op (or the named subset); one report each."""
    if names is None:
        names = registered_ops()
    return [check_op(n, cases, seed, tol) for n in names]
