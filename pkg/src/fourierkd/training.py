"""Training loops: plain classification, and alternating two-phase transfer.

The transfer loop interleaves two updates per batch:

- adapter phase: backward ce(teacher) + beta*kt(student -> teacher), then
  one Adam step over the adapter pipeline plus the gate producer.
- student phase: backward ce(student) + beta*kt(teacher -> student)
  + gamma*dikt(gated phase stacks), then one SGD step over the student
  plus the channel mapping.

Each parameter belongs to exactly one optimizer.  The gate producer's
parameters sit in the Adam group but only the student-phase dikt loss
touches them, so their gradients accumulate across the phase boundary:
the student phase deposits them, the next adapter phase consumes them.
Gradients are therefore zeroed per phase, only for the parameters that
were just stepped.

The teacher's backbone is frozen (eval-mode batch norms, no gradients);
only adapters, gates, student, and mapping ever move.  Ablation variants
reshape exactly one thing each, so differences are attributable.
"""

from __future__ import annotations

import json
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import fusion, spectral
from . import tensor as T
from .adapter import AdaptedTeacher
from .container import read_container, sha256_bytes, write_container
from .data import SyntheticDataset
from .fusion import FeatureMapParams, make_weighting
from .losses import KL_DIRECTIONS, LossBreakdown, dikt_loss, student_total, teacher_total
from .networks import NetworkSpec, ToyNet
from .optim import SGD, Adam
from .tensor import Tensor

__all__ = [
    "TrainingConfig",
    "decay_epochs",
    "lr_multiplier",
    "evaluate",
    "pretrain_classifier",
    "run_distillation",
    "DistillResult",
    "MetricsLog",
    "normalized_log_digest",
    "save_checkpoint",
    "load_checkpoint",
    "ABLATION_VARIANTS",
    "variant_config",
    "run_ablation",
    "run_sweep",
]

_SEED_ROLES = ("teacher_init", "student_init", "adapter_init",
               "weighting_init", "mapping_init", "batch_order")


def _role_rngs(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(len(_SEED_ROLES))
    return {role: np.random.default_rng(seq)
            for role, seq in zip(_SEED_ROLES, children)}


@dataclass(frozen=True)
class TrainingConfig:
    """Everything a run needs; validation happens at construction."""

    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    beta: float = 1.0
    gamma: float = 0.1
    tau: float = 4.0
    student_lr: float = 0.05
    adapter_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_factor: float = 10.0
    lr_decay_epochs: tuple[int, ...] | None = None
    kl_direction: str = "forward"
    weighting: str = "fusion-activation"
    mix_temperature: float = 1.0
    pin_lambda: bool = False
    refresh_teacher_forward: bool = True
    use_ce_T: bool = True
    use_kt_T: bool = True
    use_kt_S: bool = True
    use_dikt_S: bool = True
    fixed_teacher: bool = False
    learnable_teacher_full: bool = False
    teacher_channels: tuple[int, ...] = (8, 16, 32, 64)
    student_channels: tuple[int, ...] = (4, 8, 16, 32)
    n_classes: int = 7
    input_hw: tuple[int, int] = (32, 32)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch size must be >= 2 (batch norm), got {self.batch_size}")
        for name in ("beta", "gamma", "student_lr", "adapter_lr", "weight_decay"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.tau <= 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.lr_decay_factor <= 0.0:
            raise ValueError(f"decay factor must be positive, got {self.lr_decay_factor}")
        if self.kl_direction not in KL_DIRECTIONS:
            raise ValueError(
                f"kl_direction must be one of {KL_DIRECTIONS}, got '{self.kl_direction}'"
            )
        if self.weighting not in fusion.WEIGHTING_KINDS:
            raise ValueError(
                f"weighting must be one of {fusion.WEIGHTING_KINDS}, got '{self.weighting}'"
            )
        if self.mix_temperature <= 0.0:
            raise ValueError(f"mix temperature must be positive, got {self.mix_temperature}")
        if self.fixed_teacher and self.learnable_teacher_full:
            raise ValueError("fixed_teacher and learnable_teacher_full are exclusive")
        if self.lr_decay_epochs is not None:
            ds = tuple(self.lr_decay_epochs)
            if any(not 1 <= d <= self.epochs for d in ds) or list(ds) != sorted(set(ds)):
                raise ValueError(
                    f"decay epochs must be strictly increasing within [1, {self.epochs}], "
                    f"got {ds}"
                )

    def teacher_spec(self) -> NetworkSpec:
        return NetworkSpec(block_channels=tuple(self.teacher_channels),
                           input_hw=tuple(self.input_hw), n_classes=self.n_classes)

    def student_spec(self) -> NetworkSpec:
        return NetworkSpec(block_channels=tuple(self.student_channels),
                           input_hw=tuple(self.input_hw), n_classes=self.n_classes)

    def canonical(self) -> str:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return json.dumps(d, sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "TrainingConfig":
        d = dict(d)
        for k in ("lr_decay_epochs", "teacher_channels", "student_channels", "input_hw"):
            if k in d and d[k] is not None:
                d[k] = tuple(d[k])
        return TrainingConfig(**d)


def decay_epochs(epochs: int) -> tuple[int, int, int]:
    """Schedule boundaries: floor of 1/3, 7/12, and 5/6 of the budget."""
    return (int(epochs * 1 // 3), int(epochs * 7 // 12), int(epochs * 5 // 6))


def lr_multiplier(config: TrainingConfig, epoch: int) -> float:
    """1/factor for every boundary at or before this (0-indexed) epoch."""
    bounds = config.lr_decay_epochs if config.lr_decay_epochs is not None \
        else decay_epochs(config.epochs)
    k = sum(1 for b in bounds if epoch >= b)
    return float(config.lr_decay_factor ** -k)


def evaluate(forward_fn, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 128) -> float:
    """Accuracy under argmax with lowest-index tie-breaking."""
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"{images.shape[0]} images vs {labels.shape[0]} labels"
        )
    if images.shape[0] == 0:
        raise ValueError("cannot evaluate an empty split")
    hits = 0
    with T.no_grad():
        for i in range(0, images.shape[0], batch_size):
            xb = Tensor(images[i:i + batch_size])
            logits = forward_fn(xb)
            hits += int(np.sum(np.argmax(logits.data, axis=1) == labels[i:i + batch_size]))
    return hits / images.shape[0]


# ---- metrics logging ----


class MetricsLog:
    """Line-per-epoch key=value log.  Wall-clock seconds is always the
    last field so determinism comparisons can strip it."""

    HEADER = "# fourierkd-metrics v1"

    def __init__(self, path):
        self.path = path
        with open(path, "w") as fh:
            fh.write(self.HEADER + "\n")

    @staticmethod
    def format_record(record: "OrderedDict[str, object]") -> str:
        parts = []
        for k, v in record.items():
            if isinstance(v, float):
                parts.append(f"{k}={v:.8g}")
            else:
                parts.append(f"{k}={v}")
        return " ".join(parts)

    def append(self, record: "OrderedDict[str, object]") -> None:
        if list(record.keys())[-1] != "seconds":
            raise ValueError("metrics records must end with the seconds field")
        with open(self.path, "a") as fh:
            fh.write(self.format_record(record) + "\n")


def normalized_log_digest(path) -> str:
    """Digest of a metrics log with the trailing seconds field removed."""
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            head, sep, tail = line.rpartition(" seconds=")
            out.append(head if sep else line)
    return sha256_bytes("\n".join(out).encode("utf-8"))


# ---- plain classification (teacher pretraining, baseline student) ----


def _iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        idx = order[i:i + batch_size]
        if idx.shape[0] >= 2:     # batch norm needs at least two rows
            yield idx


def _abort_if_nonfinite(value: float, what: str, epoch: int, rerun) -> None:
    if np.isfinite(value):
        return
    T.set_debug_checks(True)
    try:
        rerun()
    except FloatingPointError as err:
        raise RuntimeError(
            f"training aborted at epoch {epoch}: {what} is non-finite ({err})"
        ) from err
    finally:
        T.set_debug_checks(False)
    raise RuntimeError(
        f"training aborted at epoch {epoch}: {what} is non-finite "
        f"(forward re-run stayed finite; loss arithmetic overflowed)"
    )


def pretrain_classifier(net: ToyNet, ds: SyntheticDataset, config: TrainingConfig,
                        log_path=None) -> list[OrderedDict]:
    """Cross-entropy training of one network on a dataset's train split.

    Uses the same optimizer family and schedule as the transfer loop's
    student side.  The network is trained in place; per-epoch records are
    returned (and appended to ``log_path`` when given).
    """
    rngs = _role_rngs(config.seed)
    batch_rng = rngs["batch_order"]
    images, labels = ds.split("train")
    test_x, test_y = ds.split("test")
    opt = SGD(net.params(), lr=config.student_lr, momentum=config.momentum,
              weight_decay=config.weight_decay)
    log = MetricsLog(log_path) if log_path is not None else None
    history: list[OrderedDict] = []
    step = 0
    t0 = time.time()
    for epoch in range(config.epochs):
        opt.lr = config.student_lr * lr_multiplier(config, epoch)
        ce_sum, nb = 0.0, 0
        for idx in _iter_batches(images.shape[0], config.batch_size, batch_rng):
            xb, yb = Tensor(images[idx]), labels[idx]
            logits = net.forward(xb, training=True)
            total, bd = student_total(logits, logits, yb, None, 0.0, 0.0, config.tau,
                                      use_kt=False, use_dikt=False)
            _abort_if_nonfinite(bd.total, "classifier loss", epoch,
                                lambda: net.forward(xb, training=True))
            opt.zero_grad()
            total.backward()
            opt.step()
            ce_sum += bd.ce
            nb += 1
            step += 1
        acc = evaluate(lambda xb: net.forward(xb, training=False), test_x, test_y)
        rec = OrderedDict(epoch=epoch + 1, step=step,
                          lr=float(opt.lr), ce=ce_sum / max(nb, 1),
                          acc=float(acc), seconds=time.time() - t0)
        history.append(rec)
        if log:
            log.append(rec)
    return history


# ---- the transfer loop ----


@dataclass
class _Bundle:
    """Everything the step function touches, wired once per run."""

    config: TrainingConfig
    adapted: AdaptedTeacher
    student: ToyNet
    weighting: object
    mapping: FeatureMapParams | None
    adam: Adam | None
    sgd: SGD


def _build_bundle(config: TrainingConfig, teacher: ToyNet) -> _Bundle:
    rngs = _role_rngs(config.seed)
    student = ToyNet(config.student_spec(), rngs["student_init"])
    adapter_free = config.fixed_teacher or config.learnable_teacher_full
    adapted = AdaptedTeacher(teacher, rngs["adapter_init"],
                             mix_temperature=config.mix_temperature,
                             pin_lambda=config.pin_lambda,
                             adapter_free=adapter_free,
                             freeze=not config.learnable_teacher_full)
    m_teacher = int(sum(config.teacher_channels))
    ranges = []
    lo = 0
    for c in config.teacher_channels:
        ranges.append((lo, lo + c))
        lo += c
    weighting = make_weighting(config.weighting, m_teacher, ranges, rngs["weighting_init"])
    m_student = int(sum(config.student_channels))
    mapping = None
    if m_student != m_teacher:
        mapping = FeatureMapParams(m_student, m_teacher, rngs["mapping_init"])
    adam_params = list(adapted.adapter_params()) + list(weighting.params())
    if config.learnable_teacher_full:
        adam_params += teacher.params()
    adam = Adam(adam_params, lr=config.adapter_lr) if adam_params else None
    sgd_params = student.params() + (mapping.params() if mapping else [])
    sgd = SGD(sgd_params, lr=config.student_lr, momentum=config.momentum,
              weight_decay=config.weight_decay)
    return _Bundle(config=config, adapted=adapted, student=student,
                   weighting=weighting, mapping=mapping, adam=adam, sgd=sgd)


def _student_phase_stacks(bundle: _Bundle, feats: list[Tensor]) -> Tensor:
    phases = []
    for f in feats:
        _, ph = spectral.decouple_featuremap(f)
        phases.append(ph)
    return fusion.fuse(phases)


def _distill_step(bundle: _Bundle, xb: Tensor, yb: np.ndarray, epoch: int
                  ) -> tuple[LossBreakdown, LossBreakdown]:
    cfg = bundle.config

    # joint forward: teacher with live adapters, student with live weights
    t_out = bundle.adapted.forward(xb, training=True)
    s_logits, s_feats = bundle.student.forward(xb, training=True, want_features=True)

    # adapter phase
    total_T, bd_T = teacher_total(t_out.logits, s_logits, yb, cfg.beta, cfg.tau,
                                  cfg.kl_direction, use_ce=cfg.use_ce_T,
                                  use_kt=cfg.use_kt_T)
    _abort_if_nonfinite(bd_T.total, "adapter-phase loss", epoch,
                        lambda: bundle.adapted.forward(xb, training=True))
    if bundle.adam is not None:
        total_T.backward()
        bundle.adam.step()
        bundle.adam.zero_grad()

    # the student phase distills from the teacher as it now stands
    if cfg.refresh_teacher_forward:
        total_T = t_out = None      # release the first graph before the refresh forward
        with T.no_grad():
            t_out2 = bundle.adapted.forward(xb, training=True)
        t_logits2 = t_out2.logits
        t_phases2 = t_out2.phases
    else:
        t_logits2 = t_out.logits.detach()
        t_phases2 = [p.detach() for p in t_out.phases]
        total_T = t_out = None

    dikt_term = None
    if cfg.use_dikt_S:
        fused_t = fusion.fuse(t_phases2)
        gates = bundle.weighting.compute(fused_t)
        act_t = fusion.activate(fused_t, gates)
        fused_s = _student_phase_stacks(bundle, s_feats)
        fused_s, act_t_ref = fusion.align_spatial(fused_s, act_t)
        if bundle.mapping is not None:
            fused_s = fusion.map_features(fused_s, bundle.mapping)
        act_s = fusion.activate(fused_s, gates)
        dikt_term = dikt_loss(act_s, act_t_ref)

    total_S, bd_S = student_total(s_logits, t_logits2, yb, dikt_term,
                                  cfg.beta, cfg.gamma, cfg.tau, cfg.kl_direction,
                                  use_kt=cfg.use_kt_S, use_dikt=cfg.use_dikt_S)
    _abort_if_nonfinite(bd_S.total, "student-phase loss", epoch,
                        lambda: bundle.student.forward(xb, training=True))
    total_S.backward()
    bundle.sgd.step()
    bundle.sgd.zero_grad()
    return bd_T, bd_S


@dataclass
class DistillResult:
    config: TrainingConfig
    history: list
    final_acc_student: float
    final_acc_teacher: float
    metrics_path: str | None
    checkpoint_paths: list
    bundle: object


def run_distillation(config: TrainingConfig, teacher: ToyNet,
                     target: SyntheticDataset, out_dir=None) -> DistillResult:
    """The full alternating loop on the target domain's train split."""
    import os

    bundle = _build_bundle(config, teacher)
    rngs = _role_rngs(config.seed)
    batch_rng = rngs["batch_order"]
    images, labels = target.split("train")
    test_x, test_y = target.split("test")

    log = None
    metrics_path = None
    ckpt_paths: list[str] = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.log")
        log = MetricsLog(metrics_path)

    bounds = config.lr_decay_epochs if config.lr_decay_epochs is not None \
        else decay_epochs(config.epochs)
    history = []
    step = 0
    t0 = time.time()
    for epoch in range(config.epochs):
        bundle.sgd.lr = config.student_lr * lr_multiplier(config, epoch)
        sums = np.zeros(7)
        nb = 0
        for idx in _iter_batches(images.shape[0], config.batch_size, batch_rng):
            xb, yb = Tensor(images[idx]), labels[idx]
            bd_T, bd_S = _distill_step(bundle, xb, yb, epoch)
            sums += (bd_T.ce, bd_T.kt, bd_T.total,
                     bd_S.ce, bd_S.kt, bd_S.dikt, bd_S.total)
            nb += 1
            step += 1
        means = sums / max(nb, 1)
        acc_s = evaluate(lambda xb: bundle.student.forward(xb, training=False),
                         test_x, test_y)
        acc_t = evaluate(lambda xb: bundle.adapted.forward(xb, training=False).logits,
                         test_x, test_y)
        rec = OrderedDict(epoch=epoch + 1, step=step, lr=float(bundle.sgd.lr),
                          t_ce=means[0], t_kt=means[1], t_total=means[2],
                          s_ce=means[3], s_kt=means[4], s_dikt=means[5],
                          s_total=means[6], acc_teacher=float(acc_t),
                          acc_student=float(acc_s))
        for i, ad in enumerate(bundle.adapted.adapters, start=1):
            rec[f"lam{i}"] = float(ad.mixing_weight().item())
        rec["seconds"] = time.time() - t0
        history.append(rec)
        if log:
            log.append(rec)
        if out_dir is not None and (epoch + 1 in bounds or epoch + 1 == config.epochs):
            path = os.path.join(out_dir, f"ckpt-epoch{epoch + 1:03d}.fkd")
            save_checkpoint(path, config, bundle, epoch + 1)
            ckpt_paths.append(path)
    if history:
        acc_s = history[-1]["acc_student"]
        acc_t = history[-1]["acc_teacher"]
    else:  # zero-epoch run: report the untrained bundle as it stands
        acc_s = evaluate(lambda xb: bundle.student.forward(xb, training=False),
                         test_x, test_y)
        acc_t = evaluate(lambda xb: bundle.adapted.forward(xb, training=False).logits,
                         test_x, test_y)
    return DistillResult(config=config, history=history,
                         final_acc_student=float(acc_s),
                         final_acc_teacher=float(acc_t),
                         metrics_path=metrics_path, checkpoint_paths=ckpt_paths,
                         bundle=bundle)


# ---- checkpointing ----


def _bundle_blocks(bundle: _Bundle, epoch: int) -> "OrderedDict[str, np.ndarray]":
    blocks: OrderedDict[str, np.ndarray] = OrderedDict()

    def put_params(pairs):
        for name, p in pairs:
            blocks[name] = p.data

    def put_buffers(pairs):
        for name, arr in pairs:
            blocks[name] = arr

    put_params(bundle.adapted.net.named_params("teacher"))
    put_buffers(bundle.adapted.net.named_buffers("teacher"))
    put_params(bundle.adapted.adapter_named_params())
    put_buffers(bundle.adapted.adapter_named_buffers())
    put_params(bundle.weighting.named_params())
    put_params(bundle.student.named_params("student"))
    put_buffers(bundle.student.named_buffers("student"))
    if bundle.mapping is not None:
        put_params(bundle.mapping.named_params())
    if bundle.adam is not None:
        blocks.update(bundle.adam.state_blocks("opt.adam"))
    blocks.update(bundle.sgd.state_blocks("opt.sgd"))
    blocks["meta.epoch"] = np.array([epoch], dtype=np.int64)
    blocks["meta.seed"] = np.array([bundle.config.seed], dtype=np.int64)
    blocks["meta.config_json"] = np.frombuffer(
        bundle.config.canonical().encode("utf-8"), dtype=np.uint8).copy()
    return blocks


def save_checkpoint(path, config: TrainingConfig, bundle: _Bundle, epoch: int) -> None:
    write_container(path, _bundle_blocks(bundle, epoch),
                    sha256_bytes(config.canonical().encode("utf-8")))


def load_checkpoint(path) -> tuple[TrainingConfig, _Bundle, int]:
    """Rebuild a bundle from a checkpoint; shapes come from the stored config."""
    blocks, digest = read_container(path)
    if "meta.config_json" not in blocks:
        raise ValueError("checkpoint is missing its config snapshot")
    config = TrainingConfig.from_dict(
        json.loads(bytes(blocks["meta.config_json"]).decode("utf-8")))
    if sha256_bytes(config.canonical().encode("utf-8")) != digest:
        raise ValueError("checkpoint config digest does not match its config snapshot")
    teacher = ToyNet(config.teacher_spec(), np.random.default_rng(0))
    bundle = _build_bundle(config, teacher)
    expected = _bundle_blocks(bundle, 0)
    for name in expected:
        if name.startswith("meta.") or name.startswith("opt."):
            continue
        if name not in blocks:
            raise ValueError(f"checkpoint is missing block '{name}'")
    # parameters and buffers
    for name, p in (bundle.adapted.net.named_params("teacher")
                    + bundle.adapted.adapter_named_params()
                    + bundle.weighting.named_params()
                    + bundle.student.named_params("student")
                    + (bundle.mapping.named_params() if bundle.mapping else [])):
        if blocks[name].shape != p.data.shape:
            raise ValueError(
                f"checkpoint block '{name}' has shape {blocks[name].shape}, "
                f"expected {p.data.shape}"
            )
        p.data[...] = blocks[name]
    for name, arr in (bundle.adapted.net.named_buffers("teacher")
                      + bundle.adapted.adapter_named_buffers()
                      + bundle.student.named_buffers("student")):
        arr[...] = blocks[name]
    if bundle.adam is not None:
        bundle.adam.load_state_blocks("opt.adam", blocks)
    bundle.sgd.load_state_blocks("opt.sgd", blocks)
    epoch = int(blocks["meta.epoch"][0])
    return config, bundle, epoch


def save_network(path, net: ToyNet, label: str = "teacher") -> None:
    """Standalone network checkpoint (used for the pretrained teacher)."""
    blocks: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, p in net.named_params(label):
        blocks[name] = p.data
    for name, arr in net.named_buffers(label):
        blocks[name] = arr
    meta = json.dumps({
        "label": label,
        "block_channels": list(net.spec.block_channels),
        "in_channels": net.spec.in_channels,
        "input_hw": list(net.spec.input_hw),
        "n_classes": net.spec.n_classes,
    }, sort_keys=True)
    blocks["meta.network_json"] = np.frombuffer(meta.encode("utf-8"), dtype=np.uint8).copy()
    write_container(path, blocks, sha256_bytes(meta.encode("utf-8")))


def load_network(path) -> ToyNet:
    blocks, _ = read_container(path)
    if "meta.network_json" not in blocks:
        raise ValueError("network checkpoint is missing its shape snapshot")
    meta = json.loads(bytes(blocks["meta.network_json"]).decode("utf-8"))
    spec = NetworkSpec(block_channels=tuple(meta["block_channels"]),
                       in_channels=int(meta["in_channels"]),
                       input_hw=tuple(meta["input_hw"]),
                       n_classes=int(meta["n_classes"]))
    net = ToyNet(spec, np.random.default_rng(0))
    label = meta["label"]
    for name, p in net.named_params(label):
        if name not in blocks:
            raise ValueError(f"network checkpoint is missing block '{name}'")
        if blocks[name].shape != p.data.shape:
            raise ValueError(
                f"network block '{name}' has shape {blocks[name].shape}, "
                f"expected {p.data.shape}"
            )
        p.data[...] = blocks[name]
    for name, arr in net.named_buffers(label):
        arr[...] = blocks[name]
    return net


# ---- ablations and sweeps ----

ABLATION_VARIANTS = (
    "full_4ds",
    "plain",
    "no_kt_S",
    "no_dikt_S",
    "no_both",
    "no_ce_T",
    "no_kt_T",
    "fixed_teacher",
    "learnable_teacher_full",
    "weighting:none",
    "weighting:block",
    "weighting:channel",
    "weighting:block+channel",
)


def variant_config(base: TrainingConfig, variant: str) -> TrainingConfig:
    """Derive the config for a named ablation from a base config."""
    if variant == "full_4ds":
        return base
    if variant == "no_kt_S":
        return replace(base, use_kt_S=False)
    if variant == "no_dikt_S":
        return replace(base, use_dikt_S=False)
    if variant in ("no_both", "plain"):
        return replace(base, use_kt_S=False, use_dikt_S=False)
    if variant == "no_ce_T":
        return replace(base, use_ce_T=False)
    if variant == "no_kt_T":
        return replace(base, use_kt_T=False)
    if variant == "fixed_teacher":
        return replace(base, fixed_teacher=True)
    if variant == "learnable_teacher_full":
        return replace(base, learnable_teacher_full=True)
    if variant.startswith("weighting:"):
        kind = variant.split(":", 1)[1]
        if kind not in fusion.WEIGHTING_KINDS:
            raise ValueError(f"unknown weighting variant '{variant}'")
        return replace(base, weighting=kind)
    raise ValueError(f"unknown ablation variant '{variant}'; "
                     f"known: {', '.join(ABLATION_VARIANTS)}")


def _plain_student_run(config: TrainingConfig, target: SyntheticDataset,
                       out_dir=None) -> DistillResult:
    """The no-teacher baseline: the same student trained with plain
    cross-entropy, identical init and batch order."""
    import os
    rngs = _role_rngs(config.seed)
    student = ToyNet(config.student_spec(), rngs["student_init"])
    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "metrics.log")
    cfg = replace(config, use_kt_S=False, use_dikt_S=False)
    history = pretrain_classifier(student, target, cfg, log_path=log_path)
    test_x, test_y = target.split("test")
    acc = evaluate(lambda xb: student.forward(xb, training=False), test_x, test_y)
    return DistillResult(config=cfg, history=history, final_acc_student=float(acc),
                         final_acc_teacher=float("nan"), metrics_path=log_path,
                         checkpoint_paths=[], bundle=student)


def run_ablation(variants, base: TrainingConfig, teacher: ToyNet,
                 target: SyntheticDataset, out_root=None) -> "OrderedDict[str, DistillResult]":
    import os
    results: OrderedDict[str, DistillResult] = OrderedDict()
    for variant in variants:
        cfg = variant_config(base, variant)
        out_dir = None
        if out_root is not None:
            out_dir = os.path.join(out_root, variant.replace(":", "_"))
        if variant == "plain":
            results[variant] = _plain_student_run(cfg, target, out_dir)
        else:
            results[variant] = run_distillation(cfg, teacher, target, out_dir)
    return results


def run_sweep(param: str, values, base: TrainingConfig, teacher: ToyNet,
              target: SyntheticDataset, out_root=None) -> "OrderedDict[float, DistillResult]":
    import os
    if param not in ("beta", "gamma"):
        raise ValueError(f"sweep parameter must be 'beta' or 'gamma', got '{param}'")
    results: OrderedDict[float, DistillResult] = OrderedDict()
    for v in values:
        v = float(v)
        cfg = replace(base, **{param: v})
        out_dir = None
        if out_root is not None:
            out_dir = os.path.join(out_root, f"{param}-{v:g}")
        results[v] = run_distillation(cfg, teacher, target, out_dir)
    return results
