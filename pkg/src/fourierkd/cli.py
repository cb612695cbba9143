"""Command-line harness: data generation through ablation sweeps.

Subcommands: gen-data, pretrain, train, eval, gradcheck, ablate, sweep.

Configuration resolution, highest priority first: explicit flags, then
``--set key=value`` pairs, then a ``--config`` file, then built-in
defaults.  Config files are plain text, one ``key = value`` per line,
``#`` starts a comment; values are parsed as JSON when possible (so
``lr_decay_epochs = [4, 7, 10]`` works) and kept as strings otherwise.
Keys are the TrainingConfig field names.

Every command writes exactly one JSON manifest into its output directory
recording the resolved configuration, input digests, output digests, and
wall-clock bounds.  The default output root is ``$FOURIERKD_OUT`` or
``./runs``.  Exit codes: 0 success, 1 runtime or I/O failure, 2 argument
validation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .container import sha256_file
from .data import (DomainSpec, dataset_digest, generate_dataset, hard_domains,
                   load_dataset, reference_domains, save_dataset)
from .gradcheck import DEFAULT_TOL, registered_ops, run_gradcheck
from .networks import ToyNet
from .training import (ABLATION_VARIANTS, TrainingConfig, evaluate,
                       load_checkpoint, load_network, pretrain_classifier,
                       run_distillation, save_network, variant_config,
                       _plain_student_run, _role_rngs)

ENV_OUT = "FOURIERKD_OUT"
SWEEP_DEFAULT_VALUES = (0.001, 0.01, 0.1, 1.0, 10.0)

# flags promoted to first-class options; everything else goes via --set
_CONFIG_FLAGS = ("epochs", "batch_size", "seed", "beta", "gamma", "tau",
                 "student_lr", "adapter_lr", "weighting", "kl_direction")


def _out_root() -> str:
    return os.environ.get(ENV_OUT, "runs")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_file(path) -> dict:
    """key = value lines; # comments; JSON-parsed values."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(
                    f"{path}:{lineno}: expected 'key = value', got '{raw.strip()}'"
                )
            key, val = line.split("=", 1)
            out[key.strip()] = _parse_value(val.strip())
    return out


def _resolve_config(args) -> TrainingConfig:
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(parse_config_file(args.config))
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            raise ValueError(f"--set needs key=value, got '{pair}'")
        key, val = pair.split("=", 1)
        merged[key.strip()] = _parse_value(val.strip())
    for name in _CONFIG_FLAGS:
        val = getattr(args, name, None)
        if val is not None:
            merged[name] = val
    unknown = set(merged) - set(TrainingConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return TrainingConfig.from_dict(merged)


def _add_config_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field; repeatable")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--student-lr", dest="student_lr", type=float)
    p.add_argument("--adapter-lr", dest="adapter_lr", type=float)
    p.add_argument("--weighting")
    p.add_argument("--kl-direction", dest="kl_direction")


class _Manifest:
    """Collects one run's provenance and writes it on close."""

    def __init__(self, command: str, out_dir: str, config: TrainingConfig | None):
        self.record = OrderedDict(
            command=command,
            argv=sys.argv[1:],
            config=None if config is None else json.loads(config.canonical()),
            inputs=OrderedDict(),
            outputs=OrderedDict(),
            started=time.strftime("%Y-%m-%dT%H:%M:%S"),
            finished=None,
        )
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)

    def add_input(self, path) -> None:
        self.record["inputs"][str(path)] = sha256_file(path)

    def add_output(self, path) -> None:
        self.record["outputs"][str(path)] = sha256_file(path)

    def write(self) -> str:
        self.record["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        path = os.path.join(self.out_dir, "manifest.json")
        with open(path, "w") as fh:
            json.dump(self.record, fh, indent=2)
            fh.write("\n")
        return path


def _write_records(path, rows: list[OrderedDict]) -> None:
    """Line-delimited key=value records, the machine-readable table."""
    with open(path, "w") as fh:
        for row in rows:
            fh.write(" ".join(f"{k}={v}" for k, v in row.items()) + "\n")


def _print_table(headers: list[str], rows: list[list[str]]) -> None:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    print(line)
    print("  ".join("-" * w for w in widths))
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)))


def _load_domain_datasets(data_dir):
    src = load_dataset(os.path.join(data_dir, "source.fkd"))
    tgt = load_dataset(os.path.join(data_dir, "target.fkd"))
    return src, tgt


# ---- subcommands ----


def cmd_gen_data(args) -> int:
    if args.hard:
        source_spec, target_spec = hard_domains()
    else:
        source_spec, target_spec = reference_domains()
    out_dir = args.out or os.path.join(_out_root(), "gen-data")
    man = _Manifest("gen-data", out_dir, None)
    man.record["config"] = {
        "n_per_class": args.n_per_class,
        "seed": args.seed,
        "source": json.loads(source_spec.canonical()),
        "target": json.loads(target_spec.canonical()),
        "recipe_digest": dataset_digest(source_spec, target_spec,
                                        args.n_per_class, args.seed),
    }
    source, target = generate_dataset(args.n_per_class, source_spec,
                                      target_spec, args.seed)
    digest = man.record["config"]["recipe_digest"]
    for name, ds in (("source.fkd", source), ("target.fkd", target)):
        path = os.path.join(out_dir, name)
        save_dataset(ds, path, digest)
        man.add_output(path)
        print(f"{name}: {sha256_file(path)}")
    print(f"manifest: {man.write()}")
    return 0


def cmd_pretrain(args) -> int:
    config = _resolve_config(args)
    out_dir = args.out or os.path.join(_out_root(), "pretrain")
    man = _Manifest("pretrain", out_dir, config)
    source, target = _load_domain_datasets(args.data)
    man.add_input(os.path.join(args.data, "source.fkd"))
    man.add_input(os.path.join(args.data, "target.fkd"))
    teacher = ToyNet(config.teacher_spec(), _role_rngs(config.seed)["teacher_init"])
    metrics_path = os.path.join(out_dir, "metrics.log")
    os.makedirs(out_dir, exist_ok=True)
    pretrain_classifier(teacher, source, config, log_path=metrics_path)
    ckpt = os.path.join(out_dir, "teacher.fkd")
    save_network(ckpt, teacher, label="teacher")
    man.add_output(ckpt)
    man.add_output(metrics_path)
    src_x, src_y = source.split("test")
    tgt_x, tgt_y = target.split("test")
    acc_src = evaluate(lambda xb: teacher.forward(xb, training=False), src_x, src_y)
    acc_tgt = evaluate(lambda xb: teacher.forward(xb, training=False), tgt_x, tgt_y)
    print(f"teacher source-test accuracy: {acc_src:.4f}")
    print(f"teacher target-test accuracy: {acc_tgt:.4f}")
    print(f"checkpoint: {ckpt}")
    print(f"manifest: {man.write()}")
    return 0


def cmd_train(args) -> int:
    base = _resolve_config(args)
    config = variant_config(base, args.variant)
    out_dir = args.out or os.path.join(_out_root(), "train")
    man = _Manifest("train", out_dir, config)
    man.add_input(args.teacher)
    man.add_input(os.path.join(args.data, "target.fkd"))
    teacher = load_network(args.teacher)
    _, target = _load_domain_datasets(args.data)
    if args.variant == "plain":
        result = _plain_student_run(config, target, out_dir)
    else:
        result = run_distillation(config, teacher, target, out_dir)
    for path in result.checkpoint_paths:
        man.add_output(path)
    if result.metrics_path:
        man.add_output(result.metrics_path)
    print(f"student target-test accuracy: {result.final_acc_student:.4f}")
    if np.isfinite(result.final_acc_teacher):
        print(f"teacher target-test accuracy: {result.final_acc_teacher:.4f}")
    if args.with_baseline:
        baseline = _plain_student_run(base, target,
                                      os.path.join(out_dir, "baseline"))
        delta = 100.0 * (result.final_acc_student - baseline.final_acc_student)
        print(f"plain baseline accuracy: {baseline.final_acc_student:.4f} "
              f"(delta {delta:+.2f} points)")
    print(f"manifest: {man.write()}")
    return 0


def cmd_eval(args) -> int:
    out_dir = args.out or os.path.join(_out_root(), "eval")
    man = _Manifest("eval", out_dir, None)
    man.add_input(args.checkpoint)
    domain_file = os.path.join(args.data, f"{args.domain}.fkd")
    man.add_input(domain_file)
    ds = load_dataset(domain_file)
    x, y = ds.split(args.split)
    try:
        net = load_network(args.checkpoint)
        which = "network"
        forward = lambda xb: net.forward(xb, training=False)
    except ValueError:
        _, bundle, _ = load_checkpoint(args.checkpoint)
        if args.which == "teacher":
            which = "bundle teacher"
            forward = lambda xb: bundle.adapted.forward(xb, training=False).logits
        else:
            which = "bundle student"
            forward = lambda xb: bundle.student.forward(xb, training=False)
    acc = evaluate(forward, x, y)
    print(f"{acc:.4f}")
    rows = [OrderedDict(checkpoint=args.checkpoint, kind=which,
                        domain=args.domain, split=args.split,
                        accuracy=f"{acc:.4f}")]
    records = os.path.join(out_dir, "eval.records")
    _write_records(records, rows)
    man.add_output(records)
    man.write()
    return 0


def cmd_gradcheck(args) -> int:
    out_dir = args.out or os.path.join(_out_root(), "gradcheck")
    man = _Manifest("gradcheck", out_dir, None)
    man.record["config"] = {"seed": args.seed, "cases": args.cases, "tol": args.tol}
    names = args.ops.split(",") if args.ops else None
    if args.cases == 0:
        print("warning: --cases 0 checks nothing; vacuous pass")
    reports = run_gradcheck(names, cases=args.cases, seed=args.seed, tol=args.tol)
    rows = []
    for r in reports:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.name:26s} cases={r.cases:3d} worst={r.worst:.3e} {status}")
        rows.append(OrderedDict(op=r.name, cases=r.cases,
                                worst=f"{r.worst:.6e}", ok=r.ok))
    records = os.path.join(out_dir, "gradcheck.records")
    _write_records(records, rows)
    man.add_output(records)
    man.write()
    bad = [r.name for r in reports if not r.ok]
    if bad:
        print(f"FAILED: {', '.join(bad)}", file=sys.stderr)
        return 1
    print(f"all {len(reports)} checks passed (worst "
          f"{max((r.worst for r in reports), default=0.0):.3e})")
    return 0


def _run_one_variant(packed):
    """One ablation run in its own process; arguments must pickle."""
    variant, config_json, teacher_path, target_path, out_dir = packed
    config = variant_config(
        TrainingConfig.from_dict(json.loads(config_json)), variant)
    target = load_dataset(target_path)
    if variant == "plain":
        result = _plain_student_run(config, target, out_dir)
    else:
        teacher = load_network(teacher_path)
        result = run_distillation(config, teacher, target, out_dir)
    return variant, result.final_acc_student


def cmd_ablate(args) -> int:
    base = _resolve_config(args)
    if args.variants == "all":
        variants = list(ABLATION_VARIANTS)
    else:
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:        # validate every name before any run
        variant_config(base, v)
    out_dir = args.out or os.path.join(_out_root(), "ablate")
    man = _Manifest("ablate", out_dir, base)
    man.add_input(args.teacher)
    target_path = os.path.join(args.data, "target.fkd")
    man.add_input(target_path)
    jobs = [(v, base.canonical(), args.teacher, target_path,
             os.path.join(out_dir, v.replace(":", "_"))) for v in variants]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            accs = dict(pool.map(_run_one_variant, jobs))
    else:
        accs = dict(map(_run_one_variant, jobs))
    ref = accs.get("full_4ds")
    rows, table = [], []
    for v in variants:
        delta = "" if ref is None else f"{100.0 * (accs[v] - ref):+.2f}"
        rows.append(OrderedDict(variant=v, acc_student=f"{accs[v]:.4f}",
                                delta_points=delta or "n/a"))
        table.append([v, f"{accs[v]:.4f}", delta or "n/a"])
    _print_table(["variant", "acc", "delta vs full_4ds"], table)
    records = os.path.join(out_dir, "ablate.records")
    _write_records(records, rows)
    man.add_output(records)
    print(f"manifest: {man.write()}")
    return 0


def _run_one_value(packed):
    """One sweep run in its own process; arguments must pickle."""
    param, value, config_json, teacher_path, target_path, out_dir = packed
    from dataclasses import replace
    config = replace(TrainingConfig.from_dict(json.loads(config_json)),
                     **{param: value})
    teacher = load_network(teacher_path)
    target = load_dataset(target_path)
    result = run_distillation(config, teacher, target, out_dir)
    return value, result.final_acc_student


def cmd_sweep(args) -> int:
    base = _resolve_config(args)
    if args.values:
        values = sorted(float(v) for v in args.values.split(","))
    else:
        values = list(SWEEP_DEFAULT_VALUES)
    if any(v <= 0 for v in values):
        raise ValueError(f"sweep values must be positive, got {values}")
    out_dir = args.out or os.path.join(_out_root(), f"sweep-{args.param}")
    man = _Manifest("sweep", out_dir, base)
    man.record["config"]["sweep"] = {"param": args.param, "values": values}
    man.add_input(args.teacher)
    target_path = os.path.join(args.data, "target.fkd")
    man.add_input(target_path)
    jobs = [(args.param, v, base.canonical(), args.teacher, target_path,
             os.path.join(out_dir, f"{args.param}-{v:g}")) for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            accs = dict(pool.map(_run_one_value, jobs))
    else:
        accs = dict(map(_run_one_value, jobs))
    rows, table = [], []
    for v in values:
        rows.append(OrderedDict(param=args.param, value=f"{v:g}",
                                acc_student=f"{accs[v]:.4f}"))
        table.append([f"{v:g}", f"{accs[v]:.4f}"])
    _print_table([args.param, "acc"], table)
    records = os.path.join(out_dir, "sweep.records")
    _write_records(records, rows)
    man.add_output(records)
    print(f"manifest: {man.write()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fourierkd",
        description="Spectral knowledge transfer between domains: data "
                    "generation, training, and verification commands.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the paired source/target datasets")
    p.add_argument("--out", help=f"output directory (default $" + ENV_OUT + "/gen-data)")
    p.add_argument("--n-per-class", dest="n_per_class", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hard", action="store_true",
                   help="use the harder target domain (more tilt, noise, jitter)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="train the teacher on the source domain")
    p.add_argument("--data", required=True, help="directory with source.fkd/target.fkd")
    p.add_argument("--out")
    _add_config_opts(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="transfer to a student on the target domain")
    p.add_argument("--teacher", required=True, help="pretrained teacher checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--variant", default="full_4ds",
                   help="ablation variant (default full_4ds); see ablate --help")
    p.add_argument("--with-baseline", dest="with_baseline", action="store_true",
                   help="also train the plain baseline and print the delta")
    _add_config_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a saved network or run checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain", choices=("source", "target"), default="target")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--which", choices=("student", "teacher"), default="student",
                   help="for run checkpoints: which network to evaluate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward rule")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--ops", help="comma list to restrict (default: all); "
                                 "known: " + ", ".join(registered_ops()))
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run ablation variants and tabulate")
    p.add_argument("--teacher", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--variants", default="all",
                   help="'all' or comma list of: " + ", ".join(ABLATION_VARIANTS))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    _add_config_opts(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="sensitivity sweep over beta or gamma")
    p.add_argument("--teacher", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--param", choices=("beta", "gamma"), required=True)
    p.add_argument("--values", help="comma list (default: "
                   + ",".join(f"{v:g}" for v in SWEEP_DEFAULT_VALUES) + ")")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    _add_config_opts(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = args.func(args)
        return 0 if rc is None else int(rc)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
