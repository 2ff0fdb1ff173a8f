"""Command-line harness: train, eval, precision, params, depth-audit, bench."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from .api import keygen
from .config import RunConfig
from .data import Dataset
from .depth import closed_form_report, depth_audit, tau_total
from .errors import HeError
from .metrics import write_metrics
from .packing import Architecture, compute_dims, minimal_grid, required_rotations
from .params import (
    FIRST_MODULUS_BITS,
    HES_MAX_MODULUS_BITS_128,
    SPECIAL_MODULUS_BITS,
    make_params,
    minimum_degree_for_slots,
)
from .serialize import load_model
from .training import build_run, evaluate, load_dataset, run_training


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--backend", choices=["sim", "ckks"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--insecure-ok", action="store_true", default=None,
                   help="allow CKKS runs below the 128-bit parameter table")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config)
    return cfg.apply_overrides(backend=args.backend, seed=args.seed,
                               out_dir=args.out, insecure_ok=args.insecure_ok)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    result = run_training(cfg)
    print(f"iterations        : {cfg.iterations}")
    print(f"per-iteration depth: {result.iteration_depths[-1]}")
    print(f"train accuracy    : {result.final_train_accuracy:.4f}")
    print(f"test accuracy     : {result.final_test_accuracy:.4f}")
    if result.model_path:
        print(f"model             : {result.model_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    train_ds, test_ds = load_dataset(cfg)
    arch = Architecture(input_dim=train_ds.feature_dim, hidden=cfg.hidden,
                        classes=train_ds.classes)
    params, shape, custodian, _, _ = build_run(cfg, arch)
    if cfg.backend == "ckks" and args.keys:
        from .ckks.backend import load_custodian

        custodian = load_custodian(Path(args.keys).read_bytes())
    model = load_model(Path(args.model).read_bytes(), custodian)
    acc = evaluate(model, test_ds, custodian)
    print(f"test accuracy: {acc:.4f}")
    return 0


def cmd_precision(args) -> int:
    cfg = _load_config(args)
    if not cfg.shadow:
        raise HeError("precision tracing needs the shadow model enabled")
    result = run_training(cfg)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["iteration", "phase", "block_id", "precision_bits"])
    for entry in result.precision_trace:
        for b, bits in enumerate(entry["bits"], start=1):
            writer.writerow([entry["iteration"], entry["phase"], b, f"{bits:.6g}"])
    text = out.getvalue()
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out_dir) / "precision.csv").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_params(args) -> int:
    hidden = tuple(int(k) for k in args.hidden.split(","))
    arch = Architecture(input_dim=args.input_dim, hidden=hidden, classes=args.classes)
    level = tau_total(arch.depth) + args.tau_bs
    r_min, c_min = minimal_grid(arch)
    degree = minimum_degree_for_slots(r_min * c_min)
    total_bits = FIRST_MODULUS_BITS + args.delta * level + SPECIAL_MODULUS_BITS
    if args.security == 128:
        biggest = max(HES_MAX_MODULUS_BITS_128)
        while degree not in HES_MAX_MODULUS_BITS_128 or \
                HES_MAX_MODULUS_BITS_128[degree] < total_bits:
            degree *= 2
            if degree > biggest:
                raise HeError(
                    f"no standard-listed degree supports {total_bits} modulus bits")
    params = make_params(level=level, scale_bits=args.delta, poly_degree=degree,
                         bootstrap_depth=args.tau_bs,
                         security_claim=128 if args.security == 128 else "insecure-test")
    shape = compute_dims(arch, params.slot_count)
    rotations = sorted(required_rotations(shape))
    report = closed_form_report(arch.depth)
    print(f"architecture        : {arch.input_dim} -> "
          + " -> ".join(str(k) for k in arch.hidden) + f" (classes {arch.classes})")
    print(f"per-iteration depth : {report.tau_reboot}")
    print(f"suggested level     : {level} = {report.tau_reboot} + {args.tau_bs}")
    print(f"polynomial degree   : {degree} (slots {params.slot_count}, "
          f"grid {shape.r}x{shape.c})")
    print(f"modulus chain bits  : {list(params.modulus_chain)}")
    print(f"security            : {params.security_claim}")
    print(f"rotation indices    : {rotations}")
    for line in report.lines():
        print(line)
    return 0


def cmd_depth_audit(args) -> int:
    for h in range(1, args.layers + 1):
        report = depth_audit(h, measure=not args.no_measure)
        for line in report.lines():
            print(line)
    return 0


def cmd_bench(args) -> int:
    """Non-gating throughput report: iterations/second vs width and degree."""
    from .nn import Hyperparams, build_model, prepare_sample, train_iteration
    from .params import SchemeParams

    rng = np.random.default_rng(0)
    print("width sweep at fixed degree:")
    rows = []
    for width in args.widths:
        arch = Architecture(input_dim=16, hidden=(width,), classes=4)
        r_min, c_min = minimal_grid(arch)
        degree = max(args.degree, minimum_degree_for_slots(r_min * c_min))
        params = make_params(level=tau_total(1), scale_bits=40, poly_degree=degree)
        shape = compute_dims(arch, params.slot_count)
        custodian = keygen(params, required_rotations(shape), backend="sim")
        hyper = Hyperparams(learning_rate=0.01, iterations=args.iters, batch_size=1)
        model = build_model(arch, params, hyper, custodian)
        sample = prepare_sample(rng.uniform(0, 1, 16), np.eye(4)[0], shape, custodian)
        t0 = time.perf_counter()
        for t in range(1, args.iters + 1):
            train_iteration(model, [sample], custodian, t)
        dt = time.perf_counter() - t0
        rows.append((width, degree, args.iters / dt))
        print(f"  width {width:5d}  N {degree:6d}  {args.iters / dt:8.2f} it/s")
    print("degree sweep at fixed width:")
    for degree in args.degrees:
        arch = Architecture(input_dim=16, hidden=(32,), classes=4)
        r_min, c_min = minimal_grid(arch)
        degree = max(degree, minimum_degree_for_slots(r_min * c_min))
        params = make_params(level=tau_total(1), scale_bits=40, poly_degree=degree)
        shape = compute_dims(arch, params.slot_count)
        custodian = keygen(params, required_rotations(shape), backend="sim")
        hyper = Hyperparams(learning_rate=0.01, iterations=args.iters, batch_size=1)
        model = build_model(arch, params, hyper, custodian)
        sample = prepare_sample(rng.uniform(0, 1, 16), np.eye(4)[0], shape, custodian)
        t0 = time.perf_counter()
        for t in range(1, args.iters + 1):
            train_iteration(model, [sample], custodian, t)
        dt = time.perf_counter() - t0
        rows.append((32, degree, args.iters / dt))
        print(f"  width    32  N {degree:6d}  {args.iters / dt:8.2f} it/s")
    if args.out:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["width", "poly_degree", "iterations_per_second"])
        for row in rows:
            writer.writerow([row[0], row[1], f"{row[2]:.4f}"])
        Path(args.out).write_text(out.getvalue(), encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ciphermlp",
        description="Non-interactive encrypted MLP training at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model per the configuration")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a serialized model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--keys", default=None, help="custodian key file (ckks)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("precision", help="trace per-layer weight precision")
    _add_common(p)
    p.set_defaults(func=cmd_precision)

    p = sub.add_parser("params", help="suggest scheme parameters for an architecture")
    p.add_argument("--input-dim", type=int, required=True)
    p.add_argument("--hidden", required=True, help="comma-separated widths")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--tau-bs", type=int, default=16, help="bootstrap circuit depth")
    p.add_argument("--delta", type=int, default=49, help="scale bits")
    p.add_argument("--security", type=int, default=0,
                   help="128 to apply the standard table, 0 for insecure-test")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("depth-audit", help="closed-form vs measured depth")
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--no-measure", action="store_true")
    p.set_defaults(func=cmd_depth_audit)

    p = sub.add_parser("bench", help="non-gating throughput report")
    p.add_argument("--widths", type=int, nargs="+", default=[8, 16, 32, 64, 128])
    p.add_argument("--degrees", type=int, nargs="+", default=[512, 1024, 2048])
    p.add_argument("--degree", type=int, default=2048)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
