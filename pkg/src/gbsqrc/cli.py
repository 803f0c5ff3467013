"""Command-line entry point: gen-data, run, sweep, report, validate-oracle."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ExperimentConfig, load_config, save_config
from .experiment import CACHE_ENV_VAR, emit_outputs, run_experiment, sweep


def _add_common(parser):
    parser.add_argument("--config", required=True, help="experiment config YAML")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--threads", type=int, default=1, help="simulation worker threads")
    parser.add_argument(
        "--cache", default=os.environ.get(CACHE_ENV_VAR),
        help=f"feature cache directory (default: ${CACHE_ENV_VAR})",
    )


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_gen_data(args) -> int:
    from .datasets import (
        make_blobs,
        make_moons_multiclass,
        make_synthetic_digit_images,
        make_synthetic_vowels,
        save_csv,
        write_idx_images,
        write_idx_labels,
    )

    os.makedirs(args.out, exist_ok=True)
    if args.task == "moons":
        ds = make_moons_multiclass(args.n, args.classes, args.noise, args.seed)
        path = os.path.join(args.out, f"moons{args.classes}.csv")
        save_csv(path, ds)
        print(path)
    elif args.task == "blobs":
        ds = make_blobs(args.n, args.classes, args.noise, seed=args.seed)
        path = os.path.join(args.out, f"blobs{args.classes}.csv")
        save_csv(path, ds)
        print(path)
    elif args.task == "vowels":
        ds = make_synthetic_vowels(args.seed)
        path = os.path.join(args.out, "vowels.csv")
        save_csv(path, ds)
        print(path)
    elif args.task == "mnist":
        images, labels = make_synthetic_digit_images(args.per_class, args.seed)
        img_path = os.path.join(args.out, "digits-images-idx3-ubyte")
        lab_path = os.path.join(args.out, "digits-labels-idx1-ubyte")
        write_idx_images(img_path, images)
        write_idx_labels(lab_path, labels)
        print(img_path)
        print(lab_path)
    else:
        raise SystemExit(f"unknown task {args.task!r}")
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    report = run_experiment(cfg, threads=args.threads, cache_dir=args.cache)
    paths = emit_outputs(report, args.out, cfg)
    print(f"accuracy {report.mean_accuracy:.4f} +- {report.std_accuracy:.4f} "
          f"over {report.repetitions} repetitions")
    for p in paths:
        print(p)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.axis is None:
        if cfg.sweep is None:
            raise SystemExit("no sweep axis: pass --axis/--values or add a sweep section")
        axis, values = cfg.sweep.axis, cfg.sweep.values
    else:
        axis = args.axis
        values = [float(v) for v in args.values.split(",")]
    reports = sweep(cfg, axis, values, threads=args.threads, cache_dir=args.cache)
    paths = emit_outputs(reports, args.out, cfg)
    for r in reports:
        print(f"{axis}={r.sweep_value:g}: accuracy {r.mean_accuracy:.4f} "
              f"+- {r.std_accuracy:.4f}")
    for p in paths:
        print(p)
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.metrics:
        with open(path) as fh:
            for entry in json.load(fh):
                rows.append(entry)
    if not rows:
        print("no reports")
        return 1
    header = f"{'task':<16} {'source':<15} {'features':<11} {'classifier':<10} " \
             f"{'accuracy':<18} {'photons/sample':<15}"
    print(header)
    print("-" * len(header))
    for r in rows:
        sweep_tag = ""
        if "sweep_axis" in r:
            sweep_tag = f" [{r['sweep_axis']}={r['sweep_value']:g}]"
        print(f"{r['task'] + sweep_tag:<16} {r['source']:<15} {r['features']:<11} "
              f"{r['classifier']:<10} {r['mean_accuracy']:.4f} +- {r['std_accuracy']:.4f}   "
              f"{r['photon_total_mean']:.3g}")
    return 0


def cmd_validate_oracle(args) -> int:
    from .gaussian import (
        GaussianState,
        apply_loss,
        apply_unitary,
        haar_unitary,
        make_squeezed_vacuum,
        photon_moments,
    )
    from .fock import fock_oracle_moments

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for trial in range(args.configs):
        m = int(rng.integers(1, args.max_modes + 1))
        r = rng.uniform(0.0, 0.8, m)
        amp = rng.uniform(0.0, 1.0, m)
        alpha = amp * np.exp(2j * np.pi * rng.uniform(0.0, 1.0, m))
        u = haar_unitary(m, rng)
        eta = rng.uniform(0.5, 1.0, m)
        base = make_squeezed_vacuum(r)
        state = GaussianState(alpha=alpha, n_mat=base.n_mat, m_mat=base.m_mat)
        mu_w, sig_w = photon_moments(apply_loss(apply_unitary(state, u), eta))
        mu_f, sig_f = fock_oracle_moments(squeeze_r=r, alpha=alpha, unitary=u, loss=eta)
        scale = max(np.abs(mu_w).max(), np.abs(sig_w).max())
        err = max(np.abs(mu_w - mu_f).max(), np.abs(sig_w - sig_f).max()) / scale
        worst = max(worst, err)
    ok = worst <= args.tol
    print(f"{args.configs} random configurations (M <= {args.max_modes}): "
          f"worst relative error {worst:.3e} "
          f"{'PASS' if ok else 'FAIL'} (tolerance {args.tol:g})")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gbsqrc",
        description="Photon-statistics reservoir computing simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate dataset files")
    p.add_argument("--task", required=True, choices=["moons", "blobs", "vowels", "mnist"])
    p.add_argument("--out", default="data")
    p.add_argument("--n", type=int, default=600)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--per-class", type=int, default=300, dest="per_class")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="run one experiment config")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a sweep along one axis")
    _add_common(p)
    p.add_argument("--axis", choices=["classes", "frames", "modes", "power"], default=None)
    p.add_argument("--values", default=None, help="comma-separated sweep values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize metrics JSON files")
    p.add_argument("metrics", nargs="+")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate-oracle", help="analytic moments vs the Fock oracle")
    p.add_argument("--configs", type=int, default=100)
    p.add_argument("--max-modes", type=int, default=3, dest="max_modes")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate_oracle)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
