"""Command-line entry point.

Every run that writes files also writes a manifest.json beside them with the
full configuration, master seed and package version; `rerun <manifest>`
reproduces the primary CSVs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

from . import __version__, mnist as mnist_mod, mp, report, resolvent, simulator, sweep as sweep_mod
from .errors import PoisonRidgeError
from .theory import ModelParams, predict, predict_ridgeless


def _write_manifest(outdir: str, command: str, args: dict) -> str:
    path = os.path.join(outdir, "manifest.json")
    args = {k: v for k, v in args.items() if k not in ("func", "command")}
    payload = {
        "artifact_version": __version__,
        "command": command,
        "args": args,
        "master_seed": args.get("seed"),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_output(outdir: str, name: str, records, fmt: str) -> str:
    if fmt == "jsonl":
        path = os.path.join(outdir, f"{name}.jsonl")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in records:
                row = dataclasses.asdict(r)
                row["lambda"] = row.pop("lam")
                row.pop("wall_time_ms")  # diagnostic, not reproducible
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    else:
        path = os.path.join(outdir, f"{name}.csv")
        sweep_mod.write_records(path, records)
    return path


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok]


def cmd_theory(args) -> int:
    params = ModelParams(c=args.c, lam=args.lam, theta=args.theta, v_norm=args.vnorm)
    if args.ridgeless:
        pred = predict_ridgeless(params)
        print(f"mode       ridgeless (c={args.c})")
    else:
        pred = predict(params)
        t = mp.transforms(args.c, -args.lam)
        print(f"m(-lambda)        {t.m!r}")
        print(f"mtilde(-lambda)   {t.m_tilde!r}")
        print(f"m'(-lambda)       {t.m_prime!r}")
        print(f"mtilde'(-lambda)  {t.m_tilde_prime!r}")
    print(f"mu         {pred.mu!r}")
    print(f"sigma_sq   {pred.sigma_sq!r}")
    print(f"eta        {pred.eta!r}")
    print(f"C          {pred.C_align!r}")
    return 0


def cmd_simulate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    params = ModelParams(c=args.c, lam=args.lam, theta=args.theta, v_norm=args.vnorm)
    records = []
    for ti in range(args.trials):
        seed = sweep_mod.trial_seed(args.seed, 0, ti)
        shape = simulator.SimShape(p=args.p, n=max(1, round(args.p / args.c)), seed=seed)
        records.append(simulator.run_trial(
            params, shape, trial_index=ti, m_test=args.m_test,
            centering=simulator.Centering(args.centering),
        ))
    path = _write_output(args.out, "simulate", records, args.format)
    _write_manifest(args.out, "simulate", vars(args))
    print(f"wrote {path}")
    return 1 if any(r.is_error for r in records) else 0


def cmd_sweep(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    grid = sweep_mod.SweepGrid.builtin(p=args.p, trials=args.trials, master_seed=args.seed)
    mode = sweep_mod.AxisMode(args.mode)
    records = sweep_mod.run_sweep(grid, mode, m_test=args.m_test, workers=args.workers)
    path = _write_output(args.out, "sweep", records, args.format)
    agg_path = os.path.join(args.out, "sweep_agg.csv")
    sweep_mod.write_aggregates(agg_path, sweep_mod.aggregate(records))
    _write_manifest(args.out, "sweep", vars(args))
    n_err = sum(r.is_error for r in records)
    print(f"wrote {path} ({len(records)} records, {n_err} error rows) and {agg_path}")
    return 1 if n_err else 0


def cmd_resolvent_check(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    rows = resolvent.convergence_table(
        c=args.c, tau=args.tau, z=args.z, sizes=args.p, n_seeds=args.seeds,
        master_seed=args.seed,
    )
    path = os.path.join(args.out, "resolvent_checks.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["check_name", "p", "n", "seed", "observed", "predicted", "abs_error"],
            lineterminator="\n",
        )
        writer.writeheader()
        writer.writerows(rows)
    _write_manifest(args.out, "resolvent-check", vars(args))
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def cmd_mnist(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    images, labels = mnist_mod.load_pair(args.images, args.labels)
    task = mnist_mod.build_binary_task(
        images, labels, digit_neg=args.digit_neg, digit_pos=args.digit_pos,
        scale=args.scale,
    )
    trigger = mnist_mod.make_patch_trigger(
        offset=(args.patch_row, args.patch_col), size=args.patch_size,
        v_norm_target=args.vnorm, rows=images.rows, cols=images.cols,
    )
    records = []
    gi = 0
    for theta in args.theta:
        for lam in args.lam:
            for sub_n in args.subsample_n:
                records.extend(mnist_mod.run_mnist_experiment(
                    task, trigger, theta=theta, lam=lam, subsample_n=sub_n,
                    trials=args.trials, seed=args.seed,
                    swap_classes=args.swap_classes, m_test=args.m_test,
                    grid_index=gi,
                ))
                gi += 1
    path = _write_output(args.out, "mnist", records, args.format)
    _write_manifest(args.out, "mnist", vars(args))
    print(f"wrote {path} ({len(records)} records)")
    return 0


def cmd_report(args) -> int:
    axes = args.axis.split(",") if args.axis else None
    written = report.make_report(args.input, args.kind, axes=axes, outdir=args.outdir)
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_rerun(args) -> int:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    command = manifest["command"]
    stored = dict(manifest["args"])
    stored.pop("func", None)
    argv = [command]
    for key, value in stored.items():
        # argparse dest "lam" corresponds to the --lambda flag
        flag = "--lambda" if key == "lam" else "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        elif isinstance(value, list):
            argv.extend([flag, ",".join(str(v) for v in value)])
        elif value is not None:
            argv.extend([flag, str(value)])
    return main(argv)


def _add_common_output(sub, default_out: str) -> None:
    sub.add_argument("--out", default=default_out, help="output directory")
    sub.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    sub.add_argument("--m-test", type=int, default=10000,
                     help="test points per trial for the Monte Carlo efficacy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poisonridge",
        description="Closed-form predictions and Monte Carlo verification for "
                    "backdoor poisoning of high-dimensional ridge regression.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("theory", help="evaluate the closed-form predictions")
    s.add_argument("--c", type=float, required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=0.1)
    s.add_argument("--theta", type=float, default=0.1)
    s.add_argument("--vnorm", type=float, default=1.0)
    s.add_argument("--ridgeless", action="store_true")
    s.set_defaults(func=cmd_theory)

    s = subs.add_parser("simulate", help="Monte Carlo trials at one parameter point")
    s.add_argument("--p", type=int, default=500)
    s.add_argument("--c", type=float, default=0.1)
    s.add_argument("--lambda", dest="lam", type=float, default=0.1)
    s.add_argument("--theta", type=float, default=0.1)
    s.add_argument("--vnorm", type=float, default=1.0)
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--centering", choices=("population", "empirical"), default="population")
    _add_common_output(s, "simulate_out")
    s.set_defaults(func=cmd_simulate)

    s = subs.add_parser("sweep", help="run the built-in parameter grid")
    s.add_argument("--builtin", choices=("default",), default="default")
    s.add_argument("--p", type=int, default=500)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=("full", "one-at-a-time"), default="one-at-a-time")
    s.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default ${sweep_mod.WORKERS_ENV} or 1)")
    _add_common_output(s, "sweep_out")
    s.set_defaults(func=cmd_sweep)

    s = subs.add_parser("resolvent-check", help="deterministic-equivalent convergence CSV")
    s.add_argument("--p", type=_ints, default=[100, 200, 400],
                   help="comma-separated matrix sizes")
    s.add_argument("--c", type=float, default=0.5)
    s.add_argument("--tau", type=float, default=1.0)
    s.add_argument("--z", type=float, default=-0.5)
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="resolvent_out")
    s.set_defaults(func=cmd_resolvent_check)

    s = subs.add_parser("mnist", help="poisoned-ridge runs on IDX image data")
    s.add_argument("--images", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--digit-neg", type=int, default=0)
    s.add_argument("--digit-pos", type=int, default=1)
    s.add_argument("--scale", choices=("raw", "unit"), default="unit")
    s.add_argument("--patch-row", type=int, default=2)
    s.add_argument("--patch-col", type=int, default=2)
    s.add_argument("--patch-size", type=int, default=3)
    s.add_argument("--vnorm", type=float, default=1.0)
    s.add_argument("--theta", type=_floats, default=[0.1], help="comma-separated values")
    s.add_argument("--lambda", dest="lam", type=_floats, default=[0.1],
                   help="comma-separated values")
    s.add_argument("--subsample-n", type=_ints, default=[7840],
                   help="comma-separated subsample sizes (controls c = p/n)")
    s.add_argument("--trials", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--swap-classes", action="store_true",
                   help="poison the +1 class and flip to -1 instead")
    _add_common_output(s, "mnist_out")
    s.set_defaults(func=cmd_mnist)

    s = subs.add_parser("report", help="SVG figures + aggregate CSV from a sweep CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--kind", choices=sorted(report.KINDS), required=True)
    s.add_argument("--axis", default=None, help="comma-separated axes (default: auto)")
    s.add_argument("--outdir", default=None)
    s.set_defaults(func=cmd_report)

    s = subs.add_parser("rerun", help="reproduce a run from its manifest")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PoisonRidgeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
