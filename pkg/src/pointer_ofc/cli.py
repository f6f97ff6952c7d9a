"""Command line front end: ``pointer-ofc {ingest,fit,simulate,compare,report}``.

Exit codes: 0 success, 2 input or configuration error, 3 empty result,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, NumericalFailure, RecordingError
from .fitting import LQR_VARIANTS, MODELS, canonical_model
from .lqr import simulate_lqr, solve_riccati
from .model import DEFAULT_C, ModelParams, augment_system, build_cost, build_dynamics, initial_control
from .reference import minjerk_coefficients, minjerk_trajectory, simulate_2ol_eq
from .report import (PipelineConfig, aggregate_stats, load_trials, read_rows, run_compare,
                     run_fit, write_rows)

log = logging.getLogger("pointer_ofc")

EXIT_INPUT, EXIT_EMPTY, EXIT_NUMERIC = 2, 3, 4


class EmptyResult(Exception):
    pass


def _global_options():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed for fit starts")
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes for fitting")
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON pipeline configuration")
    p.add_argument("--px-per-m", type=float, default=argparse.SUPPRESS,
                   help="pixels per metre for pixel-valued recordings")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser():
    common = _global_options()
    parser = argparse.ArgumentParser(prog="pointer-ofc", parents=[common],
                                     description="Fit and compare pointing-movement models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="segment and preprocess a dataset")
    p.add_argument("dataset_dir")
    p.add_argument("--out", default="-", help="trial table CSV (default: stdout)")

    p = sub.add_parser("fit", parents=[common], help="fit one model to every retained trial")
    p.add_argument("dataset_dir")
    p.add_argument("--model", required=True, help=", ".join(MODELS))
    p.add_argument("--out", required=True)
    p.add_argument("--n-starts", type=int)

    p = sub.add_parser("simulate", parents=[common], help="simulate one model trajectory")
    p.add_argument("--model", required=True, help=", ".join(MODELS))
    p.add_argument("--k", type=float)
    p.add_argument("--d", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--c", type=float, default=DEFAULT_C)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--p1", type=float, default=0.0)
    p.add_argument("--v1", type=float, default=0.0)
    p.add_argument("--a1", type=float, default=0.0)
    p.add_argument("--u0", type=float, help="initial control (default reproduces a1)")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--h", type=float, default=0.002)
    p.add_argument("--n-tilde", type=int, help="MinJerk: last step of the polynomial segment")
    p.add_argument("--p-tf", type=float, help="MinJerk: end position (default: target)")
    p.add_argument("--v-tf", type=float, default=0.0)
    p.add_argument("--a-tf", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare", parents=[common], help="fit several models and write a report")
    p.add_argument("dataset_dir")
    p.add_argument("--models", default="2OL-LQR2,2OL-Eq,MinJerk")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-starts", type=int)

    p = sub.add_parser("report", parents=[common], help="summary statistics from a per-trial CSV")
    p.add_argument("per_trial_csv")
    p.add_argument("--out", default="-")
    return parser


def _pipeline_config(args):
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    fit = cfg.fit
    if getattr(args, "seed", None) is not None:
        fit = replace(fit, seed=args.seed)
    if getattr(args, "n_starts", None) is not None:
        fit = replace(fit, n_starts=args.n_starts)
    if getattr(args, "px_per_m", None) is not None:
        cfg = replace(cfg, px_per_m=args.px_per_m)
    return replace(cfg, fit=fit)


def _open_out(path):
    if path == "-":
        return sys.stdout
    return open(path, "w", newline="", encoding="utf-8")


def cmd_ingest(args):
    cfg = _pipeline_config(args)
    trimmed, _ = load_trials(args.dataset_dir, cfg)
    fields = ["trial_id", "participant", "recording", "trial_index", "direction", "target_m",
              "distance_m", "width_m", "id_bits", "n_samples", "trimmed", "excluded", "reason"]
    fh = _open_out(args.out)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for t in trimmed:
            task = t.task
            writer.writerow([t.trial_id, t.participant, t.recording, t.index + 1, t.direction,
                             repr(task.target), "" if task.distance is None else repr(task.distance),
                             "" if task.width is None else repr(task.width),
                             "" if task.id_bits is None else repr(task.id_bits),
                             len(t.trajectory), t.trimmed, int(t.excluded), t.reason])
    finally:
        if fh is not sys.stdout:
            fh.close()
    retained = sum(not t.excluded for t in trimmed)
    log.info("%d trials, %d retained", len(trimmed), retained)
    if retained == 0:
        raise EmptyResult("no retained trials")


def cmd_fit(args):
    cfg = _pipeline_config(args)
    model = canonical_model(args.model)
    rows = run_fit(args.dataset_dir, model, cfg, jobs=getattr(args, "jobs", 1))
    if not any(not r.excluded for r in rows):
        write_rows(rows, args.out)
        raise EmptyResult("no retained trials")
    write_rows(rows, args.out)


def simulate_model(model, args):
    """Trajectory and control series of one model run (controls may be None)."""
    model = canonical_model(model)
    x1 = np.array([args.p1, args.v1, args.target])
    if model in LQR_VARIANTS:
        if None in (args.k, args.d, args.r):
            raise InvalidArgument(f"{model} needs --k, --d and --r")
        params = ModelParams(args.k, args.d, args.r, args.delta)
        sys_ = augment_system(build_dynamics(params.k, params.d, args.h))
        spec = build_cost(LQR_VARIANTS[model], params, args.n, args.h, c=args.c)
        gains = solve_riccati(sys_, spec)
        u0 = args.u0 if args.u0 is not None else initial_control(params, args.p1, args.v1, args.a1)
        traj = simulate_lqr(gains, sys_, x1, u0, args.n)
        return traj, traj.controls
    if model == "2OL-Eq":
        if None in (args.k, args.d):
            raise InvalidArgument("2OL-Eq needs --k and --d")
        traj = simulate_2ol_eq(args.k, args.d, args.h, x1, args.target, args.n)
        return traj, traj.controls
    n_tilde = args.n_tilde or args.n
    if n_tilde < 2:
        raise InvalidArgument("MinJerk needs --n-tilde >= 2")
    p_tf = args.target if args.p_tf is None else args.p_tf
    coeffs = minjerk_coefficients(args.p1, args.v1, args.a1, p_tf, args.v_tf, args.a_tf,
                                  (n_tilde - 1) * args.h, N_tilde=n_tilde)
    return minjerk_trajectory(coeffs, args.h, args.n), None


def cmd_simulate(args):
    traj, controls = simulate_model(args.model, args)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time_s", "pos_m", "vel_mps", "acc_mps2", "control"])
        for i, t in enumerate(traj.times):
            u = repr(float(controls[i])) if controls is not None and i < len(controls) else ""
            writer.writerow([repr(float(t)), repr(float(traj.positions[i])),
                             repr(float(traj.velocities[i])), repr(float(traj.accelerations[i])), u])


def cmd_compare(args):
    cfg = _pipeline_config(args)
    models = [canonical_model(m) for m in args.models.split(",") if m.strip()]
    if not models:
        raise InvalidArgument("no models requested")
    rows = run_compare(args.dataset_dir, models, cfg, args.out_dir, jobs=getattr(args, "jobs", 1))
    if not any(not r.excluded for r in rows):
        raise EmptyResult("no retained trials")


def cmd_report(args):
    try:
        rows = read_rows(args.per_trial_csv)
    except (OSError, KeyError, ValueError) as exc:
        raise InvalidArgument(f"cannot read {args.per_trial_csv}: {exc}") from None
    stats = aggregate_stats(rows)
    if not stats:
        raise EmptyResult("no retained rows")
    fh = _open_out(args.out)
    try:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


COMMANDS = {"ingest": cmd_ingest, "fit": cmd_fit, "simulate": cmd_simulate,
            "compare": cmd_compare, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        COMMANDS[args.command](args)
    except (InvalidArgument, RecordingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmptyResult as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
