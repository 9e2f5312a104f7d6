"""Command-line interface: ``dcoe {calibrate,estimate-pi,select,reproduce,theory}``.

Exit codes: 0 success, 2 invalid arguments or inputs, 1 runtime failure.
Failures print one JSON line ``{"error": ..., "message": ...}`` on stderr.
The ``DCOE_SEED`` environment variable overrides ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .baselines import evaluate
from .depmodels import Autoregressive, covariance_from_dict, phase_boundary, theory_boundaries
from .fnpcontrol import dcoe_select, dcoe_select_estimated
from .io import dump_json, read_config, write_csv
from .proportion import (
    DEFAULT_N_DRAWS,
    MIN_N_DRAWS,
    CovarianceNull,
    IndependentGaussian,
    NullCalibration,
    calibrate,
    estimate_pi,
    null_from_permutation,
)
from .simharness import (
    Constant,
    ExperimentSpec,
    GridSpec,
    consistency_curve,
    run_experiment,
    run_grid,
    spec_from_dict,
    spec_to_dict,
)
from .statvector import load_index_file, load_z_file

log = logging.getLogger("dcoe")

EXPERIMENTS = ("table1", "table2-dcoe", "figure3", "grid")
MODELS = ("ar", "block", "factor")


class UsageError(Exception):
    """Invalid flags or inputs, detected before any computation (exit 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def _seed(args) -> int:
    env = os.environ.get("DCOE_SEED")
    seed = int(env) if env else args.seed
    if seed is not None and not 0 <= seed < 2**64:
        raise UsageError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def _load_json(path, what: str) -> dict:
    try:
        return read_config(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {what} {path}: {exc}") from None


def _load_stats(args, p_expected: int | None = None):
    try:
        truth = load_index_file(args.truth) if getattr(args, "truth", None) else None
        stats = load_z_file(args.z, truth, two_sided=args.two_sided)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if p_expected is not None and stats.p != p_expected:
        raise UsageError(f"z file has p={stats.p} but calibration has p={p_expected}")
    return stats


def _load_calibration(path) -> NullCalibration:
    try:
        return NullCalibration.from_dict(_load_json(path, "calibration"))
    except (KeyError, ValueError) as exc:
        raise UsageError(f"invalid calibration file {path}: {exc}") from None


def cmd_calibrate(args) -> int:
    if args.p < 3:
        raise UsageError("--p must be at least 3")
    if args.n < MIN_N_DRAWS:
        raise UsageError(f"--n must be at least {MIN_N_DRAWS}")
    seed = _seed(args)
    if args.null == "independent":
        source = IndependentGaussian()
    elif args.null == "covariance":
        if not args.covariance:
            raise UsageError("--null covariance needs --covariance (JSON text or file)")
        text = Path(args.covariance).read_text() if Path(args.covariance).is_file() else args.covariance
        try:
            source = CovarianceNull(covariance_from_dict(json.loads(text)))
        except ValueError as exc:
            raise UsageError(f"invalid --covariance: {exc}") from None
    else:
        if not args.matrix:
            raise UsageError("--null external needs --matrix FILE")
        try:
            source = null_from_permutation(args.matrix, args.p)
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        if source.n_rows != args.n:
            raise UsageError(f"--matrix has {source.n_rows} rows but --n is {args.n}")
    calib = calibrate(args.p, args.n, source, seed, workers=args.workers, two_sided=args.two_sided)
    calib.save(args.out)
    print(f"c_p_05={calib.c_p_05:.10g} c_p_1={calib.c_p_1:.10g} quantile_level={calib.quantile_level:.10g}")
    return 0


def cmd_estimate_pi(args) -> int:
    calib = _load_calibration(args.calibration)
    args.two_sided = args.two_sided or calib.two_sided
    stats = _load_stats(args, calib.p)
    est = estimate_pi(stats, calib)
    payload = {"p": stats.p, "s_hat": est.pi_hat * stats.p, **est.to_dict()}
    text = dump_json(payload, args.out)
    print(f"pi_hat={est.pi_hat:.10g} s_hat={est.pi_hat * stats.p:.10g}")
    if not args.out:
        sys.stdout.write(text)
    return 0


def _parse_s_mode(text: str):
    kind, _, value = text.partition(":")
    if kind == "known":
        try:
            s = float(value)
        except ValueError:
            raise UsageError(f"--s known:<value> needs a number, got {value!r}") from None
        if not s > 0:
            raise UsageError("--s known value must be positive")
        return "known", s
    if kind == "estimate" and value:
        return "estimated", value
    raise UsageError("--s must be known:<value> or estimate:<calibration-file>")


def cmd_select(args) -> int:
    if not 0.0 < args.beta < 1.0:
        raise UsageError("--beta must lie in (0, 1)")
    mode, value = _parse_s_mode(args.s)
    if mode == "known":
        stats = _load_stats(args)
        if value > stats.p:
            raise UsageError(f"--s known value {value} exceeds p={stats.p}")
        report = dcoe_select(stats, args.beta, value)
    else:
        calib = _load_calibration(value)
        args.two_sided = args.two_sided or calib.two_sided
        stats = _load_stats(args, calib.p)
        report = dcoe_select_estimated(stats, args.beta, calib)

    out = Path(args.out)
    payload = report.to_dict()
    payload["p"] = stats.p
    if report.curve is not None:
        trace = Path(args.trace) if args.trace else out.with_name(out.stem + "_trace.csv")
        write_csv(trace, ["rank", "index", "t", "fnp_hat"], report.curve.to_rows())
        payload["trace_path"] = str(trace)
    else:
        payload["trace_path"] = None
    if stats.truth is not None:
        m = evaluate(report.selected, stats, "DCOE")
        payload["metrics"] = {"fnp": m.fnp, "fdp": m.fdp, "fm_index": m.fm_index, "n_selected": m.n_selected}
    dump_json(payload, out)
    thr = "none" if report.threshold is None else f"{report.threshold:.6g}"
    line = (f"selected {report.k_selected} of {stats.p} (beta={report.beta:g}, s={report.s_used:.6g} "
            f"[{report.s_source}], threshold={thr})")
    if report.warning:
        line += f" warning={report.warning}"
    print(line)
    return 0


def _preset(experiment: str, model: str | None) -> dict:
    name = f"{experiment}_{model}.json" if experiment in ("table1", "figure3") else f"{experiment}.json"
    return json.loads(resources.files("dcoe").joinpath("presets", name).read_text())


def cmd_reproduce(args) -> int:
    if bool(args.config) == bool(args.experiment):
        raise UsageError("give exactly one of --config or --experiment")
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    if args.config:
        cfg = _load_json(args.config, "config")
        base_dir = Path(args.config).parent
    else:
        cfg = _preset(args.experiment, args.model or "ar")
        base_dir = None
    if args.A is not None:
        key = "strength" if cfg.get("kind") == "grid" else "signal_strength"
        cfg[key] = {"type": "constant", "A": args.A}
    if args.gamma is not None:
        cfg["gamma"] = args.gamma
    if args.reps is not None:
        cfg["n_trials" if cfg.get("kind") == "grid" else "n_replications"] = args.reps
    seed = _seed(args)
    if seed is not None:
        cfg["master_seed"] = seed
    try:
        spec = spec_from_dict(cfg, base_dir)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = spec.name
    start = time.perf_counter()
    if isinstance(spec, GridSpec):
        result = run_grid(spec, workers=args.workers)
        paths = result.write(out_dir, stem)
        for trial in result.trials:
            for m in trial.metrics:
                print(f"{m.method_label}: fnp={m.fnp:.4f} fdp={m.fdp:.4f} fm={m.fm_index:.4f} n={m.n_selected}")
    elif cfg.get("kind") == "consistency":
        curve = consistency_curve(spec, workers=args.workers)
        curve_path = out_dir / f"{stem}_curve.csv"
        curve.write(curve_path)
        b, d = curve.boundaries, curve.dependence
        config = {**curve.config, "kind": "consistency",
                  "boundaries": {"mu1": b.mu1, "mu2": b.mu2, "mu_min": b.mu_min, "eta": b.eta},
                  "dependence": {"sigma_l1": d.sigma_l1, "rho_bar": d.rho_bar, "eta": d.eta, "eta_raw": d.eta_raw}}
        config_path = out_dir / f"{stem}_config.json"
        dump_json(config, config_path)
        paths = [curve_path, config_path]
        print(f"mu1={b.mu1:.4f} mu2={b.mu2:.4f} mu_min={b.mu_min:.4f} eta={b.eta:.4f}")
    else:
        result = run_experiment(spec, workers=args.workers)
        paths = result.write(out_dir, stem)
        for r in result.summary:
            print(f"{r.method}: fnp={r.mean_fnp:.3f} ({r.sd_fnp:.3f}) fdp={r.mean_fdp:.3f} ({r.sd_fdp:.3f}) "
                  f"fm={r.mean_fm:.3f} ({r.sd_fm:.3f})")
    log.info("finished in %.2fs", time.perf_counter() - start)
    for p in paths:
        log.info("wrote %s", p)
    return 0


def cmd_theory(args) -> int:
    try:
        b = theory_boundaries(args.gamma, args.eta, args.p, clamp=args.clamp)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    payload = {"gamma": b.gamma, "eta": b.eta, "p": b.p, "clamp": args.clamp, "mu1": b.mu1, "mu2": b.mu2,
               "mu_min": b.mu_min, "phase_boundary": phase_boundary(args.gamma, args.eta)}
    sys.stdout.write(dump_json(payload, args.out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dcoe", description="False negative control with dual control of errors.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr (repeatable)")
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", parents=[common], help="Monte-Carlo bounding constants for the proportion estimator")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--n", type=int, default=DEFAULT_N_DRAWS, help="number of null draws")
    p.add_argument("--null", choices=("independent", "covariance", "external"), default="independent")
    p.add_argument("--covariance", help="covariance config as JSON text or a JSON file")
    p.add_argument("--matrix", help="N x p file of null statistics for --null external")
    p.add_argument("--two-sided", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("estimate-pi", parents=[common], help="estimate the signal proportion")
    p.add_argument("--z", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--two-sided", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate_pi)

    p = sub.add_parser("select", parents=[common], help="dual-control selection")
    p.add_argument("--z", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--s", required=True, help="known:<value> or estimate:<calibration-file>")
    p.add_argument("--two-sided", action="store_true")
    p.add_argument("--truth", help="file of 0-based signal indices; adds realized metrics")
    p.add_argument("--trace", help="FNP estimate trace CSV (default: <out>_trace.csv)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("reproduce", parents=[common], help="run a simulation preset or config file")
    p.add_argument("--config")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--A", type=float, help="override the (constant) signal strength")
    p.add_argument("--gamma", type=float)
    p.add_argument("--reps", type=int, help="override replications (trials for the grid)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", default="results")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("theory", parents=[common], help="consistency boundaries and phase boundary")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--clamp", choices=("outer", "inner"), default="outer")
    p.add_argument("--out")
    p.set_defaults(func=cmd_theory)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("UsageError", str(exc), 2)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("UsageError", str(exc), 2)
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
