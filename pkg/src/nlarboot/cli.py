"""Command-line front end.

Commands: ``simulate`` (write a path as CSV), ``fit`` (parameter estimates),
``predict`` (point predictions and QPIs from data or a simulated path),
``interval`` (pertinent prediction interval), ``experiment`` (replicated
metrics table plus manifest).  All randomness flows from ``--seed``; when
the flag is absent a seed is drawn from system entropy and echoed in the
output so any run can be reproduced.  A flat YAML config file mirroring the
flags can be passed with ``--config``; explicit flags win.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np
import yaml

from .errors import (ConfigError, DegenerateSeriesError, DomainViolation,
                     ExplosionError, FitFailure)
from .fitting import (FitOptions, fit_model, fitted_residuals,
                      predictive_residuals, prepare_innovation_residuals)
from .harness import ALL_METHODS, ExperimentConfig, run_and_export
from .intervals import assemble_ppi, ppi_engine
from .models import InnovationDistribution, TimeSeries, simulate_path
from .modelconfig import resolve_model
from .prediction import qpi, simulate_future
from .rngkit import as_seed_sequence, derive

_EXIT_CODES = {"parse": 2, "fit": 3, "explosion": 4, "io": 5}


def _error_class(exc: Exception) -> str:
    if isinstance(exc, ExplosionError):
        return "explosion"
    if isinstance(exc, (FitFailure, DegenerateSeriesError)):
        return "fit"
    if isinstance(exc, (ConfigError, DomainViolation, yaml.YAMLError, ValueError)):
        return "parse"
    if isinstance(exc, OSError):
        return "io"
    return "parse"


def _emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    return int(np.random.SeedSequence().entropy % (2**63))


def _load_series(path, order: int) -> TimeSeries:
    """Single-column CSV, optional header, at least order+1 finite rows."""
    values = []
    with open(path) as f:
        for i, line in enumerate(f):
            cell = line.strip().split(",")[0]
            if not cell:
                continue
            try:
                values.append(float(cell))
            except ValueError:
                if i == 0:
                    continue  # header row
                raise ConfigError(f"{path}:{i + 1}: cannot parse {cell!r} as a number")
    if len(values) < order + 1:
        raise ConfigError(f"series file needs at least order+1={order + 1} rows")
    return TimeSeries(order=order, values=np.asarray(values))


def _fit_options(args) -> FitOptions:
    kw = {}
    if getattr(args, "multistarts", None) is not None:
        kw["multistarts"] = int(args.multistarts)
    if getattr(args, "max_evaluations", None) is not None:
        kw["max_evaluations"] = int(args.max_evaluations)
    if getattr(args, "tolerance", None) is not None:
        kw["tolerance"] = float(args.tolerance)
    return FitOptions(**kw)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    seed = _resolve_seed(args)
    if args.T is None:
        raise ConfigError("simulate needs --T")
    spec, theta1, theta2 = resolve_model(args.model)
    innov = InnovationDistribution.parse(args.innovation)
    series = simulate_path(spec, theta1, innov, T=args.T, burn_in=args.burn_in,
                           seed=seed, theta2=theta2)
    out = args.out or "-"
    text = "x\n" + "\n".join(repr(float(v)) for v in series.values) + "\n"
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w") as f:
            f.write(text)
    _emit({"command": "simulate", "model": spec.label, "T": args.T,
           "order": spec.order, "length": int(series.values.size),
           "burn_in": args.burn_in, "innovation": innov.label,
           "seed": seed, "out": out})
    return 0


def _obtain_series(args, spec, theta1, theta2, seed_ss):
    if args.data:
        return _load_series(args.data, spec.order)
    if args.T is None:
        raise ConfigError("provide --data or --T (simulate a fresh path)")
    innov = InnovationDistribution.parse(args.innovation)
    return simulate_path(spec, theta1, innov, T=args.T, burn_in=args.burn_in,
                         seed=derive(seed_ss, 100), theta2=theta2)


def cmd_fit(args) -> int:
    seed = _resolve_seed(args)
    spec, theta1, theta2 = resolve_model(args.model)
    series = _obtain_series(args, spec, theta1, theta2, as_seed_sequence(seed))
    fit = fit_model(series, spec, _fit_options(args), seed=seed)
    _emit({
        "command": "fit", "model": spec.label, "T": series.T, "seed": seed,
        "theta1_hat": [round(v, 6) for v in fit.theta1_hat.values],
        "theta2_hat": ([round(v, 6) for v in fit.theta2_hat.values]
                       if fit.theta2_hat is not None else None),
        "loss_mean": fit.loss_mean, "loss_var": fit.loss_var,
        "converged": fit.converged, "evaluations": fit.evaluations,
    })
    return 0


def cmd_predict(args) -> int:
    seed = _resolve_seed(args)
    ss = as_seed_sequence(seed)
    spec, theta1, theta2 = resolve_model(args.model)
    series = _obtain_series(args, spec, theta1, theta2, ss)
    opts = _fit_options(args)
    h_max = int(args.horizon)
    if getattr(args, "order", None) is not None and int(args.order) != spec.order:
        raise ConfigError(f"--order {args.order} contradicts the model order "
                          f"{spec.order}")

    fit = fit_model(series, spec, opts, seed=derive(ss, 0))
    if args.residuals == "fitted":
        raw = fitted_residuals(series, spec, fit.theta1_hat, fit.theta2_hat)
    else:
        raw = predictive_residuals(series, spec, opts, seed=derive(ss, 1), fit=fit)
    prepared = prepare_innovation_residuals(raw, spec.heteroscedastic,
                                            seed=derive(ss, 2))
    ens = simulate_future(spec, fit.theta1_hat, series.last_lags(),
                          InnovationDistribution.empirical(prepared),
                          h_max, args.M, seed=derive(ss, 3),
                          theta2=fit.theta2_hat,
                          source=f"bootstrap-{args.residuals}")
    predictions = {
        "L2": {str(h): float(np.mean(ens.column(h))) for h in range(1, h_max + 1)},
        "L1": {str(h): float(np.median(ens.column(h))) for h in range(1, h_max + 1)},
    }
    intervals = {}
    for h in range(1, h_max + 1):
        iv = qpi(ens, args.alpha, h)
        intervals[str(h)] = {"lower": iv.lower, "upper": iv.upper}
    if args.residuals_out:
        with open(args.residuals_out, "w") as f:
            f.write("residual\n" + "\n".join(repr(float(v)) for v in prepared.values)
                    + "\n")
    if args.ensemble_out:
        np.savetxt(args.ensemble_out, ens.replicates, delimiter=",")
    _emit({
        "command": "predict", "model": spec.label, "T": series.T, "seed": seed,
        "residuals": args.residuals, "M": args.M, "alpha": args.alpha,
        "theta1_hat": [round(v, 6) for v in fit.theta1_hat.values],
        "theta2_hat": ([round(v, 6) for v in fit.theta2_hat.values]
                       if fit.theta2_hat is not None else None),
        "predictions": predictions, "qpi": intervals,
    })
    return 0


def cmd_interval(args) -> int:
    seed = _resolve_seed(args)
    spec, theta1, theta2 = resolve_model(args.model)
    series = _obtain_series(args, spec, theta1, theta2, as_seed_sequence(seed))
    loss = args.loss.upper()
    run = ppi_engine(series, spec, residual_kind=args.residuals, h=args.horizon,
                     M=args.M, K=args.K, opts=_fit_options(args), seed=seed,
                     losses=(loss,))
    roots = run.roots[loss][:, args.horizon - 1]
    iv = assemble_ppi(run.centers[loss][args.horizon - 1], roots, args.alpha, loss)
    if args.roots_out:
        with open(args.roots_out, "w") as f:
            f.write("root\n" + "\n".join(repr(float(v)) for v in roots) + "\n")
    _emit({
        "command": "interval", "model": spec.label, "T": series.T, "seed": seed,
        "method": f"{loss}-PPI-{'f' if args.residuals == 'fitted' else 'p'}",
        "horizon": args.horizon, "alpha": args.alpha, "M": args.M, "K": args.K,
        "center": iv.center, "lower": iv.lower, "upper": iv.upper,
        "q_low": iv.q_low, "q_high": iv.q_high, "level": iv.level,
        "roots_out": args.roots_out,
    })
    return 0


def cmd_experiment(args) -> int:
    seed = _resolve_seed(args)
    if not args.out:
        raise ConfigError("experiment needs --out for the metrics table")
    if args.T is None:
        raise ConfigError("experiment needs --T")
    methods = tuple(m.strip() for m in args.methods.split(",")) if args.methods \
        else ALL_METHODS
    horizons = tuple(range(1, int(args.horizon) + 1))
    cfg = ExperimentConfig(
        model=args.model, T=args.T, N=args.N, M=args.M, K=args.K,
        horizons=horizons, alpha=args.alpha, innovation=args.innovation,
        methods=methods, burn_in=args.burn_in, master_seed=seed,
        workers=args.workers, fit_options=_fit_options(args),
    )
    table, manifest_path = run_and_export(cfg, args.out)
    for (method, horizon) in sorted(table.rows):
        r = table.rows[(method, horizon)]
        cells = [f"{k}={v:.6f}" for k, v in
                 (("msd", r.msd), ("mspe", r.mspe), ("cvr", r.cvr), ("len", r.length))
                 if v is not None]
        print(f"{method} h={horizon}: " + " ".join(cells) + f" n={r.n_effective}")
    _emit({"command": "experiment", "table": str(args.out),
           "manifest": manifest_path, "seed": seed})
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sp, *, data=False, model=True, sim=False, fitflags=False):
    if model:
        sp.add_argument("--model", default=None,
                        help="zoo id (1..7, eq36) or model config file")
    if data:
        sp.add_argument("--data", default=None, help="single-column CSV of observations")
    if sim:
        sp.add_argument("--T", type=int, default=None, help="sample size when simulating")
        sp.add_argument("--burn-in", dest="burn_in", type=int, default=1000)
        sp.add_argument("--innovation", default="standard-normal",
                        help="standard-normal | chi-squared-centered:df | "
                             "chi-squared:df | point-mass:v")
    if fitflags:
        sp.add_argument("--multistarts", type=int, default=None)
        sp.add_argument("--max-evaluations", dest="max_evaluations", type=int, default=None)
        sp.add_argument("--tolerance", type=float, default=None)
    sp.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlarboot",
        description="Multi-step prediction inference for parametric non-linear "
                    "autoregressions: simulation/bootstrap point predictors, "
                    "quantile and pertinent prediction intervals, and the "
                    "replicated experiment harness.")
    parser.add_argument("--config", default=None,
                        help="flat YAML file mirroring the flags of the chosen command")
    sub = parser.add_subparsers(dest="command", required=True)
    parser._command_parsers = {}

    sp = sub.add_parser("simulate", help="simulate a path and write it as CSV")
    _add_common(sp, sim=True)
    sp.add_argument("--out", default=None, help="output CSV ('-' for stdout)")
    sp.set_defaults(func=cmd_simulate)
    parser._command_parsers["simulate"] = sp

    sp = sub.add_parser("fit", help="two-stage NLS fit")
    _add_common(sp, data=True, sim=True, fitflags=True)
    sp.set_defaults(func=cmd_fit)
    parser._command_parsers["fit"] = sp

    sp = sub.add_parser("predict", help="bootstrap point predictions and QPIs")
    _add_common(sp, data=True, sim=True, fitflags=True)
    sp.add_argument("--order", type=int, default=None,
                    help="declared series order (checked against the model)")
    sp.add_argument("--horizon", type=int, default=5)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--residuals", default="fitted", choices=["fitted", "predictive"])
    sp.add_argument("--M", type=int, default=1000)
    sp.add_argument("--residuals-out", dest="residuals_out", default=None,
                    help="optional single-column CSV of the prepared residuals")
    sp.add_argument("--ensemble-out", dest="ensemble_out", default=None,
                    help="optional CSV dump of the predictive ensemble (M x h)")
    sp.set_defaults(func=cmd_predict)
    parser._command_parsers["predict"] = sp

    sp = sub.add_parser("interval", help="pertinent prediction interval (PPI)")
    _add_common(sp, data=True, sim=True, fitflags=True)
    sp.add_argument("--horizon", type=int, default=1)
    sp.add_argument("--loss", default="L2", choices=["L1", "L2", "l1", "l2"])
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--residuals", default="fitted", choices=["fitted", "predictive"])
    sp.add_argument("--M", type=int, default=1000)
    sp.add_argument("--K", type=int, default=1000)
    sp.add_argument("--roots-out", dest="roots_out", default=None,
                    help="optional CSV dump of the bootstrap roots")
    sp.set_defaults(func=cmd_interval)
    parser._command_parsers["interval"] = sp

    sp = sub.add_parser("experiment", help="replicated experiment -> CSV + manifest")
    _add_common(sp, sim=True, fitflags=True)
    sp.add_argument("--N", type=int, default=500)
    sp.add_argument("--M", type=int, default=500)
    sp.add_argument("--K", type=int, default=250)
    sp.add_argument("--horizon", type=int, default=5)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--methods", default=None,
                    help=f"comma list from {', '.join(ALL_METHODS)}")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default=None, help="metrics table CSV path")
    sp.set_defaults(func=cmd_experiment)
    parser._command_parsers["experiment"] = sp
    return parser


def _apply_config_file(parser, args, argv):
    """Fill args from the --config YAML for flags not given on the line."""
    if not args.config:
        return args
    with open(args.config) as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must be a flat key-value mapping")
    given = {a.split("=")[0].lstrip("-").replace("-", "_")
             for a in argv if a.startswith("--")}
    for key, value in raw.items():
        attr = str(key).replace("-", "_")
        if attr in ("command", "config", "func"):
            continue
        if not hasattr(args, attr):
            raise ConfigError(f"config key {key!r} does not match any flag of "
                              f"command {args.command!r}")
        if attr in given:
            continue
        command_parser = parser._command_parsers[args.command]
        if getattr(args, attr) == command_parser.get_default(attr):
            setattr(args, attr, value)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(parser, args, argv)
        if getattr(args, "model", "") is None:
            raise ConfigError("--model is required (flag or config file)")
        if getattr(args, "T", None) is not None:
            args.T = int(args.T)
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # map to machine-readable error classes
        cls = _error_class(exc)
        sys.stderr.write(json.dumps({"error": cls, "message": str(exc)}) + "\n")
        return _EXIT_CODES[cls]


if __name__ == "__main__":
    sys.exit(main())
