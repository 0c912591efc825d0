"""Replicated prediction experiments: MSD, MSPE, CVR and LEN tables.

Each replication simulates a fresh path plus its true continuation from one
derived stream, runs every requested method on it, and records point
predictions and interval bounds per horizon.  Metrics:

- MSD: mean squared difference between same-loss simulation and bootstrap
  point predictions, paired within replications (reported on the Boot rows);
- MSPE: mean squared prediction error against the true future value;
- CVR / LEN: empirical coverage and mean width of interval methods.

Replications fan out over a process pool; every stream is keyed by
(master seed, replication, attempt, role), so tables are byte-identical
across worker counts.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import (ConfigError, DegenerateSeriesError, DomainViolation,
                     ExplosionError, FitFailure)
from .fitting import (FitOptions, fit_model, fitted_residuals,
                      predictive_residuals, prepare_innovation_residuals)
from .intervals import ppi_engine, assemble_ppi
from .models import (EXPLOSION_LIMIT, InnovationDistribution, ModelSpec,
                     TimeSeries, simulate_path, theta_values)
from .modelconfig import resolve_model
from .prediction import qpi, simulate_future
from .rngkit import as_seed_sequence, derive

POINT_METHODS = ("L2-Sim", "L1-Sim", "L2-Boot", "L1-Boot", "TrueNaive", "EstNaive")
INTERVAL_METHODS = ("SPI", "QPI-f", "QPI-p",
                    "L2-PPI-f", "L2-PPI-p", "L1-PPI-f", "L1-PPI-p")
ALL_METHODS = INTERVAL_METHODS + POINT_METHODS

#: Pairing used for the MSD metric: bootstrap method -> simulation method.
_MSD_PAIRS = {"L2-Boot": "L2-Sim", "L1-Boot": "L1-Sim"}

_MAX_REPLICATION_RETRIES = 10

# Stream roles within one replication attempt.
_R_PATH, _R_ORACLE, _R_FIT, _R_PREDRES, _R_BOOT_F, _R_BOOT_P, _R_PPI_F, _R_PPI_P, \
    _R_SMOOTH_F, _R_SMOOTH_P = range(10)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one replicated experiment (desk-scale defaults)."""

    model: str
    T: int
    N: int = 500
    M: int = 500
    K: int = 250
    horizons: tuple = (1, 2, 3, 4, 5)
    alpha: float = 0.05
    innovation: str = "standard-normal"
    methods: tuple = ALL_METHODS
    burn_in: int = 1000
    master_seed: int = 0
    workers: int = 1
    fit_options: FitOptions = field(default_factory=FitOptions)
    smoothing_xi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "model", str(self.model))
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.N < 1:
            raise ConfigError("need N >= 1 replications")
        if not self.horizons or min(self.horizons) < 1:
            raise ConfigError("horizons must be a non-empty list of positive steps")
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {ALL_METHODS}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1)")
        InnovationDistribution.parse(self.innovation)  # fail fast

    def to_dict(self) -> dict:
        d = asdict(self)
        d["horizons"] = list(self.horizons)
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if isinstance(d.get("fit_options"), dict):
            d["fit_options"] = FitOptions(**d["fit_options"])
        return cls(**d)


@dataclass(frozen=True)
class MetricsRow:
    msd: Optional[float] = None
    mspe: Optional[float] = None
    cvr: Optional[float] = None
    length: Optional[float] = None
    n_effective: int = 0


@dataclass
class MetricsTable:
    """Rows keyed by (method, horizon)."""

    rows: dict

    def get(self, method: str, horizon: int) -> MetricsRow:
        return self.rows[(method, int(horizon))]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "horizon", "msd", "mspe", "cvr", "len", "n_effective"])
        for (method, horizon) in sorted(self.rows):
            r = self.rows[(method, horizon)]
            w.writerow([
                method, horizon,
                _fmt(r.msd), _fmt(r.mspe), _fmt(r.cvr), _fmt(r.length),
                r.n_effective,
            ])
        return buf.getvalue()


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def export_table(table: MetricsTable, path) -> None:
    """Write the metrics table as CSV (fixed 6-decimal formatting)."""
    with open(path, "w") as f:
        f.write(table.to_csv_text())


def load_table(path) -> MetricsTable:
    """Parse a CSV written by :func:`export_table`."""
    rows = {}
    with open(path) as f:
        reader = csv.DictReader(f)
        for rec in reader:
            key = (rec["method"], int(rec["horizon"]))
            rows[key] = MetricsRow(
                msd=float(rec["msd"]) if rec["msd"] else None,
                mspe=float(rec["mspe"]) if rec["mspe"] else None,
                cvr=float(rec["cvr"]) if rec["cvr"] else None,
                length=float(rec["len"]) if rec["len"] else None,
                n_effective=int(rec["n_effective"]),
            )
    return MetricsTable(rows=rows)


# ---------------------------------------------------------------------------
# Naive iterated prediction
# ---------------------------------------------------------------------------

def _naive_path(spec: ModelSpec, theta, lags, h: int) -> np.ndarray:
    th = theta_values(theta)
    lags = np.asarray(lags, dtype=float).copy()
    out = np.empty(h)
    for k in range(h):
        x = float(spec.mean_fn(lags, th))
        if not math.isfinite(x) or abs(x) > EXPLOSION_LIMIT:
            raise ExplosionError(k + 1, x, context="naive iteration")
        out[k] = x
        lags = np.concatenate(([x], lags[:-1])) if spec.order > 1 else np.array([x])
    return out


def naive_predict(spec: ModelSpec, theta, lags, h: int) -> float:
    """Iterate the mean function h steps with no innovation term."""
    if h < 1:
        raise ConfigError("need h >= 1")
    return float(_naive_path(spec, theta, lags, h)[h - 1])


# ---------------------------------------------------------------------------
# One replication
# ---------------------------------------------------------------------------

def _needs(cfg, *names) -> bool:
    return any(m in cfg.methods for m in names)


def _interval_rows(ens, alpha, horizons) -> np.ndarray:
    rows = []
    for h in horizons:
        iv = qpi(ens, alpha, h)
        rows.append([iv.lower, iv.upper])
    return np.array(rows)


def _replicate_once(spec, theta1, theta2, innov, cfg: ExperimentConfig, base):
    """All requested methods on one fresh path; returns per-method records."""
    H = cfg.horizons
    h_max = max(H)
    hidx = np.asarray(H, dtype=int) - 1
    th1, th2 = theta_values(theta1), (theta_values(theta2) if theta2 is not None else None)

    full = simulate_path(spec, th1, innov, cfg.T + h_max, burn_in=cfg.burn_in,
                         seed=derive(base, _R_PATH), theta2=th2)
    series = TimeSeries(order=spec.order, values=full.values[: cfg.T + spec.order])
    truth = full.values[cfg.T + spec.order:][hidx]

    points, bounds = {}, {}

    if _needs(cfg, "SPI", "L2-Sim", "L1-Sim"):
        ens = simulate_future(spec, th1, series.last_lags(), innov, h_max, cfg.M,
                              seed=derive(base, _R_ORACLE), theta2=th2, source="oracle")
        if "L2-Sim" in cfg.methods:
            points["L2-Sim"] = np.mean(ens.replicates, axis=0)[hidx]
        if "L1-Sim" in cfg.methods:
            points["L1-Sim"] = np.median(ens.replicates, axis=0)[hidx]
        if "SPI" in cfg.methods:
            bounds["SPI"] = _interval_rows(ens, cfg.alpha, H)

    if "TrueNaive" in cfg.methods:
        points["TrueNaive"] = _naive_path(spec, th1, series.last_lags(), h_max)[hidx]

    fit = None
    if _needs(cfg, "QPI-f", "QPI-p", "L2-Boot", "L1-Boot", "EstNaive",
              "L2-PPI-f", "L2-PPI-p", "L1-PPI-f", "L1-PPI-p"):
        fit = fit_model(series, spec, cfg.fit_options, seed=derive(base, _R_FIT))

    if "EstNaive" in cfg.methods:
        points["EstNaive"] = _naive_path(spec, fit.theta1_hat, series.last_lags(),
                                         h_max)[hidx]

    prepared_f = prepared_p = None
    if _needs(cfg, "QPI-f", "L2-Boot", "L1-Boot", "L2-PPI-f", "L1-PPI-f"):
        raw = fitted_residuals(series, spec, fit.theta1_hat, fit.theta2_hat)
        prepared_f = prepare_innovation_residuals(
            raw, spec.heteroscedastic, smoothing_xi=cfg.smoothing_xi,
            seed=derive(base, _R_SMOOTH_F))
    if _needs(cfg, "QPI-p", "L2-PPI-p", "L1-PPI-p"):
        raw = predictive_residuals(series, spec, cfg.fit_options,
                                   seed=derive(base, _R_PREDRES), fit=fit)
        prepared_p = prepare_innovation_residuals(
            raw, spec.heteroscedastic, smoothing_xi=cfg.smoothing_xi,
            seed=derive(base, _R_SMOOTH_P))

    if _needs(cfg, "QPI-f", "L2-Boot", "L1-Boot"):
        ens = simulate_future(spec, fit.theta1_hat, series.last_lags(),
                              InnovationDistribution.empirical(prepared_f),
                              h_max, cfg.M, seed=derive(base, _R_BOOT_F),
                              theta2=fit.theta2_hat, source="bootstrap-fitted")
        if "L2-Boot" in cfg.methods:
            points["L2-Boot"] = np.mean(ens.replicates, axis=0)[hidx]
        if "L1-Boot" in cfg.methods:
            points["L1-Boot"] = np.median(ens.replicates, axis=0)[hidx]
        if "QPI-f" in cfg.methods:
            bounds["QPI-f"] = _interval_rows(ens, cfg.alpha, H)

    if "QPI-p" in cfg.methods:
        ens = simulate_future(spec, fit.theta1_hat, series.last_lags(),
                              InnovationDistribution.empirical(prepared_p),
                              h_max, cfg.M, seed=derive(base, _R_BOOT_P),
                              theta2=fit.theta2_hat, source="bootstrap-predictive")
        bounds["QPI-p"] = _interval_rows(ens, cfg.alpha, H)

    for kind, role, prepared in (("f", _R_PPI_F, prepared_f), ("p", _R_PPI_P, prepared_p)):
        wanted = [loss for loss in ("L2", "L1") if f"{loss}-PPI-{kind}" in cfg.methods]
        if not wanted:
            continue
        run = ppi_engine(series, spec, residual_kind="fitted" if kind == "f" else "predictive",
                         h=h_max, M=cfg.M, K=cfg.K, opts=cfg.fit_options,
                         seed=derive(base, role), losses=tuple(wanted),
                         fit=fit, prepared=prepared)
        for loss in wanted:
            rows = []
            for h in H:
                iv = assemble_ppi(run.centers[loss][h - 1],
                                  run.roots[loss][:, h - 1], cfg.alpha, loss)
                rows.append([iv.lower, iv.upper])
            bounds[f"{loss}-PPI-{kind}"] = np.array(rows)

    return {"truth": truth, "points": points, "bounds": bounds}


def _replicate(spec, theta1, theta2, innov, cfg: ExperimentConfig, n: int):
    root = as_seed_sequence(cfg.master_seed)
    for attempt in range(_MAX_REPLICATION_RETRIES + 1):
        base = derive(root, n, attempt)
        try:
            return _replicate_once(spec, theta1, theta2, innov, cfg, base)
        except (FitFailure, ExplosionError, DegenerateSeriesError, DomainViolation):
            continue
    return None


# ---------------------------------------------------------------------------
# Fan-out and aggregation
# ---------------------------------------------------------------------------

_WORKER_STATE: dict = {}


def _init_worker(cfg_dict):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    spec, theta1, theta2 = resolve_model(cfg.model)
    _WORKER_STATE.update(cfg=cfg, spec=spec, theta1=theta1, theta2=theta2,
                         innov=InnovationDistribution.parse(cfg.innovation))


def _run_one(n: int):
    s = _WORKER_STATE
    return _replicate(s["spec"], s["theta1"], s["theta2"], s["innov"], s["cfg"], n)


def run_experiment(cfg: ExperimentConfig) -> MetricsTable:
    """Run all replications and reduce them into a metrics table.

    Identical configs (including master_seed) produce byte-identical CSV
    exports for any worker count: every replication derives its own streams
    and the reduction is a fixed-order pass over an index-aligned array.
    """
    if cfg.workers > 1:
        import multiprocessing as mp

        with mp.Pool(cfg.workers, initializer=_init_worker,
                     initargs=(cfg.to_dict(),)) as pool:
            results = pool.map(_run_one, range(cfg.N),
                               chunksize=max(1, cfg.N // (cfg.workers * 8)))
    else:
        _init_worker(cfg.to_dict())
        results = [_run_one(n) for n in range(cfg.N)]
    return _aggregate(cfg, results)


def run_point_experiment(cfg: ExperimentConfig) -> MetricsTable:
    """Experiment restricted contractually to point-prediction metrics."""
    if not _needs(cfg, *POINT_METHODS):
        raise ConfigError("run_point_experiment needs at least one point method")
    return run_experiment(cfg)


def run_coverage_experiment(cfg: ExperimentConfig) -> MetricsTable:
    """Experiment restricted contractually to interval metrics."""
    if not _needs(cfg, *INTERVAL_METHODS):
        raise ConfigError("run_coverage_experiment needs at least one interval method")
    return run_experiment(cfg)


def _aggregate(cfg: ExperimentConfig, results) -> MetricsTable:
    H = cfg.horizons
    nH = len(H)
    point_methods = [m for m in cfg.methods if m in POINT_METHODS]
    interval_methods = [m for m in cfg.methods if m in INTERVAL_METHODS]

    truth = np.full((cfg.N, nH), np.nan)
    points = {m: np.full((cfg.N, nH), np.nan) for m in point_methods}
    lows = {m: np.full((cfg.N, nH), np.nan) for m in interval_methods}
    highs = {m: np.full((cfg.N, nH), np.nan) for m in interval_methods}
    done = np.zeros(cfg.N, dtype=bool)

    for n, rec in enumerate(results):
        if rec is None:
            continue
        done[n] = True
        truth[n] = rec["truth"]
        for m in point_methods:
            points[m][n] = rec["points"][m]
        for m in interval_methods:
            lows[m][n] = rec["bounds"][m][:, 0]
            highs[m][n] = rec["bounds"][m][:, 1]

    n_eff = int(done.sum())
    rows = {}
    for m in point_methods:
        mspe = msd = None
        if n_eff:
            mspe = np.nanmean((truth - points[m]) ** 2, axis=0)
            pair = _MSD_PAIRS.get(m)
            if pair in points:
                msd = np.nanmean((points[pair] - points[m]) ** 2, axis=0)
        for j, h in enumerate(H):
            rows[(m, h)] = MetricsRow(
                msd=float(msd[j]) if msd is not None else None,
                mspe=float(mspe[j]) if mspe is not None else None,
                n_effective=n_eff)
    for m in interval_methods:
        cvr = length = None
        if n_eff:
            with np.errstate(invalid="ignore"):
                covered = (truth >= lows[m]) & (truth <= highs[m])
                cvr = np.nanmean(np.where(done[:, None], covered, np.nan), axis=0)
                length = np.nanmean(highs[m] - lows[m], axis=0)
        for j, h in enumerate(H):
            rows[(m, h)] = MetricsRow(
                cvr=float(cvr[j]) if cvr is not None else None,
                length=float(length[j]) if length is not None else None,
                n_effective=n_eff)
    return MetricsTable(rows=rows)


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

def run_and_export(cfg: ExperimentConfig, table_path) -> tuple:
    """Run the experiment, write the CSV table and a JSON manifest beside it.

    The manifest echoes the full config (a rerun from the manifest alone
    reproduces the table byte for byte) plus wall clock and n_effective.
    """
    t0 = time.perf_counter()
    table = run_experiment(cfg)
    wall = time.perf_counter() - t0
    export_table(table, table_path)
    n_eff = min((r.n_effective for r in table.rows.values()), default=0)
    manifest = {
        "config": cfg.to_dict(),
        "table": str(table_path),
        "wall_clock_seconds": wall,
        "n_effective": n_eff,
    }
    manifest_path = str(table_path) + ".manifest.json"
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return table, manifest_path
