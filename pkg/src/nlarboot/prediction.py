"""Predictive ensembles, optimal point predictors and quantile intervals.

The h-step-ahead conditional law of the future value is approximated by
iterating the model recursion forward M times with sampled innovations,
conditioning every path on the observed last p values.  With the true
parameters and innovation law this is plain Monte-Carlo simulation; with
fitted parameters and the empirical residual distribution it becomes the
forward bootstrap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainViolation, ExplosionError
from .fitting import (DEFAULT_FIT_OPTIONS, FitOptions, FitResult, ResidualSet,
                      fit_model, fitted_residuals, predictive_residuals,
                      prepare_innovation_residuals)
from .models import (EXPLOSION_LIMIT, InnovationDistribution, ModelSpec,
                     TimeSeries, theta_values)
from .rngkit import as_seed_sequence, derive, generator


@dataclass(frozen=True)
class PredictiveEnsemble:
    """M simulated future paths X_{T+1..T+h} given the last p observations."""

    horizon: int
    replicates: np.ndarray
    conditioning_lags: np.ndarray
    source: str

    def __post_init__(self):
        r = np.asarray(self.replicates, dtype=float)
        if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] != self.horizon:
            raise ConfigError("replicates must be an (M, horizon) matrix with M >= 1")
        if not np.all(np.isfinite(r)):
            raise ConfigError("ensemble contains non-finite values")
        object.__setattr__(self, "replicates", r)
        object.__setattr__(self, "conditioning_lags",
                           np.asarray(self.conditioning_lags, dtype=float))

    @property
    def M(self) -> int:
        return self.replicates.shape[0]

    def column(self, horizon: Optional[int] = None) -> np.ndarray:
        """The M simulated values of X_{T+horizon} (defaults to the last step)."""
        h = self.horizon if horizon is None else int(horizon)
        if not 1 <= h <= self.horizon:
            raise ConfigError(f"horizon {h} outside 1..{self.horizon}")
        return self.replicates[:, h - 1]


@dataclass(frozen=True)
class PointPrediction:
    value: float
    loss: str
    horizon: int


@dataclass(frozen=True)
class QuantileInterval:
    lower: float
    upper: float
    level: float
    horizon: int

    def __post_init__(self):
        if self.lower > self.upper:
            raise ConfigError("interval bounds out of order")

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _norm_loss(loss: str) -> str:
    up = str(loss).upper()
    if up not in ("L1", "L2"):
        raise ConfigError(f"loss must be L1 or L2, got {loss!r}")
    return up


def ceil_order_index(beta: float, n: int) -> int:
    """1-based order-statistic index ceil(beta * n), clamped to [1, n]."""
    idx = math.ceil(beta * n - 1e-9)
    return min(max(idx, 1), n)


# ---------------------------------------------------------------------------
# Forward simulation
# ---------------------------------------------------------------------------

def simulate_future(spec: ModelSpec, theta1, lags, innov: InnovationDistribution,
                    h: int, M: int, seed=None, theta2=None,
                    source: str = "oracle") -> PredictiveEnsemble:
    """Iterate the recursion h steps forward, M times, from the given lags.

    Each of the M rows draws h innovations i.i.d. from ``innov`` (h*M draws
    in total) and applies ``X_{T+k} = phi(lags_k) + sigma(lags_k) * eps_k``,
    shifting the lag window at every step.
    """
    if h < 1 or M < 1:
        raise ConfigError("need h >= 1 and M >= 1")
    p = spec.order
    lags = np.asarray(lags, dtype=float)
    if lags.shape != (p,):
        raise DomainViolation(f"expected conditioning lags of length {p}")
    th1 = theta_values(theta1)
    th2 = theta_values(theta2) if theta2 is not None else None
    if spec.heteroscedastic and th2 is None:
        raise DomainViolation("heteroscedastic model needs theta2")

    rng = generator(seed)
    eps = innov.sample((M, h), rng)
    paths = _iterate_paths(spec, th1, th2, lags, eps, EXPLOSION_LIMIT)
    return PredictiveEnsemble(horizon=h, replicates=paths,
                              conditioning_lags=lags.copy(), source=source)


def _iterate_paths(spec: ModelSpec, th1, th2, lags, eps, limit: float) -> np.ndarray:
    """Iterate the recursion over an (M, h) innovation block; guard at ``limit``."""
    M, h = eps.shape
    p = spec.order
    paths = np.empty((M, h), dtype=float)
    cur = np.broadcast_to(np.asarray(lags, dtype=float), (M, p)).copy()
    for k in range(h):
        m = spec.mean_fn(cur, th1)
        if th2 is not None:
            x = m + spec.variance_fn(cur, th2) * eps[:, k]
        else:
            x = m + eps[:, k]
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > limit:
            finite = np.isfinite(x)
            bad = x[~finite][0] if not finite.all() else x[np.argmax(np.abs(x))]
            raise ExplosionError(k + 1, float(bad), context="future simulation")
        paths[:, k] = x
        if p > 1:
            cur = np.column_stack((x, cur[:, : p - 1]))
        else:
            cur = x[:, None]
    return paths


# ---------------------------------------------------------------------------
# Point predictors and quantile intervals
# ---------------------------------------------------------------------------

def point_predict(ens: PredictiveEnsemble, loss: str,
                  horizon: Optional[int] = None) -> PointPrediction:
    """L2-optimal (column mean) or L1-optimal (column median) predictor."""
    loss = _norm_loss(loss)
    col = ens.column(horizon)
    value = float(np.mean(col)) if loss == "L2" else float(np.median(col))
    return PointPrediction(value=value, loss=loss,
                           horizon=ens.horizon if horizon is None else int(horizon))


def qpi(ens: PredictiveEnsemble, alpha: float,
        horizon: Optional[int] = None) -> QuantileInterval:
    """Quantile prediction interval from the ensemble order statistics.

    Bounds are the order statistics at (1-based) indices ceil((alpha/2) M)
    and ceil((1 - alpha/2) M), clamped to [1, M]; both bounds are actual
    simulated values.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must be in (0, 1)")
    if ens.M < 2:
        raise ConfigError("QPI needs an ensemble with M >= 2")
    col = np.sort(ens.column(horizon))
    lo = col[ceil_order_index(alpha / 2.0, ens.M) - 1]
    hi = col[ceil_order_index(1.0 - alpha / 2.0, ens.M) - 1]
    return QuantileInterval(lower=float(lo), upper=float(hi), level=1.0 - alpha,
                            horizon=ens.horizon if horizon is None else int(horizon))


# ---------------------------------------------------------------------------
# End-to-end predictors
# ---------------------------------------------------------------------------

def oracle_predict(spec: ModelSpec, theta1, series: TimeSeries,
                   innov_true: InnovationDistribution, h: int, M: int,
                   loss: str = "L2", alpha: float = 0.05, seed=None,
                   theta2=None):
    """Simulation-based prediction with the true model and innovation law."""
    ens = simulate_future(spec, theta1, series.last_lags(), innov_true, h, M,
                          seed=seed, theta2=theta2, source="oracle")
    return point_predict(ens, loss), qpi(ens, alpha)


def bootstrap_predict(series: TimeSeries, spec: ModelSpec,
                      residual_kind: str = "fitted", h: int = 1, M: int = 1000,
                      loss: str = "L2", alpha: float = 0.05,
                      opts: FitOptions = None, seed=None,
                      smoothing_xi: float = 0.0):
    """Forward-bootstrap prediction with an estimated model.

    Fits the model (two stages when heteroscedastic), builds centered (and,
    when heteroscedastic, variance-normalized) residuals of the requested
    kind, and simulates the future with the fitted parameters and the
    empirical residual distribution.  Returns
    ``(FitResult, ResidualSet, PointPrediction, QuantileInterval)``.
    """
    if residual_kind not in ("fitted", "predictive"):
        raise ConfigError(f"residual_kind must be fitted|predictive, got {residual_kind!r}")
    opts = opts or DEFAULT_FIT_OPTIONS
    ss = as_seed_sequence(seed)

    fit = fit_model(series, spec, opts, seed=derive(ss, 0))
    if residual_kind == "fitted":
        raw = fitted_residuals(series, spec, fit.theta1_hat, fit.theta2_hat)
    else:
        raw = predictive_residuals(series, spec, opts, seed=derive(ss, 1), fit=fit)
    prepared = prepare_innovation_residuals(raw, spec.heteroscedastic,
                                            smoothing_xi=smoothing_xi,
                                            seed=derive(ss, 2))
    innov = InnovationDistribution.empirical(prepared)
    ens = simulate_future(spec, fit.theta1_hat, series.last_lags(), innov, h, M,
                          seed=derive(ss, 3), theta2=fit.theta2_hat,
                          source=f"bootstrap-{residual_kind}")
    return fit, prepared, point_predict(ens, loss), qpi(ens, alpha)
