"""Pertinent prediction intervals via the forward double-bootstrap.

Each of K replicates regenerates a full pseudo-series by resampling
residuals, refits the model on it, realigns the last p pseudo-values with
the observed data (forward bootstrap), generates a future pseudo-path with
the real-world estimate, and recomputes the point predictor inside the
replicate with the refitted parameters (double bootstrap).  The resulting
predictive roots ``X*_{T+h} - Xhat*_{T+h}`` yield equal-tailed interval
bounds around the real-world point predictor, capturing estimation noise
that a plain quantile interval misses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainViolation, ExplosionError, FitFailure
from .fitting import (DEFAULT_FIT_OPTIONS, FitOptions, FitResult, ResidualSet,
                      _fit_mean_arrays, _fit_variance_arrays, fit_model,
                      fitted_residuals, predictive_residuals,
                      prepare_innovation_residuals, DEGENERACY_FLOOR)
from .models import (EXPLOSION_LIMIT, InnovationDistribution, ModelSpec,
                     ParameterVector, TimeSeries, theta_values)
from .prediction import (PredictiveEnsemble, _iterate_paths, ceil_order_index,
                         point_predict, simulate_future)
from .rngkit import as_seed_sequence, derive, generator

#: Retry budget for abnormal bootstrap replicates.
MAX_REPLICATE_RETRIES = 10


@dataclass(frozen=True)
class BootstrapReplicate:
    """One double-bootstrap replicate (diagnostic record)."""

    pseudo_series: TimeSeries
    theta_star: ParameterVector
    future_value: float
    inner_prediction: float
    root: float


@dataclass(frozen=True)
class PertinentInterval:
    """Equal-tailed interval centered at the point predictor.

    Bounds are ``center + q(alpha/2)`` and ``center + q(1 - alpha/2)`` with
    q(.) the empirical quantiles of the K bootstrap predictive roots.
    """

    center: float
    lower: float
    upper: float
    level: float
    loss: str
    K: int
    q_low: float
    q_high: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise ConfigError("pertinent interval bounds out of order")

    @property
    def width(self) -> float:
        return self.upper - self.lower


def abnormality_limit(series: TimeSeries) -> float:
    """Threshold beyond which a pseudo-value or prediction is abnormal."""
    return 1e6 * (1.0 + float(np.max(np.abs(series.values))))


def _check_innovation_residuals(residuals: ResidualSet, heteroscedastic: bool):
    if not residuals.centered:
        raise DomainViolation("pseudo-series generation requires centered residuals")
    if heteroscedastic and not residuals.normalized:
        v = residuals.values
        sd = math.sqrt(float(v @ v) / v.size)
        if sd > DEGENERACY_FLOOR * (1.0 + float(np.max(np.abs(v)))):
            raise DomainViolation(
                "heteroscedastic pipelines need variance-normalized residuals")


# ---------------------------------------------------------------------------
# Pseudo-series generation
# ---------------------------------------------------------------------------

def generate_pseudo_series(series: TimeSeries, spec: ModelSpec, theta_hat,
                           residuals: ResidualSet, seed=None, theta2_hat=None,
                           limit: Optional[float] = None) -> TimeSeries:
    """One bootstrap pseudo-series X*_{-p+1..T}.

    The initial block is a length-p contiguous block of the observed series
    with uniformly drawn start (T + 1 admissible positions); the recursion
    then runs T steps with the fitted parameters and residual resampling.
    """
    _check_innovation_residuals(residuals, spec.heteroscedastic)
    rng = generator(seed)
    pos, idx = _pseudo_draws(rng, series.T, len(residuals))
    values = _pseudo_recursion_single(
        series, spec, theta_values(theta_hat),
        theta_values(theta2_hat) if theta2_hat is not None else None,
        residuals.values, pos, idx,
        limit if limit is not None else EXPLOSION_LIMIT)
    return TimeSeries(order=spec.order, values=values)


def _pseudo_draws(rng, T: int, n_resid: int):
    """Draw the start-block position and the T resampling indices, in order."""
    pos = int(rng.integers(0, T + 1))
    idx = rng.integers(0, n_resid, size=T)
    return pos, idx


def _pseudo_recursion_single(series, spec, th1, th2, resid_values, pos, idx, limit):
    p, T = spec.order, series.T
    buf = np.empty(p + T, dtype=float)
    buf[:p] = series.values[pos : pos + p]
    eps = resid_values[idx]
    for j in range(T):
        lags = buf[j : j + p][::-1]
        m = spec.mean_fn(lags, th1)
        x = float(m) + (float(spec.variance_fn(lags, th2)) * eps[j]
                        if th2 is not None else eps[j])
        if not math.isfinite(x) or abs(x) > limit:
            raise ExplosionError(j + 1, x, context="pseudo-series")
        buf[p + j] = x
    return buf


def _lag_matrix_from(values: np.ndarray, p: int, T: int) -> np.ndarray:
    return np.column_stack([values[p - 1 - j : p - 1 - j + T] for j in range(p)])


# ---------------------------------------------------------------------------
# Inner (double-bootstrap) prediction
# ---------------------------------------------------------------------------

def inner_predict(pseudo_series_aligned: TimeSeries, spec: ModelSpec, theta_star,
                  residuals_original: ResidualSet, h: int, M: int, loss: str,
                  seed=None, theta2_star=None) -> float:
    """Point predictor inside a replicate: refitted parameters, original
    residual distribution, conditioning on the (aligned) last p values."""
    ens = simulate_future(spec, theta_star, pseudo_series_aligned.last_lags(),
                          InnovationDistribution.empirical(residuals_original),
                          h, M, seed=seed, theta2=theta2_star,
                          source=f"bootstrap-{residuals_original.kind}")
    return point_predict(ens, loss).value


# ---------------------------------------------------------------------------
# The K-replicate root engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PpiRun:
    """Everything one forward double-bootstrap pass produces."""

    fit: FitResult
    residuals: ResidualSet
    ensemble: PredictiveEnsemble
    centers: dict
    roots: dict
    replicates: Optional[list]


def ppi_engine(series: TimeSeries, spec: ModelSpec, residual_kind: str = "fitted",
               h: int = 1, M: int = 1000, K: int = 1000,
               opts: FitOptions = None, seed=None,
               losses: Sequence[str] = ("L2",), smoothing_xi: float = 0.0,
               fit: Optional[FitResult] = None,
               prepared: Optional[ResidualSet] = None,
               want_replicates: bool = False,
               replicate_keys: Optional[Sequence[int]] = None) -> PpiRun:
    """Run the full double-bootstrap pass once, for all horizons 1..h and the
    requested losses; ``roots[loss]`` has shape (K, h).

    ``fit`` and ``prepared`` may be precomputed (the harness shares them
    across methods); the per-replicate streams are keyed by replicate index
    so results do not depend on scheduling, and abnormal replicates are
    redrawn with fresh derived streams up to :data:`MAX_REPLICATE_RETRIES`.
    """
    if K < 2:
        raise ConfigError("need K >= 2 bootstrap replicates")
    losses = tuple(str(l).upper() for l in losses)
    opts = opts or DEFAULT_FIT_OPTIONS
    ss = as_seed_sequence(seed)

    if fit is None:
        fit = fit_model(series, spec, opts, seed=derive(ss, 0))
    if prepared is None:
        if residual_kind == "fitted":
            raw = fitted_residuals(series, spec, fit.theta1_hat, fit.theta2_hat)
        elif residual_kind == "predictive":
            raw = predictive_residuals(series, spec, opts, seed=derive(ss, 1), fit=fit)
        else:
            raise ConfigError(f"residual_kind must be fitted|predictive, got {residual_kind!r}")
        prepared = prepare_innovation_residuals(raw, spec.heteroscedastic,
                                                smoothing_xi=smoothing_xi,
                                                seed=derive(ss, 2))
    _check_innovation_residuals(prepared, spec.heteroscedastic)

    th1 = fit.theta1_hat.values
    th2 = fit.theta2_hat.values if fit.theta2_hat is not None else None

    ens = simulate_future(spec, th1, series.last_lags(),
                          InnovationDistribution.empirical(prepared), h, M,
                          seed=derive(ss, 3), theta2=th2,
                          source=f"bootstrap-{prepared.kind}")
    centers = {}
    for loss in losses:
        agg = np.mean if loss == "L2" else np.median
        centers[loss] = agg(ens.replicates, axis=0)

    base = derive(ss, 4)
    keys = list(range(K)) if replicate_keys is None else [int(k) for k in replicate_keys]
    if len(keys) != K:
        raise ConfigError("replicate_keys must have length K")
    roots, replicates = _run_replicates(series, spec, th1, th2, prepared, h, M,
                                        opts, base, keys, losses, want_replicates)
    return PpiRun(fit=fit, residuals=prepared, ensemble=ens, centers=centers,
                  roots=roots, replicates=replicates)


def _run_replicates(series, spec, th1, th2, prepared, h, M, opts, base, keys,
                    losses, want_replicates):
    K = len(keys)
    p, T = spec.order, series.T
    limit = abnormality_limit(series)
    n_resid = len(prepared)
    refit_opts = replace(opts, max_evaluations=opts.refit_max_evaluations)

    # Attempt 0 for every replicate, with the pseudo-series recursion and the
    # future paths vectorized across replicates.  Each replicate consumes its
    # own derived streams, so the batch is draw-for-draw identical to running
    # the replicates one at a time.
    pos = np.empty(K, dtype=int)
    idx = np.empty((K, T), dtype=int)
    eps_fut = np.empty((K, h), dtype=float)
    for i, k in enumerate(keys):
        rk = derive(base, k, 0)
        pos[i], idx[i] = _pseudo_draws(generator(derive(rk, 0)), T, n_resid)
        eps_fut[i] = prepared.values[generator(derive(rk, 2)).integers(0, n_resid, size=h)]

    buf = np.empty((K, p + T), dtype=float)
    buf[:, :p] = series.values[pos[:, None] + np.arange(p)[None, :]]
    eps = prepared.values[idx]
    with np.errstate(all="ignore"):
        for j in range(T):
            lags = buf[:, j : j + p][:, ::-1]
            m = spec.mean_fn(lags, th1)
            x = m + (spec.variance_fn(lags, th2) * eps[:, j] if th2 is not None
                     else eps[:, j])
            buf[:, p + j] = x
    with np.errstate(invalid="ignore"):
        ok_series = np.all(np.isfinite(buf), axis=1) & (np.max(np.abs(buf), axis=1) <= limit)

    obs_lags = series.last_lags()
    fut = np.full((K, h), np.nan)
    cur = np.broadcast_to(obs_lags, (K, p)).copy()
    with np.errstate(all="ignore"):
        for j in range(h):
            m = spec.mean_fn(cur, th1)
            x = m + (spec.variance_fn(cur, th2) * eps_fut[:, j] if th2 is not None
                     else eps_fut[:, j])
            fut[:, j] = x
            cur = np.column_stack((x, cur[:, : p - 1])) if p > 1 else x[:, None]
    with np.errstate(invalid="ignore"):
        ok_fut = np.all(np.isfinite(fut), axis=1) & (np.max(np.abs(fut), axis=1) <= limit)

    roots = {loss: np.empty((K, h)) for loss in losses}
    replicates = [] if want_replicates else None
    for i, k in enumerate(keys):
        result = None
        if ok_series[i] and ok_fut[i]:
            result = _finish_replicate(series, spec, th1, th2, prepared, h, M,
                                       refit_opts, derive(base, k, 0),
                                       buf[i].copy(), fut[i], limit, losses,
                                       want_replicates)
        attempt = 1
        while result is None:
            if attempt > MAX_REPLICATE_RETRIES:
                raise FitFailure(
                    f"bootstrap replicate {k} still abnormal after "
                    f"{MAX_REPLICATE_RETRIES} retries")
            result = _single_replicate(series, spec, th1, th2, prepared, h, M,
                                       refit_opts, derive(base, k, attempt),
                                       limit, losses, want_replicates)
            attempt += 1
        for loss in losses:
            roots[loss][i] = result[0][loss]
        if want_replicates:
            replicates.append(result[1])
    return roots, replicates


def _single_replicate(series, spec, th1, th2, prepared, h, M, refit_opts, rk,
                      limit, losses, want_replicates):
    """One replicate end to end on its own streams; None if abnormal."""
    p, T = spec.order, series.T
    n_resid = len(prepared)
    try:
        rng = generator(derive(rk, 0))
        pos, idx = _pseudo_draws(rng, T, n_resid)
        pseudo = _pseudo_recursion_single(series, spec, th1, th2,
                                          prepared.values, pos, idx, limit)
        eps_fut = prepared.values[generator(derive(rk, 2)).integers(0, n_resid, size=h)]
        lags = series.last_lags()
        fut = np.empty(h)
        for j in range(h):
            m = spec.mean_fn(lags, th1)
            x = float(m) + (float(spec.variance_fn(lags, th2)) * eps_fut[j]
                            if th2 is not None else eps_fut[j])
            if not math.isfinite(x) or abs(x) > limit:
                raise ExplosionError(j + 1, x, context="future pseudo-path")
            fut[j] = x
            lags = np.concatenate(([x], lags[:-1])) if p > 1 else np.array([x])
        return _finish_replicate(series, spec, th1, th2, prepared, h, M,
                                 refit_opts, rk, pseudo, fut, limit, losses,
                                 want_replicates)
    except ExplosionError:
        return None


def _finish_replicate(series, spec, th1, th2, prepared, h, M, refit_opts, rk,
                      pseudo_raw, fut, limit, losses, want_replicates):
    """Refit on the raw pseudo-series, then align, run the inner ensemble and
    build the roots.  Returns ``(roots_by_loss, replicate_record)`` or None
    when abnormal.  The refit sees the series as generated; the last p values
    are overwritten with the observed ones only afterwards, so the inner
    ensemble conditions on the real data.
    """
    p, T = spec.order, series.T
    y = pseudo_raw[p:]
    lagmat = _lag_matrix_from(pseudo_raw, p, T)
    try:
        rng = generator(derive(rk, 1)) if refit_opts.refit_multistart else None
        th1_star, _, _, _ = _fit_mean_arrays(y, lagmat, spec, refit_opts,
                                             rng=rng, warm=th1, warm_clip_ols=True)
        th2_star = None
        if spec.heteroscedastic:
            r = y - spec.mean_fn(lagmat, th1_star)
            th2_star, _, _, _ = _fit_variance_arrays(r, lagmat, spec, refit_opts,
                                                     rng=rng, warm=th2)
        eps_in = prepared.values[
            generator(derive(rk, 3)).integers(0, len(prepared), size=(M, h))]
        paths = _iterate_paths(spec, th1_star, th2_star, series.values[-p:][::-1],
                               eps_in, limit)
    except (ExplosionError, np.linalg.LinAlgError):
        return None

    out = {}
    for loss in losses:
        inner = (np.mean(paths, axis=0) if loss == "L2"
                 else np.median(paths, axis=0))
        if np.max(np.abs(inner)) > limit:
            return None
        out[loss] = fut - inner

    record = None
    if want_replicates:
        aligned = pseudo_raw.copy()
        aligned[-p:] = series.values[-p:]
        loss0 = losses[0]
        inner0 = float((np.mean if loss0 == "L2" else np.median)(paths[:, h - 1]))
        record = BootstrapReplicate(
            pseudo_series=TimeSeries(order=p, values=aligned),
            theta_star=ParameterVector(th1_star, spec.theta1_domain),
            future_value=float(fut[h - 1]),
            inner_prediction=inner0,
            root=float(fut[h - 1]) - inner0,
        )
    return out, record


# ---------------------------------------------------------------------------
# Public interval construction
# ---------------------------------------------------------------------------

def root_quantile(roots: np.ndarray, beta: float) -> float:
    """Empirical beta-quantile of the roots (ceiling order statistic)."""
    r = np.sort(np.asarray(roots, dtype=float).ravel())
    return float(r[ceil_order_index(beta, r.size) - 1])


def ppi(series: TimeSeries, spec: ModelSpec, residual_kind: str = "fitted",
        h: int = 1, alpha: float = 0.05, loss: str = "L2", M: int = 1000,
        K: int = 1000, opts: FitOptions = None, seed=None,
        smoothing_xi: float = 0.0) -> PertinentInterval:
    """Pertinent prediction interval for X_{T+h} by forward double-bootstrap."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must be in (0, 1)")
    loss = str(loss).upper()
    run = ppi_engine(series, spec, residual_kind=residual_kind, h=h, M=M, K=K,
                     opts=opts, seed=seed, losses=(loss,), smoothing_xi=smoothing_xi)
    return assemble_ppi(run.centers[loss][h - 1], run.roots[loss][:, h - 1],
                        alpha, loss)


def assemble_ppi(center: float, roots: np.ndarray, alpha: float,
                 loss: str) -> PertinentInterval:
    q_low = root_quantile(roots, alpha / 2.0)
    q_high = root_quantile(roots, 1.0 - alpha / 2.0)
    return PertinentInterval(center=float(center), lower=float(center) + q_low,
                             upper=float(center) + q_high, level=1.0 - alpha,
                             loss=loss, K=int(np.asarray(roots).size),
                             q_low=q_low, q_high=q_high)
