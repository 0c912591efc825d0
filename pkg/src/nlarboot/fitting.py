"""Two-stage non-linear least-squares estimation and residual machinery.

Stage 1 minimizes the mean empirical loss
``L_T(t) = (1/T) sum_t (X_t - phi(lags_t, t))^2`` over the theta1 box; stage 2
(heteroscedastic models only) minimizes
``K_T(v) = | (1/T) sum_t ((X_t - phi(lags_t, theta1_hat)) / sigma(lags_t, v))^2 - 1 |``
over the theta2 box, with theta1_hat held fixed.

The search engine is a derivative-free multistart (uniform starts in the
domain box, Nelder-Mead per start, best final loss wins) followed by a
damped Gauss-Newton polish.  Models that declare a design matrix are solved
exactly by least squares; scale-family variance functions are solved in
closed form.  Warm-started refits (leave-one-out residuals, bootstrap
replicates) skip the multistart.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, DegenerateSeriesError, DomainViolation, FitFailure
from .models import Box, ModelSpec, ParameterVector, TimeSeries, theta_values
from .rngkit import as_seed_sequence, derive, generator

#: Residual spread below this (relative to the data scale) is treated as a
#: point mass; normalization is skipped to avoid blowing up optimizer noise.
DEGENERACY_FLOOR = 1e-8


@dataclass(frozen=True)
class FitOptions:
    """Knobs for the NLS search engine."""

    multistarts: int = 8
    max_evaluations: int = 2000
    tolerance: float = 1e-8
    refit_max_evaluations: int = 500
    refit_multistart: bool = False
    polish: bool = True


DEFAULT_FIT_OPTIONS = FitOptions()


@dataclass(frozen=True)
class FitResult:
    """Fitted parameters with final losses and search diagnostics."""

    theta1_hat: ParameterVector
    theta2_hat: Optional[ParameterVector]
    loss_mean: float
    loss_var: Optional[float]
    converged: bool
    evaluations: int


# ---------------------------------------------------------------------------
# Search engines
# ---------------------------------------------------------------------------

def _nelder_mead(loss_fn, x0, box: Box, max_evals: int, tol: float):
    res = minimize(
        loss_fn, x0, method="Nelder-Mead",
        bounds=list(zip(box.lower, box.upper)),
        options={"xatol": tol, "fatol": np.inf, "maxfev": max_evals, "maxiter": max_evals},
    )
    return box.clip(res.x), float(res.fun), int(res.nfev)


def _fd_jacobian(resid_fn, th, r0):
    k = th.size
    J = np.empty((r0.size, k))
    for j in range(k):
        step = 1e-7 * (1.0 + abs(th[j]))
        tp = th.copy()
        tp[j] += step
        J[:, j] = (resid_fn(tp) - r0) / step
    return J


def _lm(resid_fn, jac_fn, x0, box: Box, max_iter: int = 50, xtol: float = 1e-12,
        ftol: float = 1e-13):
    """Damped Gauss-Newton on sum-of-squares with active-set box handling.

    Coordinates sitting on a bound with the descent direction pointing
    outward are dropped from the solve, so a pinned parameter does not
    poison the step for the free ones.  ``jac_fn`` may be None (forward
    differences).  Returns (theta, sum of squared residuals, evaluations).
    """
    th = box.clip(x0)
    r = resid_fn(th)
    f = float(r @ r)
    nfev = 1
    lam = 1e-3
    k = th.size
    for _ in range(max_iter):
        if not math.isfinite(f):
            break
        J = jac_fn(th) if jac_fn is not None else _fd_jacobian(resid_fn, th, r)
        if jac_fn is None:
            nfev += k
        g = J.T @ r
        pinned = ((th <= box.lower) & (g > 0)) | ((th >= box.upper) & (g < 0))
        free = ~pinned
        if not np.any(free):
            break
        Jf = J[:, free]
        gf = g[free]
        A = Jf.T @ Jf
        diag = np.diag(A).copy()
        diag[diag <= 0] = 1e-300
        accepted = False
        for _ in range(14):
            try:
                sub = np.linalg.solve(A + lam * np.diag(diag), -gf)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            step = np.zeros(k)
            step[free] = sub
            cand = box.clip(th + step)
            rc = resid_fn(cand)
            fc = float(rc @ rc)
            nfev += 1
            if math.isfinite(fc) and fc < f:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        moved = float(np.max(np.abs(cand - th)))
        gain = f - fc
        th, r, f = cand, rc, fc
        lam = max(lam * 0.3, 1e-14)
        if moved < xtol * (1.0 + float(np.max(np.abs(th)))):
            break
        if gain <= ftol * (1.0 + abs(f)):
            break
    return th, f, nfev


def _search(loss_fn, box: Box, opts: FitOptions, rng, warm=None, resid_fn=None,
            jac_fn=None, extra_starts=()):
    """Shared engine: multistart NM (cold) or LM-first (warm), plus polish.

    Returns (theta, loss, nfev, improved) where ``improved`` reports whether
    the search beat the best initial point.
    """
    nfev = 0
    candidates = []

    if warm is not None and not opts.refit_multistart:
        w = box.clip(warm)
        f_w = float(loss_fn(w))
        nfev += 1
        candidates.append((w, f_w))
        if resid_fn is not None:
            th, ssq, n = _lm(resid_fn, jac_fn, w, box)
            nfev += n
            candidates.append((th, float(loss_fn(th))))
            nfev += 1
        else:
            th, f, n = _nelder_mead(loss_fn, w, box,
                                    opts.refit_max_evaluations, opts.tolerance)
            nfev += n
            candidates.append((th, f))
        best = min(candidates, key=lambda c: c[1])
        return best[0], best[1], nfev, True

    starts = list(extra_starts)
    if warm is not None:
        starts.append(box.clip(warm))
    n_random = max(opts.multistarts - len(starts), 1)
    starts.extend(box.sample(rng, n_random))

    f0_best = np.inf
    for s in starts:
        f0 = float(loss_fn(np.asarray(s, dtype=float)))
        nfev += 1
        f0_best = min(f0_best, f0)
        th, f, n = _nelder_mead(loss_fn, s, box, opts.max_evaluations, opts.tolerance)
        nfev += n
        candidates.append((th, f))

    best_th, best_f = min(candidates, key=lambda c: c[1])
    if opts.polish and resid_fn is not None:
        th, ssq, n = _lm(resid_fn, jac_fn, best_th, box)
        nfev += n
        f = float(loss_fn(th))
        nfev += 1
        if f < best_f:
            best_th, best_f = th, f
    improved = best_f < f0_best or best_f == 0.0
    return best_th, best_f, nfev, improved


# ---------------------------------------------------------------------------
# Stage 1: mean-function fit
# ---------------------------------------------------------------------------

def _mean_loss_fns(y, lagmat, spec: ModelSpec):
    def resid_fn(th):
        return y - spec.mean_fn(lagmat, th)

    def loss_fn(th):
        r = resid_fn(th)
        return float(r @ r) / y.size

    jac_fn = None
    if spec.mean_jacobian is not None:
        def jac_fn(th):
            return -spec.mean_jacobian(lagmat, th)
    return loss_fn, resid_fn, jac_fn


def _ols_candidate(y, lagmat, spec: ModelSpec):
    D = spec.mean_design(lagmat)
    theta, *_ = np.linalg.lstsq(D, y, rcond=None)
    return theta


def _fit_mean_arrays(y, lagmat, spec: ModelSpec, opts: FitOptions, rng=None,
                     warm=None, warm_clip_ols=False):
    """Returns (theta array, mean loss, nfev, improved)."""
    loss_fn, resid_fn, jac_fn = _mean_loss_fns(y, lagmat, spec)
    box = spec.theta1_domain

    extra = ()
    if spec.mean_design is not None:
        theta = _ols_candidate(y, lagmat, spec)
        if box.contains(theta):
            theta = box.clip(theta)
            return theta, loss_fn(theta), 1, True
        if warm is not None and warm_clip_ols:
            theta = box.clip(theta)
            return theta, loss_fn(theta), 1, True
        extra = (box.clip(theta),)

    if rng is None:
        rng = generator(0)
    return _search(loss_fn, box, opts, rng, warm=warm, resid_fn=resid_fn,
                   jac_fn=jac_fn, extra_starts=extra)


def fit_mean(series: TimeSeries, spec: ModelSpec, opts: FitOptions = None,
             seed=None) -> ParameterVector:
    """Least-squares estimate of the mean-function parameters."""
    opts = opts or DEFAULT_FIT_OPTIONS
    _check_fit_inputs(series, spec)
    y, lagmat = series.targets(), series.lag_matrix()
    theta, loss, nfev, improved = _fit_mean_arrays(
        y, lagmat, spec, opts, rng=generator(seed))
    if not improved:
        warnings.warn(f"mean fit for {spec.label!r} failed to improve past its "
                      f"best initial point (loss {loss:g})", RuntimeWarning)
    return ParameterVector(theta, spec.theta1_domain)


def _check_fit_inputs(series: TimeSeries, spec: ModelSpec):
    if series.order != spec.order:
        raise DomainViolation(
            f"series order {series.order} != model order {spec.order}")
    if np.ptp(series.values) == 0.0:
        raise DegenerateSeriesError("series is constant; nothing to fit")
    if series.T <= spec.theta1_domain.dim:
        raise ConfigError(
            f"need T > dim(theta1)={spec.theta1_domain.dim}, got T={series.T}")


# ---------------------------------------------------------------------------
# Stage 2: variance-function fit
# ---------------------------------------------------------------------------

def _variance_gap_fn(mean_resid, lagmat, spec: ModelSpec):
    """g(v) = mean((r / sigma(lags, v))^2) - 1; K_T = |g|."""

    def gap(th):
        s = spec.variance_fn(lagmat, th)
        w = mean_resid / s
        return float(w @ w) / mean_resid.size - 1.0

    return gap


def _fit_variance_arrays(mean_resid, lagmat, spec: ModelSpec, opts: FitOptions,
                         rng=None, warm=None):
    """Returns (theta2 array, K_T loss, nfev, improved)."""
    box = spec.theta2_domain
    gap = _variance_gap_fn(mean_resid, lagmat, spec)

    if spec.variance_shape is not None:
        # Scale family sigma = c * s(lags): c^2 = mean((r/s)^2) in closed form.
        w = mean_resid / spec.variance_shape(lagmat)
        c = math.sqrt(float(w @ w) / mean_resid.size)
        theta = box.clip([c])
        k = abs(gap(theta))
        return theta, k, 1, k < 1.0

    def loss_fn(th):
        return abs(gap(th))

    def resid_fn(th):
        return np.array([gap(th)])

    if rng is None:
        rng = generator(0)
    return _search(loss_fn, box, opts, rng, warm=warm, resid_fn=resid_fn, jac_fn=None)


def fit_variance(series: TimeSeries, spec: ModelSpec, theta1_hat,
                 opts: FitOptions = None, seed=None) -> ParameterVector:
    """Second-stage estimate of the variance-function parameters."""
    opts = opts or DEFAULT_FIT_OPTIONS
    if not spec.heteroscedastic:
        raise DomainViolation("model is homoscedastic: no variance parameters to fit")
    _check_fit_inputs(series, spec)
    y, lagmat = series.targets(), series.lag_matrix()
    r = y - spec.mean_fn(lagmat, theta_values(theta1_hat))
    theta, k, nfev, improved = _fit_variance_arrays(
        r, lagmat, spec, opts, rng=generator(seed))
    if not improved:
        warnings.warn(f"variance fit for {spec.label!r} failed to improve "
                      f"(K_T {k:g}); residuals may be degenerate", RuntimeWarning)
    return ParameterVector(theta, spec.theta2_domain)


def fit_model(series: TimeSeries, spec: ModelSpec, opts: FitOptions = None,
              seed=None) -> FitResult:
    """Two-stage fit: mean parameters, then variance parameters if present.

    The variance stage never revisits theta1_hat.
    """
    opts = opts or DEFAULT_FIT_OPTIONS
    _check_fit_inputs(series, spec)
    ss = as_seed_sequence(seed)
    y, lagmat = series.targets(), series.lag_matrix()

    th1, loss1, n1, ok1 = _fit_mean_arrays(
        y, lagmat, spec, opts, rng=generator(derive(ss, 0)))
    th2 = loss2 = None
    n2, ok2 = 0, True
    if spec.heteroscedastic:
        r = y - spec.mean_fn(lagmat, th1)
        th2, loss2, n2, ok2 = _fit_variance_arrays(
            r, lagmat, spec, opts, rng=generator(derive(ss, 1)))
    return FitResult(
        theta1_hat=ParameterVector(th1, spec.theta1_domain),
        theta2_hat=ParameterVector(th2, spec.theta2_domain) if th2 is not None else None,
        loss_mean=float(loss1),
        loss_var=float(loss2) if loss2 is not None else None,
        converged=bool(ok1 and ok2),
        evaluations=n1 + n2,
    )


# ---------------------------------------------------------------------------
# Residual sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualSet:
    """Fitted or predictive residuals; doubles as an empirical innovation law.

    ``centered`` and ``normalized`` record which standardizations have been
    applied (normalization uses the divisor-T standard deviation).
    ``smoothing_sd`` is the standard deviation of any convolution noise added.
    """

    values: np.ndarray
    kind: str
    centered: bool = False
    normalized: bool = False
    smoothing_sd: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if self.kind not in ("fitted", "predictive"):
            raise ConfigError(f"residual kind must be fitted|predictive, got {self.kind!r}")
        if v.size == 0:
            raise ConfigError("residual set is empty")
        object.__setattr__(self, "values", v)
        v.flags.writeable = False

    def __len__(self) -> int:
        return self.values.size


def fitted_residuals(series: TimeSeries, spec: ModelSpec, theta1_hat,
                     theta2_hat=None) -> ResidualSet:
    """Raw residuals from the full-sample fit (not yet centered)."""
    y, lagmat = series.targets(), series.lag_matrix()
    r = y - spec.mean_fn(lagmat, theta_values(theta1_hat))
    if spec.heteroscedastic:
        if theta2_hat is None:
            raise DomainViolation("heteroscedastic model needs theta2_hat for residuals")
        s = spec.variance_fn(lagmat, theta_values(theta2_hat))
        if np.any(s <= 0):
            raise DomainViolation("variance function evaluated <= 0 on the sample")
        r = r / s
    return ResidualSet(values=r, kind="fitted")


def _loo_linear(y, lagmat, spec: ModelSpec):
    """Exact leave-one-out machinery for design-matrix (linear) models.

    Returns (theta_full, e, h, U) with ``e`` the full-fit residuals, ``h``
    the leverage values and ``U`` the thin orthonormal basis of the design
    column space.
    """
    D = spec.mean_design(lagmat)
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    keep = s > s[0] * 1e-12 if s.size and s[0] > 0 else np.zeros(s.size, bool)
    Uk = U[:, keep]
    theta = (Vt[keep].T / s[keep]) @ (Uk.T @ y)
    e = y - D @ theta
    h = np.einsum("ij,ij->i", Uk, Uk)
    return theta, e, h, Uk


def predictive_residuals(series: TimeSeries, spec: ModelSpec,
                         opts: FitOptions = None, seed=None,
                         fit: Optional[FitResult] = None) -> ResidualSet:
    """Leave-one-out residuals: for each t, refit without the scatter pair
    at t and evaluate the residual there with the delete-t parameters.

    Refits are warm-started from the full-sample estimate; linear models use
    the exact leave-one-out identities instead of iterating.  A precomputed
    full-sample ``fit`` may be supplied to skip the initial estimation.
    """
    opts = opts or DEFAULT_FIT_OPTIONS
    _check_fit_inputs(series, spec)
    if series.T <= spec.theta1_domain.dim + 1:
        raise ConfigError("need T > dim(theta1) + 1 for leave-one-out refits")
    ss = as_seed_sequence(seed)
    y, lagmat = series.targets(), series.lag_matrix()
    T = y.size

    if spec.mean_design is not None and spec.theta1_domain.contains(
            _ols_candidate(y, lagmat, spec)):
        return _predictive_residuals_linear(series, spec, y, lagmat, opts)

    if fit is None:
        fit = fit_model(series, spec, opts, seed=derive(ss, 0))
    warm1 = fit.theta1_hat.values
    warm2 = fit.theta2_hat.values if fit.theta2_hat is not None else None
    out = np.empty(T)
    mask = np.ones(T, dtype=bool)
    refit_opts = replace(opts, max_evaluations=opts.refit_max_evaluations)
    for t in range(T):
        mask[t] = False
        try:
            th1, _, _, _ = _fit_mean_arrays(
                y[mask], lagmat[mask], spec, refit_opts,
                rng=generator(derive(ss, 1, t)), warm=warm1, warm_clip_ols=True)
            denom = 1.0
            if spec.heteroscedastic:
                r_del = y[mask] - spec.mean_fn(lagmat[mask], th1)
                th2, _, _, _ = _fit_variance_arrays(
                    r_del, lagmat[mask], spec, refit_opts,
                    rng=generator(derive(ss, 2, t)), warm=warm2)
                denom = float(spec.variance_fn(lagmat[t], th2))
                if denom <= 0:
                    raise DomainViolation("delete-t variance evaluated <= 0")
            out[t] = (y[t] - float(spec.mean_fn(lagmat[t], th1))) / denom
        except (DomainViolation, np.linalg.LinAlgError) as exc:
            raise FitFailure(f"delete-{t + 1} refit failed: {exc}") from exc
        finally:
            mask[t] = True
    return ResidualSet(values=out, kind="predictive")


def _predictive_residuals_linear(series, spec, y, lagmat, opts):
    theta, e, h, Uk = _loo_linear(y, lagmat, spec)
    T = y.size
    denom = 1.0 - h
    loo = np.empty(T)
    safe = denom > 1e-10
    loo[safe] = e[safe] / denom[safe]
    for t in np.nonzero(~safe)[0]:
        # Leverage-one point: the hat identity degenerates, refit explicitly.
        mask = np.ones(T, dtype=bool)
        mask[t] = False
        th, *_ = np.linalg.lstsq(spec.mean_design(lagmat[mask]), y[mask], rcond=None)
        loo[t] = y[t] - float(spec.mean_fn(lagmat[t], spec.theta1_domain.clip(th)))

    if not spec.heteroscedastic:
        return ResidualSet(values=loo, kind="predictive")

    if spec.variance_shape is None:
        raise ConfigError("linear LOO with a non-scale-family variance is unsupported")
    # r^(t) = mean residuals under the delete-t theta1; columns indexed by t.
    H = Uk @ Uk.T
    adj = np.where(safe, e / np.where(safe, denom, 1.0), 0.0)
    R = e[:, None] + H * adj[None, :]
    shape = spec.variance_shape(lagmat)
    W = R / shape[:, None]
    col_ss = np.sum(W * W, axis=0) - W[np.arange(T), np.arange(T)] ** 2
    c = np.sqrt(np.maximum(col_ss, 0.0) / (T - 1))
    c = np.clip(c, spec.theta2_domain.lower[0], spec.theta2_domain.upper[0])
    for t in np.nonzero(~safe)[0]:
        mask = np.ones(T, dtype=bool)
        mask[t] = False
        th, *_ = np.linalg.lstsq(spec.mean_design(lagmat[mask]), y[mask], rcond=None)
        r_del = y[mask] - spec.mean_fn(lagmat[mask], th)
        w = r_del / shape[mask]
        c[t] = np.clip(math.sqrt(float(w @ w) / (T - 1)),
                       spec.theta2_domain.lower[0], spec.theta2_domain.upper[0])
    return ResidualSet(values=loo / (c * shape), kind="predictive")


# ---------------------------------------------------------------------------
# Centering, normalization, smoothing
# ---------------------------------------------------------------------------

def center(residuals: ResidualSet) -> ResidualSet:
    """Subtract the sample mean (idempotent on the flagged state)."""
    if residuals.centered:
        return residuals
    v = residuals.values - residuals.values.mean()
    return replace(residuals, values=v, centered=True)


def normalize(residuals: ResidualSet) -> ResidualSet:
    """Scale a centered set to unit divisor-T variance (idempotent)."""
    if residuals.normalized:
        return residuals
    if not residuals.centered:
        raise DomainViolation("normalize requires centered residuals")
    v = residuals.values
    sd = math.sqrt(float(v @ v) / v.size)
    if sd == 0.0:
        raise DegenerateSeriesError("residuals have zero variance; cannot normalize")
    return replace(residuals, values=v / sd, normalized=True)


def default_smoothing_variance(T: int) -> float:
    """Default convolution variance xi(T) = T^(-1/2), shrinking with T.

    Smoothing is off everywhere unless explicitly requested; this is the
    suggested variance when it is turned on.
    """
    return float(T) ** -0.5


def smooth(residuals: ResidualSet, xi: float, seed=None) -> ResidualSet:
    """Convolve with independent N(0, xi) noise (xi is a variance).

    The output is no longer exactly centered/normalized, so those flags are
    cleared.  Off by default throughout the package.
    """
    if not xi > 0:
        raise ConfigError("smoothing variance xi must be > 0")
    rng = generator(seed)
    v = residuals.values + rng.normal(0.0, math.sqrt(xi), size=residuals.values.size)
    return replace(residuals, values=v, centered=False, normalized=False,
                   smoothing_sd=math.sqrt(xi))


def prepare_innovation_residuals(raw: ResidualSet, heteroscedastic: bool,
                                 smoothing_xi: float = 0.0, seed=None) -> ResidualSet:
    """Center (and, for heteroscedastic pipelines, normalize) residuals.

    Normalization is skipped when the centered spread sits at the numerical
    noise floor relative to the raw residual scale, so that an (almost)
    exactly interpolated fit keeps its point-mass innovation distribution
    instead of having rounding noise inflated to unit variance.
    """
    out = center(raw)
    if heteroscedastic:
        v = out.values
        sd = math.sqrt(float(v @ v) / v.size)
        floor = DEGENERACY_FLOOR * (1.0 + float(np.max(np.abs(raw.values), initial=0.0)))
        if sd > floor:
            out = normalize(out)
    if smoothing_xi > 0:
        out = smooth(out, smoothing_xi, seed=seed)
    return out


# ---------------------------------------------------------------------------
# Empirical-CDF distance
# ---------------------------------------------------------------------------

def ecdf_sup_distance(a, b) -> float:
    """Kolmogorov-Smirnov sup-distance between two empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ConfigError("ecdf_sup_distance needs non-empty samples")
    grid = np.concatenate((a, b))
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))
