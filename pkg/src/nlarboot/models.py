"""Parametric non-linear autoregressive models.

A model is the recursion ``X_t = phi(lags, theta1) + sigma(lags, theta2) * eps_t``
with i.i.d. innovations, where ``lags = (X_{t-1}, ..., X_{t-p})`` (most recent
first).  ``sigma`` is optional; its absence means homoscedastic errors
(``sigma == 1``).  This module defines the model container, the innovation
laws, the observed-series container, a zoo of benchmark models, path
simulation, and a numerical probe for the drift-type stability condition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainViolation, ExplosionError
from .rngkit import generator

#: Hard ceiling on |X_t| during any recursion; beyond this we abort.
EXPLOSION_LIMIT = 1e12


# ---------------------------------------------------------------------------
# Parameter domains and vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned closed box of admissible parameter values."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError("box bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigError("box bounds must be finite (bounded closed domain)")
        if np.any(lo > hi):
            raise ConfigError("box lower bounds exceed upper bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        lo.flags.writeable = False
        hi.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, values, atol: float = 1e-9) -> bool:
        v = np.asarray(values, dtype=float)
        return bool(
            v.shape == self.lower.shape
            and np.all(v >= self.lower - atol)
            and np.all(v <= self.upper + atol)
        )

    def clip(self, values) -> np.ndarray:
        return np.clip(np.asarray(values, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n points drawn uniformly from the box, shape (n, dim)."""
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


def box_around(theta, half_width: float = 5.0, lower_floor=None) -> Box:
    """Box of given half-width around ``theta``, floored coordinate-wise.

    ``lower_floor`` clips lower bounds up (e.g. to keep a scale parameter
    positive); pass a scalar or a per-coordinate array.
    """
    t = np.atleast_1d(np.asarray(theta, dtype=float))
    lo = t - half_width
    hi = t + half_width
    if lower_floor is not None:
        lo = np.maximum(lo, lower_floor)
    return Box(lo, hi)


@dataclass(frozen=True)
class ParameterVector:
    """Parameter values together with the box they must live in."""

    values: np.ndarray
    domain: Box

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", v)
        if not self.domain.contains(v):
            raise DomainViolation(
                f"parameter vector {v} outside its domain "
                f"[{self.domain.lower}, {self.domain.upper}]"
            )
        v.flags.writeable = False

    def __len__(self) -> int:
        return self.values.size


def theta_values(theta) -> np.ndarray:
    """Accept a ParameterVector or a bare array and return the values."""
    if isinstance(theta, ParameterVector):
        return theta.values
    return np.atleast_1d(np.asarray(theta, dtype=float))


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Parametric NLAR model: order, mean function, optional variance function.

    ``mean_fn(lags, theta1)`` must accept ``lags`` of shape ``(..., order)``
    (most recent lag first) and broadcast over leading axes.  The same holds
    for ``variance_fn``, which must be strictly positive on its domain.

    ``mean_design``, ``mean_jacobian`` and ``variance_shape`` are optional
    performance hooks used by the fitting code: a design-matrix builder when
    the mean is linear in theta1, an analytic d(phi)/d(theta1), and the shape
    ``s`` of a scale family ``sigma = theta2[0] * s(lags)``.
    """

    order: int
    mean_fn: Callable
    theta1_domain: Box
    variance_fn: Optional[Callable] = None
    theta2_domain: Optional[Box] = None
    label: str = "custom"
    mean_design: Optional[Callable] = None
    mean_jacobian: Optional[Callable] = None
    variance_shape: Optional[Callable] = None

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError("model order must be >= 1")
        if (self.variance_fn is None) != (self.theta2_domain is None):
            raise ConfigError("variance_fn and theta2_domain must be given together")

    @property
    def heteroscedastic(self) -> bool:
        return self.variance_fn is not None


def eval_mean(spec: ModelSpec, lags, theta1) -> float:
    """Evaluate the conditional-mean function at one lag vector."""
    x = np.asarray(lags, dtype=float)
    if x.shape != (spec.order,):
        raise DomainViolation(f"expected lag vector of length {spec.order}, got shape {x.shape}")
    t = theta_values(theta1)
    if not spec.theta1_domain.contains(t):
        raise DomainViolation("theta1 outside its domain box")
    return float(spec.mean_fn(x, t))


def eval_variance(spec: ModelSpec, lags, theta2) -> float:
    """Evaluate the conditional standard-deviation function at one lag vector."""
    if not spec.heteroscedastic:
        raise DomainViolation("model is homoscedastic: no variance function to evaluate")
    x = np.asarray(lags, dtype=float)
    if x.shape != (spec.order,):
        raise DomainViolation(f"expected lag vector of length {spec.order}, got shape {x.shape}")
    t = theta_values(theta2)
    if not spec.theta2_domain.contains(t):
        raise DomainViolation("theta2 outside its domain box")
    s = float(spec.variance_fn(x, t))
    if not (s > 0.0):
        raise DomainViolation(f"variance function evaluated to {s} <= 0 (misconfigured model)")
    return s


# ---------------------------------------------------------------------------
# Innovation distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InnovationDistribution:
    """Innovation law: one of the named families or an empirical sampler.

    Kinds: ``standard-normal``, ``chi-squared-centered`` (chi2(df) - df, mean
    zero), ``chi-squared`` (uncentered), ``point-mass`` (degenerate), and
    ``empirical`` (uniform resampling with replacement from stored values).
    """

    kind: str
    df: Optional[float] = None
    value: Optional[float] = None
    values: Optional[np.ndarray] = None

    _KINDS = ("standard-normal", "chi-squared-centered", "chi-squared", "point-mass", "empirical")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ConfigError(f"unknown innovation kind {self.kind!r}")
        if self.kind in ("chi-squared-centered", "chi-squared") and not (self.df and self.df > 0):
            raise ConfigError("chi-squared innovations need df > 0")
        if self.kind == "point-mass" and self.value is None:
            raise ConfigError("point-mass innovation needs a value")
        if self.kind == "empirical":
            v = np.asarray(self.values, dtype=float).ravel()
            if v.size == 0 or not np.all(np.isfinite(v)):
                raise ConfigError("empirical innovation needs a non-empty finite sample")
            object.__setattr__(self, "values", v)

    # -- constructors -------------------------------------------------------
    @classmethod
    def standard_normal(cls) -> "InnovationDistribution":
        return cls("standard-normal")

    @classmethod
    def chi_squared_centered(cls, df: float) -> "InnovationDistribution":
        return cls("chi-squared-centered", df=float(df))

    @classmethod
    def chi_squared(cls, df: float) -> "InnovationDistribution":
        return cls("chi-squared", df=float(df))

    @classmethod
    def point_mass(cls, value: float) -> "InnovationDistribution":
        return cls("point-mass", value=float(value))

    @classmethod
    def empirical(cls, sample) -> "InnovationDistribution":
        values = getattr(sample, "values", sample)
        return cls("empirical", values=np.asarray(values, dtype=float))

    @classmethod
    def parse(cls, text: str) -> "InnovationDistribution":
        """Parse e.g. 'standard-normal', 'chi-squared-centered:3', 'point-mass:0'."""
        name, _, arg = text.strip().partition(":")
        name = name.strip().lower()
        if name in ("standard-normal", "normal", "gaussian"):
            return cls.standard_normal()
        if name in ("chi-squared-centered", "chisq-centered"):
            return cls.chi_squared_centered(float(arg or 3))
        if name in ("chi-squared", "chisq"):
            return cls.chi_squared(float(arg or 3))
        if name in ("point-mass", "point"):
            return cls.point_mass(float(arg or 0.0))
        raise ConfigError(f"cannot parse innovation spec {text!r}")

    @property
    def label(self) -> str:
        if self.kind == "standard-normal":
            return "standard-normal"
        if self.kind in ("chi-squared-centered", "chi-squared"):
            return f"{self.kind}:{self.df:g}"
        if self.kind == "point-mass":
            return f"point-mass:{self.value:g}"
        return f"empirical(n={self.values.size})"

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        """Draw i.i.d. innovations of the given shape."""
        if self.kind == "standard-normal":
            return rng.standard_normal(size)
        if self.kind == "chi-squared-centered":
            return rng.chisquare(self.df, size) - self.df
        if self.kind == "chi-squared":
            return rng.chisquare(self.df, size)
        if self.kind == "point-mass":
            return np.full(size, self.value, dtype=float)
        idx = rng.integers(0, self.values.size, size=size)
        return self.values[idx]


# ---------------------------------------------------------------------------
# Observed series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeSeries:
    """Observed path ``X_{-p+1}, ..., X_T`` stored chronologically.

    ``values`` has length ``T + p``: the first ``p`` entries are the
    pre-sample lags, the remaining ``T`` are the effective observations.
    """

    order: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if self.order < 1:
            raise ConfigError("series order must be >= 1")
        if v.size < self.order + 1:
            raise ConfigError(f"need at least order+1={self.order + 1} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ConfigError("series contains non-finite values")
        object.__setattr__(self, "values", v)
        v.flags.writeable = False

    @property
    def T(self) -> int:
        return self.values.size - self.order

    def last_lags(self) -> np.ndarray:
        """(X_T, X_{T-1}, ..., X_{T-p+1}), the conditioning lag vector."""
        return self.values[::-1][: self.order].copy()

    def lag_matrix(self) -> np.ndarray:
        """Shape (T, p); row t-1 holds (X_{t-1}, ..., X_{t-p})."""
        p, T, v = self.order, self.T, self.values
        return np.column_stack([v[p - 1 - j : p - 1 - j + T] for j in range(p)])

    def targets(self) -> np.ndarray:
        """(X_1, ..., X_T)."""
        return self.values[self.order :]


# ---------------------------------------------------------------------------
# Mean- and variance-function families
# ---------------------------------------------------------------------------

def threshold_linear_spec(order: int, theta_true=None, half_width: float = 5.0,
                          label: str = "threshold-linear") -> ModelSpec:
    """Two-regime threshold AR: regime picked by the sign of the first lag.

    theta = (p low-regime coefficients, p high-regime coefficients); the low
    regime applies when ``X_{t-1} <= 0`` (ties go to the low regime).
    """
    p = order

    def mean_fn(lags, th):
        lags = np.asarray(lags, dtype=float)
        low = lags @ th[:p]
        high = lags @ th[p:]
        return np.where(lags[..., 0] <= 0.0, low, high)

    def mean_design(lag_matrix):
        low_mask = (lag_matrix[:, 0] <= 0.0)[:, None]
        return np.hstack((lag_matrix * low_mask, lag_matrix * ~low_mask))

    def mean_jacobian(lags, th):
        lags = np.asarray(lags, dtype=float)
        low_mask = (lags[..., 0] <= 0.0)[..., None]
        return np.concatenate((lags * low_mask, lags * ~low_mask), axis=-1)

    center = np.zeros(2 * p) if theta_true is None else np.asarray(theta_true, float)
    return ModelSpec(order=p, mean_fn=mean_fn, theta1_domain=box_around(center, half_width),
                     label=label, mean_design=mean_design, mean_jacobian=mean_jacobian)


def log_abs_spec(theta_true=(0.2, 0.5), half_width: float = 5.0,
                 label: str = "log-abs") -> ModelSpec:
    """phi(x; a, b) = a + log(b + |x|), order 1, b kept positive."""

    def mean_fn(lags, th):
        lags = np.asarray(lags, dtype=float)
        return th[0] + np.log(th[1] + np.abs(lags[..., 0]))

    def mean_jacobian(lags, th):
        lags = np.asarray(lags, dtype=float)
        inner = th[1] + np.abs(lags[..., 0])
        return np.stack((np.ones_like(inner), 1.0 / inner), axis=-1)

    domain = box_around(theta_true, half_width, lower_floor=np.array([-np.inf, 0.01]))
    return ModelSpec(order=1, mean_fn=mean_fn, theta1_domain=domain, label=label,
                     mean_jacobian=mean_jacobian)


def log_square_spec(theta_true=(2.0,), half_width: float = 5.0,
                    label: str = "log-square") -> ModelSpec:
    """phi(x; c) = c * log(x^2), order 1, linear in c."""

    def mean_fn(lags, th):
        lags = np.asarray(lags, dtype=float)
        return th[0] * np.log(lags[..., 0] ** 2)

    def mean_design(lag_matrix):
        return np.log(lag_matrix[:, :1] ** 2)

    def mean_jacobian(lags, th):
        lags = np.asarray(lags, dtype=float)
        return np.log(lags[..., 0] ** 2)[..., None]

    return ModelSpec(order=1, mean_fn=mean_fn, theta1_domain=box_around(theta_true, half_width),
                     label=label, mean_design=mean_design, mean_jacobian=mean_jacobian)


def log_exp_sum_spec(order: int, theta_true, intercept: bool, rate: float = 0.9,
                     half_width: float = 5.0, label: str = "log-exp-sum",
                     lower=None, upper=None) -> ModelSpec:
    """phi(x; w) = log(w0 + sum_j w_j exp(rate * x_j)), weights >= 0.

    With ``intercept=False`` the constant term w0 is dropped.  ``lower`` /
    ``upper`` override the default box (half-width around the true weights,
    floored at zero).
    """
    p = order
    off = 1 if intercept else 0

    def mean_fn(lags, th):
        lags = np.asarray(lags, dtype=float)
        inner = np.exp(rate * lags) @ th[off:]
        if intercept:
            inner = inner + th[0]
        return np.log(np.maximum(inner, 1e-300))

    def mean_jacobian(lags, th):
        lags = np.asarray(lags, dtype=float)
        e = np.exp(rate * lags)
        inner = np.maximum(e @ th[off:] + (th[0] if intercept else 0.0), 1e-300)
        cols = [np.ones_like(inner)] if intercept else []
        cols.extend(e[..., j] for j in range(p))
        return np.stack(cols, axis=-1) / inner[..., None]

    t = np.asarray(theta_true, dtype=float)
    if lower is None or upper is None:
        box = box_around(t, half_width, lower_floor=0.0)
    else:
        box = Box(lower, upper)
    return ModelSpec(order=p, mean_fn=mean_fn, theta1_domain=box, label=label,
                     mean_jacobian=mean_jacobian)


def polynomial_spec(order: int, degree: int = 1, intercept: bool = False,
                    theta_true=None, half_width: float = 5.0,
                    label: str = "polynomial") -> ModelSpec:
    """Polynomial-in-lags mean, linear in theta.

    Features: optional intercept, then each lag raised to powers 1..degree
    (no cross terms).  ``degree=1, intercept=False`` is a plain linear AR.
    """
    p = order
    k = (1 if intercept else 0) + p * degree

    def features(lags):
        lags = np.asarray(lags, dtype=float)
        cols = [np.ones(lags.shape[:-1])] if intercept else []
        for j in range(p):
            for d in range(1, degree + 1):
                cols.append(lags[..., j] ** d)
        return np.stack(cols, axis=-1)

    def mean_fn(lags, th):
        return features(lags) @ th

    def mean_design(lag_matrix):
        return features(lag_matrix)

    def mean_jacobian(lags, th):
        return features(lags)

    center = np.zeros(k) if theta_true is None else np.asarray(theta_true, float)
    return ModelSpec(order=p, mean_fn=mean_fn, theta1_domain=box_around(center, half_width),
                     label=label, mean_design=mean_design, mean_jacobian=mean_jacobian)


def constant_variance(theta_true=(1.0,), half_width: float = 5.0):
    """sigma(x; c) = c (scale family with unit shape)."""

    def variance_fn(lags, th):
        lags = np.asarray(lags, dtype=float)
        return np.broadcast_to(th[0], lags.shape[:-1]).copy() if lags.ndim > 1 else th[0]

    def variance_shape(lags):
        lags = np.asarray(lags, dtype=float)
        return np.ones(lags.shape[:-1])

    domain = box_around(theta_true, half_width, lower_floor=0.01)
    return variance_fn, domain, variance_shape


def gauss_decay_variance(theta_true=(0.5,), half_width: float = 5.0):
    """sigma(x; c) = c * exp(-x^2) on the first lag (scale family)."""

    def variance_fn(lags, th):
        lags = np.asarray(lags, dtype=float)
        return th[0] * np.exp(-lags[..., 0] ** 2)

    def variance_shape(lags):
        lags = np.asarray(lags, dtype=float)
        return np.exp(-lags[..., 0] ** 2)

    domain = box_around(theta_true, half_width, lower_floor=0.01)
    return variance_fn, domain, variance_shape


# ---------------------------------------------------------------------------
# Benchmark model zoo
# ---------------------------------------------------------------------------

def builtin_model(model_id):
    """Benchmark model by id 1..7 or "eq36".

    Returns ``(spec, theta1, theta2)`` where the thetas are the true
    parameter values (``theta2`` is None for homoscedastic models).
    """
    key = str(model_id).strip().lower()
    if key not in _ZOO:
        raise ConfigError(f"unknown builtin model id {model_id!r} (use 1..7 or 'eq36')")
    return _ZOO[key]()


def _zoo_1():
    theta = np.array([0.1, 0.8])
    spec = threshold_linear_spec(1, theta, label="model-1")
    return spec, ParameterVector(theta, spec.theta1_domain), None


def _zoo_2():
    theta = np.array([0.5, 0.2, 0.1, 0.8, 0.0, 0.0])
    spec = threshold_linear_spec(3, theta, label="model-2")
    return spec, ParameterVector(theta, spec.theta1_domain), None


def _zoo_3():
    theta1 = np.array([0.1, 0.8])
    theta2 = np.array([0.5])
    base = threshold_linear_spec(1, theta1, label="model-3")
    var_fn, var_dom, var_shape = gauss_decay_variance(theta2)
    spec = ModelSpec(order=1, mean_fn=base.mean_fn, theta1_domain=base.theta1_domain,
                     variance_fn=var_fn, theta2_domain=var_dom, label="model-3",
                     mean_design=base.mean_design, mean_jacobian=base.mean_jacobian,
                     variance_shape=var_shape)
    return spec, ParameterVector(theta1, spec.theta1_domain), ParameterVector(theta2, var_dom)


def _zoo_4(label="model-4"):
    theta = np.array([0.2, 0.5])
    spec = log_abs_spec(theta, label=label)
    return spec, ParameterVector(theta, spec.theta1_domain), None


def _zoo_5():
    theta = np.array([2.0])
    spec = log_square_spec(theta, label="model-5")
    return spec, ParameterVector(theta, spec.theta1_domain), None


def _zoo_6():
    theta = np.array([10.0, 5.0])
    spec = log_exp_sum_spec(1, theta, intercept=True, label="model-6")
    return spec, ParameterVector(theta, spec.theta1_domain), None


def _zoo_7():
    theta = np.array([5.0, 4.0, 6.0])
    spec = log_exp_sum_spec(3, theta, intercept=False, label="model-7")
    return spec, ParameterVector(theta, spec.theta1_domain), None


_ZOO = {
    "1": _zoo_1, "2": _zoo_2, "3": _zoo_3, "4": _zoo_4,
    "5": _zoo_5, "6": _zoo_6, "7": _zoo_7,
    "eq36": lambda: _zoo_4(label="eq36"),
}

ZOO_IDS = tuple(_ZOO.keys())


# ---------------------------------------------------------------------------
# Path simulation
# ---------------------------------------------------------------------------

def _step_values(spec: ModelSpec, lags, th1, th2):
    """Mean and scale at one or many lag vectors (no validation, hot path)."""
    m = spec.mean_fn(lags, th1)
    if spec.variance_fn is not None:
        return m, spec.variance_fn(lags, th2)
    return m, None


def simulate_path(spec: ModelSpec, theta1, innov: InnovationDistribution, T: int,
                  burn_in: int = 1000, seed=None, theta2=None) -> TimeSeries:
    """Simulate a path of effective length T from the model recursion.

    The p-dimensional initial state is i.i.d. Uniform(-1, 1); the recursion
    runs ``burn_in + T + (p - 1)`` steps and the trailing ``T + p`` values
    are returned, so the burn-in scrubs the initial state.  Deterministic
    given the seed.  Aborts with :class:`ExplosionError` if any value leaves
    the stability region.
    """
    if T < 1:
        raise ConfigError("T must be >= 1")
    if burn_in < 0:
        raise ConfigError("burn_in must be >= 0")
    p = spec.order
    th1 = theta_values(theta1)
    th2 = theta_values(theta2) if theta2 is not None else None
    if spec.heteroscedastic and th2 is None:
        raise DomainViolation("heteroscedastic model needs theta2 for simulation")

    rng = generator(seed)
    steps = burn_in + T + (p - 1)
    buf = np.empty(p + steps, dtype=float)
    buf[:p] = rng.uniform(-1.0, 1.0, size=p)
    eps = innov.sample(steps, rng)

    for i in range(steps):
        lags = buf[i : i + p][::-1]
        m, s = _step_values(spec, lags, th1, th2)
        x = float(m) + (float(s) * eps[i] if s is not None else eps[i])
        if not math.isfinite(x) or abs(x) > EXPLOSION_LIMIT:
            raise ExplosionError(i + 1, x, context=f"simulation of {spec.label}")
        buf[p + i] = x

    return TimeSeries(order=p, values=buf[-(T + p):].copy())


def simulate_continuation(series: TimeSeries, spec: ModelSpec, theta1,
                          innov: InnovationDistribution, h: int,
                          rng: np.random.Generator, theta2=None) -> np.ndarray:
    """Continue the recursion h steps past the end of ``series``.

    Draws innovations from ``rng`` in order, so passing the generator that
    produced the path continues the same innovation stream.
    """
    p = spec.order
    th1 = theta_values(theta1)
    th2 = theta_values(theta2) if theta2 is not None else None
    lags = series.last_lags()
    eps = innov.sample(h, rng)
    out = np.empty(h, dtype=float)
    for k in range(h):
        m, s = _step_values(spec, lags, th1, th2)
        x = float(m) + (float(s) * eps[k] if s is not None else eps[k])
        if not math.isfinite(x) or abs(x) > EXPLOSION_LIMIT:
            raise ExplosionError(k + 1, x, context="future continuation")
        out[k] = x
        lags = np.concatenate(([x], lags[:-1])) if p > 1 else np.array([x])
    return out


# ---------------------------------------------------------------------------
# Drift-condition probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftReport:
    """Outcome of the numerical drift-condition scan (advisory, not a proof)."""

    lambda_hat: float
    C_hat: float
    satisfied: bool


def probe_drift_condition(spec: ModelSpec, theta, grid_radius: float,
                          grid_points: int) -> DriftReport:
    """Scan |phi(x)| <= lambda * max|x_i| + C on a lag grid.

    ``grid_points`` sets the node density per unit radius (nodes are the
    multiples of ``1/grid_points``), so enlarging the radius only adds grid
    points and the fitted lambda_hat is monotone in the radius.  C is pinned
    at |phi(0)| plus a tiny slack; ``satisfied`` reports lambda_hat < 1.
    """
    if grid_points < 2:
        raise ConfigError("grid_points must be >= 2")
    if grid_radius <= 0:
        raise ConfigError("grid_radius must be > 0")
    p = spec.order
    th = theta_values(theta)

    n = int(math.floor(grid_radius * grid_points))
    axis = np.arange(-n, n + 1, dtype=float) / grid_points
    mesh = np.stack(np.meshgrid(*([axis] * p), indexing="ij"), axis=-1).reshape(-1, p)

    phi = np.abs(np.asarray(spec.mean_fn(mesh, th), dtype=float))
    maxabs = np.max(np.abs(mesh), axis=1)
    phi0 = float(spec.mean_fn(np.zeros(p), th))
    C = abs(phi0) + 1e-12 * (1.0 + abs(phi0))

    nonzero = maxabs > 0
    lam = 0.0
    if np.any(nonzero):
        lam = max(0.0, float(np.max((phi[nonzero] - C) / maxabs[nonzero])))
    C_hat = float(np.max(phi - lam * maxabs))
    return DriftReport(lambda_hat=lam, C_hat=C_hat, satisfied=bool(lam < 1.0))
