"""Resolve model descriptors: zoo ids or structured model-config files.

A config file (YAML) selects a built-in parametric family and its
coefficient layout instead of a general expression language:

.. code-block:: yaml

    family: log-abs            # threshold-linear | log-abs | log-square |
                               # log-exp-sum | polynomial
    order: 1
    theta: [0.2, 0.5]          # reference/true parameters
    half_width: 5.0            # optional; domain box half-width
    domain:                    # optional explicit box override
      lower: [-4.8, 0.01]
      upper: [5.2, 5.5]
    rate: 0.9                  # log-exp-sum only
    intercept: true            # log-exp-sum / polynomial
    degree: 2                  # polynomial only
    variance:                  # optional (heteroscedastic)
      family: gauss-decay      # constant | gauss-decay
      theta: [0.5]
    label: my-model

Validation happens at load time; a config that violates the model
invariants (unbounded domain, non-positive variance on its domain, theta
outside the box) is rejected before any computation starts.
"""
from __future__ import annotations

import os

import numpy as np
import yaml

from .errors import ConfigError
from .models import (Box, ModelSpec, ParameterVector, ZOO_IDS, builtin_model,
                     constant_variance, gauss_decay_variance, log_abs_spec,
                     log_exp_sum_spec, log_square_spec, polynomial_spec,
                     threshold_linear_spec)

_VARIANCE_FAMILIES = {
    "constant": constant_variance,
    "gauss-decay": gauss_decay_variance,
}


def resolve_model(model):
    """Zoo id (1..7, 'eq36') or path to a model config file."""
    key = str(model).strip()
    if key.lower() in ZOO_IDS:
        return builtin_model(key)
    if os.path.exists(key):
        return load_model_config(key)
    raise ConfigError(f"model {model!r} is neither a zoo id {ZOO_IDS} nor a config file")


def _build_box(node, theta, half_width, lower_floor=None):
    if node is not None:
        try:
            return Box(np.asarray(node["lower"], float), np.asarray(node["upper"], float))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"domain must carry 'lower' and 'upper' lists: {exc}") from exc
    lo = np.asarray(theta, float) - half_width
    hi = np.asarray(theta, float) + half_width
    if lower_floor is not None:
        lo = np.maximum(lo, lower_floor)
    return Box(lo, hi)


def load_model_config(path):
    """Load and validate a custom model config; returns (spec, theta1, theta2)."""
    with open(path) as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise ConfigError(f"model config {path!r} must be a mapping")

    family = str(raw.get("family", "")).strip().lower()
    theta = raw.get("theta")
    if theta is None:
        raise ConfigError("model config needs a 'theta' list of reference parameters")
    theta = np.asarray(theta, dtype=float)
    order = int(raw.get("order", 1))
    half_width = float(raw.get("half_width", 5.0))
    label = str(raw.get("label", family or "custom"))

    if family == "threshold-linear":
        if theta.size != 2 * order:
            raise ConfigError(f"threshold-linear needs 2*order={2 * order} coefficients")
        spec = threshold_linear_spec(order, theta, half_width, label=label)
    elif family == "log-abs":
        if theta.size != 2:
            raise ConfigError("log-abs needs theta=(a, b)")
        spec = log_abs_spec(theta, half_width, label=label)
        order = 1
    elif family == "log-square":
        if theta.size != 1:
            raise ConfigError("log-square needs a single coefficient")
        spec = log_square_spec(theta, half_width, label=label)
        order = 1
    elif family == "log-exp-sum":
        intercept = bool(raw.get("intercept", True))
        rate = float(raw.get("rate", 0.9))
        want = order + (1 if intercept else 0)
        if theta.size != want:
            raise ConfigError(f"log-exp-sum needs {want} weights for order={order}, "
                              f"intercept={intercept}")
        spec = log_exp_sum_spec(order, theta, intercept=intercept, rate=rate,
                                half_width=half_width, label=label)
    elif family == "polynomial":
        degree = int(raw.get("degree", 1))
        intercept = bool(raw.get("intercept", False))
        want = (1 if intercept else 0) + order * degree
        if theta.size != want:
            raise ConfigError(f"polynomial needs {want} coefficients")
        spec = polynomial_spec(order, degree=degree, intercept=intercept,
                               theta_true=theta, half_width=half_width, label=label)
    else:
        raise ConfigError(f"unknown model family {family!r}")

    if raw.get("domain") is not None:
        spec = _respec_domain(spec, _build_box(raw["domain"], theta, half_width))
    theta1 = ParameterVector(theta, spec.theta1_domain)

    theta2 = None
    var_node = raw.get("variance")
    if var_node is not None:
        vfam = str(var_node.get("family", "")).strip().lower()
        if vfam not in _VARIANCE_FAMILIES:
            raise ConfigError(f"unknown variance family {vfam!r}")
        vtheta = np.asarray(var_node.get("theta", [1.0]), dtype=float)
        if vtheta.size != 1:
            raise ConfigError("variance families take a single scale parameter")
        var_fn, var_dom, var_shape = _VARIANCE_FAMILIES[vfam](vtheta, half_width)
        if var_node.get("domain") is not None:
            var_dom = _build_box(var_node["domain"], vtheta, half_width)
        if var_dom.lower[0] <= 0:
            raise ConfigError("variance scale domain must be strictly positive")
        _probe_variance_positive(var_fn, var_dom, spec.order)
        spec = ModelSpec(order=spec.order, mean_fn=spec.mean_fn,
                         theta1_domain=spec.theta1_domain, variance_fn=var_fn,
                         theta2_domain=var_dom, label=spec.label,
                         mean_design=spec.mean_design,
                         mean_jacobian=spec.mean_jacobian,
                         variance_shape=var_shape)
        theta2 = ParameterVector(vtheta, var_dom)
    return spec, theta1, theta2


def _respec_domain(spec: ModelSpec, box: Box) -> ModelSpec:
    if box.dim != spec.theta1_domain.dim:
        raise ConfigError("domain override has the wrong dimension")
    return ModelSpec(order=spec.order, mean_fn=spec.mean_fn, theta1_domain=box,
                     variance_fn=spec.variance_fn, theta2_domain=spec.theta2_domain,
                     label=spec.label, mean_design=spec.mean_design,
                     mean_jacobian=spec.mean_jacobian,
                     variance_shape=spec.variance_shape)


def _probe_variance_positive(var_fn, var_dom, order):
    probe = np.array([-5.0, -1.0, -0.1, 0.0, 0.1, 1.0, 5.0])
    lags = np.stack([probe] * order, axis=-1)
    for corner in (var_dom.lower, var_dom.upper, var_dom.center):
        if np.any(np.asarray(var_fn(lags, corner)) <= 0):
            raise ConfigError("variance function is not positive over its domain")
