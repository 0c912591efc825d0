import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import nlarboot as nb
from nlarboot import (InnovationDistribution, PredictiveEnsemble,
                      bootstrap_predict, builtin_model, oracle_predict,
                      point_predict, qpi, simulate_future, simulate_path)
from nlarboot.errors import ConfigError
from nlarboot.prediction import ceil_order_index


def _ens(column, horizon=1):
    col = np.asarray(column, dtype=float)[:, None]
    return PredictiveEnsemble(horizon=horizon, replicates=col,
                              conditioning_lags=np.array([0.0]), source="oracle")


class TestSimulateFuture:
    def test_point_mass_is_rank_one(self):
        spec, t1, _ = builtin_model(4)
        ens = simulate_future(spec, t1, np.array([0.7]),
                              InnovationDistribution.point_mass(0.0), 5, 40, seed=1)
        assert np.all(ens.replicates == ens.replicates[0])

    def test_linear_closed_form_iteration(self):
        spec = nb.polynomial_spec(1, degree=1, theta_true=(0.5,))
        ens = simulate_future(spec, (0.5,), np.array([1.0]),
                              InnovationDistribution.point_mass(0.0), 2, 7, seed=0)
        np.testing.assert_allclose(ens.replicates, np.tile([0.5, 0.25], (7, 1)))

    def test_one_step_mean_matches_analytic(self):
        spec, t1, _ = builtin_model(4)
        M = 20000
        rng_xt = np.random.default_rng(5)
        for _ in range(5):
            xt = float(rng_xt.uniform(-2, 2))
            ens = simulate_future(spec, t1, np.array([xt]),
                                  InnovationDistribution.standard_normal(), 1, M,
                                  seed=int(rng_xt.integers(1 << 30)))
            target = 0.2 + math.log(0.5 + abs(xt))
            assert np.mean(ens.column(1)) == pytest.approx(target, abs=4 / math.sqrt(M))

    def test_lag_window_shifts(self):
        # order-3 model: the future at step 2 must see step-1 output as lag 1
        spec, t1, _ = builtin_model(7)
        lags = np.array([0.3, -0.2, 0.5])
        ens = simulate_future(spec, t1, lags,
                              InnovationDistribution.point_mass(0.0), 3, 1, seed=0)
        x1 = nb.eval_mean(spec, lags, t1)
        x2 = nb.eval_mean(spec, np.array([x1, 0.3, -0.2]), t1)
        x3 = nb.eval_mean(spec, np.array([x2, x1, 0.3]), t1)
        np.testing.assert_allclose(ens.replicates[0], [x1, x2, x3], rtol=1e-15)

    def test_heteroscedastic_scales_noise(self):
        spec, t1, t2 = builtin_model(3)
        ens = simulate_future(spec, t1, np.array([0.0]),
                              InnovationDistribution.standard_normal(), 1, 50_000,
                              seed=2, theta2=t2)
        # at lag 0 the scale is exactly 0.5
        assert np.std(ens.column(1)) == pytest.approx(0.5, rel=0.02)


class TestPointPredict:
    def test_small_column_examples(self):
        assert point_predict(_ens([1, 2, 3]), "L2").value == 2.0
        assert point_predict(_ens([1, 2, 3]), "L1").value == 2.0
        assert point_predict(_ens([1, 2, 3, 100]), "L1").value == 2.5
        assert point_predict(_ens([1, 2, 3, 100]), "L2").value == 26.5

    def test_rank_one_ensemble(self):
        e = _ens([4.2] * 10)
        assert point_predict(e, "L2").value == pytest.approx(4.2, rel=1e-15)
        assert point_predict(e, "L1").value == 4.2

    def test_l1_depends_only_on_sorted_column(self):
        rng = np.random.default_rng(0)
        col = rng.standard_normal(101)
        a = point_predict(_ens(col), "L1").value
        b = point_predict(_ens(col[rng.permutation(101)]), "L1").value
        assert a == b

    def test_invalid_loss(self):
        with pytest.raises(ConfigError):
            point_predict(_ens([1.0, 2.0]), "L3")


class TestQpi:
    def test_order_statistic_convention(self):
        iv = qpi(_ens(np.arange(1.0, 101.0)), alpha=0.10)
        assert (iv.lower, iv.upper) == (5.0, 95.0)

    def test_extreme_alpha_clamps(self):
        iv = qpi(_ens(np.arange(1.0, 11.0)), alpha=0.9999)
        assert iv.lower <= iv.upper
        assert iv.lower == 5.0 and iv.upper == 6.0

    def test_bounds_are_ensemble_elements(self):
        rng = np.random.default_rng(1)
        col = rng.standard_normal(37)
        iv = qpi(_ens(col), alpha=0.05)
        assert iv.lower in col and iv.upper in col

    @given(st.integers(2, 300), st.floats(0.01, 0.5))
    @settings(max_examples=80, deadline=None)
    def test_nesting_property(self, m, alpha):
        rng = np.random.default_rng(m)
        e = _ens(rng.standard_normal(m))
        inner = qpi(e, min(2 * alpha, 0.99))
        outer = qpi(e, alpha)
        assert outer.lower <= inner.lower and inner.upper <= outer.upper

    def test_ceil_index_is_exact_on_float_boundaries(self):
        assert ceil_order_index(0.05, 100) == 5
        assert ceil_order_index(0.95, 100) == 95
        assert ceil_order_index(0.025, 1000) == 25
        assert ceil_order_index(1e-9, 10) == 1
        assert ceil_order_index(0.999999, 10) == 10


class TestOraclePredict:
    def test_degenerate_equals_naive_iteration(self):
        spec, t1, _ = builtin_model("eq36")
        ts = simulate_path(spec, t1, InnovationDistribution.point_mass(0.0),
                           T=20, burn_in=0, seed=1)
        pt, iv = oracle_predict(spec, t1, ts, InnovationDistribution.point_mass(0.0),
                                h=4, M=50, loss="L2", alpha=0.05, seed=2)
        naive = nb.naive_predict(spec, t1, ts.last_lags(), 4)
        assert pt.value == pytest.approx(naive, rel=1e-15)
        assert iv.width == 0.0

    def test_same_seed_identical(self):
        spec, t1, _ = builtin_model(4)
        ts = simulate_path(spec, t1, InnovationDistribution.standard_normal(),
                           T=50, seed=3)
        innov = InnovationDistribution.standard_normal()
        a = oracle_predict(spec, t1, ts, innov, 3, 500, "L1", 0.10, seed=9)
        b = oracle_predict(spec, t1, ts, innov, 3, 500, "L1", 0.10, seed=9)
        assert a == b

    def test_monte_carlo_rate_in_M(self):
        # RMS error vs the analytic one-step mean shrinks like 1/sqrt(M)
        spec, t1, _ = builtin_model(4)
        xt = 0.9
        target = 0.2 + math.log(0.5 + xt)
        rms = {}
        for M in (1000, 100_000):
            errs = []
            for rep in range(40):
                ens = simulate_future(spec, t1, np.array([xt]),
                                      InnovationDistribution.standard_normal(),
                                      1, M, seed=100 + rep)
                errs.append(np.mean(ens.column(1)) - target)
            rms[M] = float(np.sqrt(np.mean(np.square(errs))))
        ratio = rms[1000] / rms[100_000]
        assert 5.0 < ratio < 20.0

    def test_monte_carlo_rate_in_M_for_median(self):
        spec, t1, _ = builtin_model(4)
        xt = -0.4
        target = 0.2 + math.log(0.5 + abs(xt))  # median of phi + eps, eps symmetric
        rms = {}
        for M in (1000, 100_000):
            errs = []
            for rep in range(40):
                ens = simulate_future(spec, t1, np.array([xt]),
                                      InnovationDistribution.standard_normal(),
                                      1, M, seed=500 + rep)
                errs.append(np.median(ens.column(1)) - target)
            rms[M] = float(np.sqrt(np.mean(np.square(errs))))
        ratio = rms[1000] / rms[100_000]
        assert 5.0 < ratio < 20.0


class TestTwoStepQuadratureOracle:
    def test_ensemble_mean_matches_double_integral(self):
        # brute-force trapezoid quadrature of the 2-step conditional mean
        spec, t1, _ = builtin_model(4)
        phi = lambda x: 0.2 + np.log(0.5 + np.abs(x))
        M = 200_000
        for i, xt in enumerate((-1.3, 0.4, 2.1)):
            e = np.linspace(-10.0, 10.0, 2001)
            w = np.exp(-e * e / 2) / math.sqrt(2 * math.pi)
            target = float(np.trapezoid(phi(phi(xt) + e) * w, e))
            ens = simulate_future(spec, t1, np.array([xt]),
                                  InnovationDistribution.standard_normal(), 2, M,
                                  seed=42 + i)
            col = ens.column(2)
            tol = 5.0 * float(np.std(col)) / math.sqrt(M)
            assert np.mean(col) == pytest.approx(target, abs=tol)


class TestBootstrapPredict:
    def test_noiseless_collapses_to_estimated_naive(self):
        spec, t1, _ = builtin_model(4)
        ts = simulate_path(spec, t1, InnovationDistribution.point_mass(0.0),
                           T=40, burn_in=0, seed=7)
        fit, resid, pt, iv = bootstrap_predict(ts, spec, "fitted", h=5, M=100,
                                               loss="L2", seed=8)
        naive = nb.naive_predict(spec, fit.theta1_hat, ts.last_lags(), 5)
        assert pt.value == pytest.approx(naive, abs=1e-8)
        assert iv.width <= 1e-8
        assert resid.centered

    def test_fitted_vs_predictive_share_theta(self):
        spec, t1, _ = builtin_model(1)
        ts = simulate_path(spec, t1, InnovationDistribution.standard_normal(),
                           T=60, seed=9)
        f_fit, f_res, *_ = bootstrap_predict(ts, spec, "fitted", h=2, M=50, seed=10)
        p_fit, p_res, *_ = bootstrap_predict(ts, spec, "predictive", h=2, M=50, seed=10)
        np.testing.assert_array_equal(f_fit.theta1_hat.values,
                                      p_fit.theta1_hat.values)
        assert f_res.kind == "fitted" and p_res.kind == "predictive"

    def test_hetero_pipeline_normalizes(self):
        spec, t1, t2 = builtin_model(3)
        ts = simulate_path(spec, t1, InnovationDistribution.standard_normal(),
                           T=120, seed=11, theta2=t2)
        fit, resid, pt, iv = bootstrap_predict(ts, spec, "fitted", h=2, M=200, seed=12)
        assert resid.normalized
        v = resid.values
        assert float(v @ v) / v.size == pytest.approx(1.0, rel=1e-10)

    def test_invalid_kind(self):
        spec, t1, _ = builtin_model(1)
        ts = simulate_path(spec, t1, InnovationDistribution.standard_normal(),
                           T=30, seed=1)
        with pytest.raises(ConfigError):
            bootstrap_predict(ts, spec, "robust", h=1, M=10, seed=0)


class TestEnsembleContainer:
    def test_column_bounds(self):
        e = _ens([1.0, 2.0], horizon=1)
        with pytest.raises(ConfigError):
            e.column(2)

    def test_non_finite_rejected(self):
        with pytest.raises(ConfigError):
            PredictiveEnsemble(horizon=1, replicates=np.array([[np.inf]]),
                               conditioning_lags=np.array([0.0]), source="oracle")
