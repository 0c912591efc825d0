import math

import numpy as np
import pytest

import nlarboot as nb
from nlarboot import (InnovationDistribution, TimeSeries, builtin_model,
                      generate_pseudo_series, inner_predict, ppi, ppi_engine,
                      simulate_path)
from nlarboot.errors import ConfigError, DomainViolation, FitFailure
from nlarboot.fitting import ResidualSet, center, fit_model, fitted_residuals, \
    prepare_innovation_residuals
from nlarboot.intervals import (_single_replicate, abnormality_limit,
                                assemble_ppi)
from nlarboot.rngkit import as_seed_sequence, derive


def _fitted_setup(mid=1, T=40, seed=3, innov=None):
    spec, t1, t2 = builtin_model(mid)
    innov = innov or InnovationDistribution.standard_normal()
    ts = simulate_path(spec, t1, innov, T=T, seed=seed, theta2=t2)
    fit = fit_model(ts, spec, seed=seed + 1)
    raw = fitted_residuals(ts, spec, fit.theta1_hat, fit.theta2_hat)
    prepared = prepare_innovation_residuals(raw, spec.heteroscedastic)
    return spec, ts, fit, prepared


class TestGeneratePseudoSeries:
    def test_output_length(self):
        spec, ts, fit, prepared = _fitted_setup(mid=2, T=30)
        ps = generate_pseudo_series(ts, spec, fit.theta1_hat, prepared, seed=1)
        assert ps.values.size == ts.T + spec.order

    def test_degenerate_residuals_deterministic_recursion(self):
        spec, t1, _ = builtin_model(1)
        ts = simulate_path(spec, t1, InnovationDistribution.standard_normal(),
                           T=20, seed=2)
        zeros = ResidualSet(values=np.zeros(20), kind="fitted", centered=True)
        ps = generate_pseudo_series(ts, spec, t1, zeros, seed=5)
        x = ps.values[0]
        for v in ps.values[1:]:
            x = float(spec.mean_fn(np.array([x]), t1.values))
            assert v == x

    def test_requires_centered(self):
        spec, ts, fit, _ = _fitted_setup()
        raw = ResidualSet(values=np.array([0.5, -0.5, 1.0]), kind="fitted")
        with pytest.raises(DomainViolation):
            generate_pseudo_series(ts, spec, fit.theta1_hat, raw, seed=1)

    def test_hetero_requires_normalized(self):
        spec, ts, fit, prepared = _fitted_setup(mid=3, T=50)
        assert prepared.normalized
        uncentered = center(ResidualSet(values=prepared.values * 3.0, kind="fitted"))
        with pytest.raises(DomainViolation):
            generate_pseudo_series(ts, spec, fit.theta1_hat, uncentered, seed=1,
                                   theta2_hat=fit.theta2_hat)

    def test_start_block_uniform_over_positions(self):
        # distinct observed values let the drawn start position be recovered
        T = 9
        values = np.arange(10.0)  # order 1 -> T + 1 = 10 admissible positions
        ts = TimeSeries(order=1, values=values)
        spec, t1, _ = builtin_model(1)
        zeros = ResidualSet(values=np.zeros(T), kind="fitted", centered=True)
        n = 2000
        counts = np.zeros(T + 1)
        for k in range(n):
            ps = generate_pseudo_series(ts, spec, t1, zeros, seed=k)
            counts[int(ps.values[0])] += 1
        p = 1.0 / (T + 1)
        bound = 3.0 * math.sqrt(p * (1 - p) / n)
        np.testing.assert_allclose(counts / n, p, atol=bound)


class TestInnerPredict:
    def test_degenerate_matches_outer_naive(self):
        spec, t1, _ = builtin_model(4)
        ts = simulate_path(spec, t1, InnovationDistribution.point_mass(0.0),
                           T=25, burn_in=0, seed=4)
        zeros = ResidualSet(values=np.zeros(25), kind="fitted", centered=True)
        v = inner_predict(ts, spec, t1, zeros, h=3, M=10, loss="L2", seed=1)
        assert v == pytest.approx(nb.naive_predict(spec, t1, ts.last_lags(), 3),
                                  rel=1e-15)

    def test_single_draw_same_for_both_losses(self):
        spec, ts, fit, prepared = _fitted_setup(mid=1, T=30)
        a = inner_predict(ts, spec, fit.theta1_hat, prepared, h=2, M=1,
                          loss="L2", seed=7)
        b = inner_predict(ts, spec, fit.theta1_hat, prepared, h=2, M=1,
                          loss="L1", seed=7)
        assert a == b

    def test_inner_noise_shrinks_with_M(self):
        spec, ts, fit, prepared = _fitted_setup(mid=4, T=80)
        sds = {}
        for M in (100, 10_000):
            vals = [inner_predict(ts, spec, fit.theta1_hat, prepared, h=2, M=M,
                                  loss="L2", seed=s) for s in range(30)]
            sds[M] = np.std(vals)
        ratio = sds[100] / sds[10_000]
        assert 4.0 < ratio < 25.0


class TestPpiEngine:
    def test_root_identity_exact(self):
        spec, ts, fit, prepared = _fitted_setup(mid=1, T=30)
        run = ppi_engine(ts, spec, "fitted", h=3, M=50, K=20, seed=11,
                         losses=("L2",), fit=fit, prepared=prepared,
                         want_replicates=True)
        for rec in run.replicates:
            assert rec.root == rec.future_value - rec.inner_prediction

    def test_forward_alignment_bitwise(self):
        spec, ts, fit, prepared = _fitted_setup(mid=2, T=25)
        run = ppi_engine(ts, spec, "fitted", h=2, M=30, K=15, seed=12,
                         losses=("L2",), fit=fit, prepared=prepared,
                         want_replicates=True)
        p = spec.order
        for rec in run.replicates:
            np.testing.assert_array_equal(rec.pseudo_series.values[-p:],
                                          ts.values[-p:])

    def test_replicate_key_permutation_leaves_sorted_roots(self):
        spec, ts, fit, prepared = _fitted_setup(mid=1, T=30)
        K = 24
        a = ppi_engine(ts, spec, "fitted", h=2, M=40, K=K, seed=13,
                       losses=("L2",), fit=fit, prepared=prepared)
        perm = np.random.default_rng(0).permutation(K)
        b = ppi_engine(ts, spec, "fitted", h=2, M=40, K=K, seed=13,
                       losses=("L2",), fit=fit, prepared=prepared,
                       replicate_keys=perm)
        col_a, col_b = a.roots["L2"][:, 1], b.roots["L2"][:, 1]
        assert not np.array_equal(col_a, col_b)
        np.testing.assert_array_equal(np.sort(col_a), np.sort(col_b))
        np.testing.assert_array_equal(col_a, col_b[np.argsort(perm)])

    def test_batch_matches_single_replicate_path(self):
        spec, ts, fit, prepared = _fitted_setup(mid=4, T=40)
        K = 10
        run = ppi_engine(ts, spec, "fitted", h=3, M=30, K=K, seed=14,
                         losses=("L2", "L1"), fit=fit, prepared=prepared)
        base = derive(as_seed_sequence(14), 4)
        limit = abnormality_limit(ts)
        from dataclasses import replace as drep
        from nlarboot.fitting import DEFAULT_FIT_OPTIONS
        refit_opts = drep(DEFAULT_FIT_OPTIONS,
                          max_evaluations=DEFAULT_FIT_OPTIONS.refit_max_evaluations)
        th1 = fit.theta1_hat.values
        for k in range(K):
            out = _single_replicate(ts, spec, th1, None, prepared, 3, 30,
                                    refit_opts, derive(base, k, 0), limit,
                                    ("L2", "L1"), False)
            assert out is not None
            for loss in ("L2", "L1"):
                np.testing.assert_allclose(out[0][loss], run.roots[loss][k],
                                           rtol=1e-12, atol=1e-12)

    def test_exhausted_retries_raise(self):
        spec, t1, _ = builtin_model(1)
        ts = simulate_path(spec, t1, InnovationDistribution.standard_normal(),
                           T=20, seed=2)
        huge = ResidualSet(values=np.full(20, 1e9) - 1e9 + np.array([-1e9, 1e9] * 10),
                           kind="fitted", centered=True)
        with pytest.raises(FitFailure):
            ppi_engine(ts, spec, "fitted", h=1, M=10, K=3, seed=1,
                       losses=("L2",), fit=fit_model(ts, spec, seed=0),
                       prepared=huge)

    def test_needs_two_replicates(self):
        spec, ts, fit, prepared = _fitted_setup()
        with pytest.raises(ConfigError):
            ppi_engine(ts, spec, "fitted", h=1, M=10, K=1, seed=1,
                       fit=fit, prepared=prepared)


class TestPpi:
    def test_collapse_with_degenerate_residuals(self):
        spec, t1, _ = builtin_model(4)
        ts = simulate_path(spec, t1, InnovationDistribution.point_mass(0.0),
                           T=40, burn_in=0, seed=21)
        iv = ppi(ts, spec, "fitted", h=3, alpha=0.05, loss="L2", M=60, K=30, seed=22)
        fit = fit_model(ts, spec, seed=0)
        naive = nb.naive_predict(spec, fit.theta1_hat, ts.last_lags(), 3)
        assert iv.width <= 1e-8
        assert iv.center == pytest.approx(naive, abs=1e-8)

    def test_bound_identities_and_nesting(self):
        spec, ts, fit, prepared = _fitted_setup(mid=1, T=50)
        run = ppi_engine(ts, spec, "fitted", h=2, M=100, K=60, seed=23,
                         losses=("L2",), fit=fit, prepared=prepared)
        center_val = run.centers["L2"][1]
        roots = run.roots["L2"][:, 1]
        wide = assemble_ppi(center_val, roots, 0.05, "L2")
        narrow = assemble_ppi(center_val, roots, 0.10, "L2")
        assert wide.lower == wide.center + wide.q_low
        assert wide.upper == wide.center + wide.q_high
        assert wide.lower <= narrow.lower and narrow.upper <= wide.upper
        assert wide.K == 60

    def test_end_to_end_interval_orders(self):
        spec, t1, _ = builtin_model(1)
        ts = simulate_path(spec, t1, InnovationDistribution.standard_normal(),
                           T=60, seed=24)
        iv = ppi(ts, spec, "predictive", h=2, alpha=0.10, loss="L1", M=80, K=40,
                 seed=25)
        assert iv.lower <= iv.upper
        assert iv.loss == "L1" and iv.level == 0.90

    def test_heteroscedastic_end_to_end(self):
        spec, t1, t2 = builtin_model(3)
        ts = simulate_path(spec, t1, InnovationDistribution.standard_normal(),
                           T=80, seed=26, theta2=t2)
        iv = ppi(ts, spec, "fitted", h=2, alpha=0.05, loss="L2", M=80, K=40, seed=27)
        assert iv.lower <= iv.upper
        assert np.isfinite(iv.width)
