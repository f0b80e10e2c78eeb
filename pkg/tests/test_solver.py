import math

import numpy as np
import pytest

from sparse_ias import linops
from sparse_ias.hyperprior import (
    HyperParams,
    ParameterError,
    compatible_scale,
    phi_zero,
    sensitivity_weights,
    theta_update,
)
from sparse_ias.solver import (
    PhaseSwitch,
    Problem,
    StoppingRule,
    after_fixed,
    alpha_update,
    cgls,
    hybrid_global,
    hybrid_local,
    ias_run,
    on_theta_rtol,
    whiten,
    whichever_first,
)

from oracles import dense_least_squares, dense_tikhonov


def make_dense_problem(rng, m, n, sparsity=4, noise=0.05):
    a = rng.standard_normal((m, n))
    x = np.zeros(n)
    support = rng.choice(n, size=sparsity, replace=False)
    x[support] = rng.standard_normal(sparsity) * 3.0
    b = a @ x + noise * rng.standard_normal(m)
    return linops.dense(a), b, x


class TestCgls:
    def test_zero_data_stops_immediately(self):
        res = cgls(linops.identity(5), np.zeros(5), stop_level=1.0, max_inner=10)
        assert res.iterations == 0
        assert res.stop_reason == "discrepancy"
        assert np.array_equal(res.solution, np.zeros(5))

    def test_identity_exact_in_one_step(self):
        b = np.array([1.0, -2.0, 3.0])
        res = cgls(linops.identity(3), b, stop_level=0.0, max_inner=10)
        np.testing.assert_allclose(res.solution, b, rtol=1e-12)
        assert res.iterations <= 2

    def test_matches_dense_least_squares(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((30, 20))
        b = rng.standard_normal(30)
        res = cgls(linops.dense(a), b, stop_level=0.0, max_inner=200)
        want = dense_least_squares(a, b)
        np.testing.assert_allclose(res.solution, want, rtol=1e-8)
        assert res.stop_reason == "normal_equation"

    def test_residual_trace_non_increasing(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((25, 40))
        b = rng.standard_normal(25)
        res = cgls(linops.dense(a), b, stop_level=0.0, max_inner=60)
        r = np.array(res.residuals)
        assert np.all(r[1:] <= r[:-1] * (1 + 1e-12))

    def test_max_inner_cap(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((30, 30))
        res = cgls(linops.dense(a), rng.standard_normal(30), stop_level=0.0, max_inner=3)
        assert res.iterations == 3
        assert res.stop_reason == "max_inner"

    def test_damped_matches_tikhonov(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((12, 8))
        b = rng.standard_normal(12)
        res = cgls(linops.dense(a), b, stop_level=0.0, max_inner=200, damp=1.0)
        np.testing.assert_allclose(res.solution, dense_tikhonov(a, b), rtol=1e-8)

    def test_rejects_negative_stop_level(self):
        with pytest.raises(ValueError, match="stop_level"):
            cgls(linops.identity(2), np.ones(2), stop_level=-1.0, max_inner=5)


class TestWhiten:
    def test_unit_noise_unchanged(self):
        m, b = whiten(linops.identity(3), [1.0, 2.0, 3.0], 1.0)
        assert m.kind == "identity"
        assert np.array_equal(b, [1, 2, 3])

    def test_scaling(self):
        m, b = whiten(linops.identity(2), [1.0, 2.0], 0.1)
        np.testing.assert_allclose(b, [10.0, 20.0], rtol=1e-14)
        np.testing.assert_allclose(m.apply([1.0, 1.0]), [10.0, 10.0], rtol=1e-14)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError, match="noise_std"):
            whiten(linops.identity(2), [1.0, 2.0], 0.0)

    def test_whitened_noise_concentration(self):
        rng = np.random.default_rng(4)
        m, sigma = 46, 0.37
        band = 3 * math.sqrt(m / 2)
        hits = 0
        for _ in range(200):
            eps = sigma * rng.standard_normal(m)
            _, e_w = whiten(linops.identity(m), eps, sigma)
            hits += abs(np.linalg.norm(e_w) - math.sqrt(m)) <= band
        assert hits >= 198


class TestAlphaUpdate:
    def _state(self, theta, params):
        from sparse_ias.solver import IasState

        n = len(theta)
        return IasState(np.zeros(n), np.asarray(theta, dtype=float), 0, np.ones(n, dtype=np.int8), params)

    def test_zero_data(self):
        params = HyperParams(1.0, 2.0, np.ones(6))
        state = self._state(np.ones(6), params)
        alpha, res = alpha_update(state, np.zeros(4), linops.dense(np.ones((4, 6))))
        assert np.array_equal(alpha, np.zeros(6))
        assert res.iterations == 0

    def test_vanishing_variances_pin_alpha_exact_mode(self):
        rng = np.random.default_rng(5)
        params = HyperParams(1.0, 2.0, np.ones(8))
        state = self._state(np.full(8, 1e-32), params)
        m = linops.dense(rng.standard_normal((5, 8)))
        alpha, _ = alpha_update(state, rng.standard_normal(5), m, exact=True)
        assert np.max(np.abs(alpha)) < 1e-12

    def test_exact_mode_matches_tikhonov(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((10, 15))
        theta = rng.uniform(0.1, 2.0, 15)
        b = rng.standard_normal(10)
        params = HyperParams(1.0, 2.0, np.ones(15))
        alpha, _ = alpha_update(self._state(theta, params), b, linops.dense(a), exact=True)
        scaled = a * np.sqrt(theta)
        want = np.sqrt(theta) * dense_tikhonov(scaled, b)
        np.testing.assert_allclose(alpha, want, rtol=1e-8, atol=1e-12)


class TestIasRun:
    def test_zero_data_rest_point(self):
        params = HyperParams.from_eta(1.0, 1e-4, np.ones(8))
        prob = Problem(linops.dense(np.ones((4, 8))), np.zeros(4))
        rep = ias_run(prob, params, StoppingRule(10, 1e-6, after_fixed(100)))
        state = rep.final_state
        assert np.array_equal(state.alpha, np.zeros(8))
        np.testing.assert_allclose(state.theta, phi_zero(params), rtol=1e-14)
        assert rep.stop_reason == "theta_rtol"
        assert len(rep.objective_trace) == rep.outer_iterations

    def test_single_atom_fixed_point(self):
        params = HyperParams.from_eta(1.0, 1e-4, np.ones(1))
        prob = Problem(linops.dense(np.array([[1.0]])), np.array([5.0]))
        rep = ias_run(prob, params, StoppingRule(200, 1e-14, after_fixed(10**9)), exact_alpha=True)
        alpha = rep.final_state.alpha[0]
        theta = rep.final_state.theta[0]
        # stationarity in alpha: Tikhonov normal equation for the scalar model
        assert alpha == pytest.approx(5.0 * theta / (1.0 + theta), rel=1e-8)
        # stationarity in theta: the componentwise update reproduces theta
        assert theta == pytest.approx(theta_update(alpha, 1.0, params), rel=1e-8)

    def test_objective_non_increasing_exact_mode(self):
        rng = np.random.default_rng(7)
        m, b, _ = make_dense_problem(rng, 20, 40)
        params = HyperParams.from_eta(1.0, 1e-3, sensitivity_weights(m))
        rep = ias_run(Problem(m, b), params, StoppingRule(25, 1e-12, after_fixed(10**9)), exact_alpha=True)
        trace = np.array(rep.objective_trace)
        assert np.all(np.diff(trace) <= 1e-10)

    def test_theta_stays_positive_and_floored(self):
        rng = np.random.default_rng(8)
        m, b, _ = make_dense_problem(rng, 15, 30)
        params = HyperParams.from_eta(1.0, 1e-4, sensitivity_weights(m))
        rep = ias_run(Problem(m, b), params, StoppingRule(30, 1e-9, after_fixed(10**9)))
        theta = rep.final_state.theta
        floor = params.theta_scale * phi_zero(params)
        assert np.all(theta > 0)
        assert np.all(theta >= floor * (1 - 1e-12))

    def test_rejects_boundary_params(self):
        params = HyperParams(0.5, 3.0, np.ones(4))  # eta = 0
        with pytest.raises(ParameterError, match="strictly admissible"):
            ias_run(Problem(linops.dense(np.ones((2, 4))), np.ones(2)), params)

    def test_rejects_mismatched_data(self):
        params = HyperParams.from_eta(1.0, 1e-4, np.ones(4))
        with pytest.raises(ValueError, match="rows"):
            ias_run(Problem(linops.dense(np.ones((2, 4))), np.ones(3)), params)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((12, 20))
        b = rng.standard_normal(12)
        perm = rng.permutation(20)
        scales = sensitivity_weights(linops.dense(a))
        params = HyperParams.from_eta(1.0, 1e-3, scales)
        rep = ias_run(Problem(linops.dense(a), b), params, StoppingRule(20, 1e-12, after_fixed(10**9)))
        params_p = HyperParams.from_eta(1.0, 1e-3, scales[perm])
        rep_p = ias_run(Problem(linops.dense(a[:, perm]), b), params_p, StoppingRule(20, 1e-12, after_fixed(10**9)))
        np.testing.assert_allclose(rep_p.final_state.alpha, rep.final_state.alpha[perm], atol=1e-8)

    def test_column_scaling_consistency(self):
        # rescaling one column while its sensitivity weight is recomputed
        # leaves the synthesized data contribution unchanged
        rng = np.random.default_rng(10)
        a = rng.standard_normal((10, 20))
        b = rng.standard_normal(10)
        scaled = a.copy()
        scaled[:, 7] *= 3.7
        runs = []
        for mat in (a, scaled):
            m = linops.dense(mat)
            params = HyperParams.from_eta(1.0, 1e-3, sensitivity_weights(m))
            rep = ias_run(Problem(m, b), params, StoppingRule(15, 1e-12, after_fixed(10**9)))
            runs.append(mat @ rep.final_state.alpha)
        np.testing.assert_allclose(runs[0], runs[1], atol=1e-8)

    def test_nonneg_projection(self):
        rng = np.random.default_rng(11)
        m, b, _ = make_dense_problem(rng, 10, 16)
        params = HyperParams.from_eta(1.0, 1e-3, sensitivity_weights(m))
        rep = ias_run(Problem(m, b), params, StoppingRule(10, 1e-9, after_fixed(10**9)), nonneg_projection=True)
        assert np.all(rep.final_state.alpha >= 0)

    def test_support_counts_per_frame(self):
        d = linops.CompositeDictionary([("a", linops.identity(6)), ("b", linops.identity(6))])
        m = linops.concat_horizontal(d)
        params = HyperParams.from_eta(1.0, 1e-4, sensitivity_weights(m))
        rep = ias_run(Problem(m, np.zeros(6), d), params, StoppingRule(3, 1e-12, after_fixed(10**9)))
        assert all(counts.shape == (2,) for counts in rep.support_per_frame)


class TestHybrids:
    def _problem(self, rng, m=16, n=32):
        mp, b, _ = make_dense_problem(rng, m, n)
        return Problem(mp, b)

    def test_degenerate_second_regime_matches_plain(self):
        rng = np.random.default_rng(12)
        prob = self._problem(rng)
        scales = sensitivity_weights(prob.forward_dict)
        params = HyperParams.from_eta(1.0, 1e-3, scales)
        stop = StoppingRule(18, 1e-15, after_fixed(6))
        plain = ias_run(prob, params, stop)
        hybrid = hybrid_global(prob, params, params.r, params.beta, stop)
        np.testing.assert_allclose(hybrid.final_state.alpha, plain.final_state.alpha, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(hybrid.final_state.theta, plain.final_state.theta, rtol=1e-12)

    def test_switch_at_zero_equals_cold_start(self):
        rng = np.random.default_rng(13)
        prob = self._problem(rng)
        params1 = HyperParams.from_eta(1.0, 1e-4, sensitivity_weights(prob.forward_dict))
        r2, beta2 = 0.5, (1e-3 + 1.5) / 0.5
        hybrid = hybrid_global(prob, params1, r2, beta2, StoppingRule(12, 1e-15, after_fixed(0)))
        params2 = HyperParams(r2, beta2, compatible_scale(params1, r2, beta2))
        cold = ias_run(prob, params2, StoppingRule(12, 1e-15, after_fixed(10**9)))
        np.testing.assert_allclose(hybrid.final_state.alpha, cold.final_state.alpha, rtol=1e-10, atol=1e-14)
        assert hybrid.switch_iteration == 0

    def test_switch_marks_iteration(self):
        rng = np.random.default_rng(14)
        prob = self._problem(rng)
        params1 = HyperParams.from_eta(1.0, 1e-4, sensitivity_weights(prob.forward_dict))
        rep = hybrid_global(prob, params1, 0.5, (1e-3 + 1.5) / 0.5, StoppingRule(20, 1e-15, after_fixed(10)))
        assert rep.switch_iteration == 10
        assert (rep.final_state.phase == 2).all()

    def test_requires_convex_first_regime(self):
        rng = np.random.default_rng(15)
        prob = self._problem(rng)
        params1 = HyperParams.from_eta(0.5, 1e-3, sensitivity_weights(prob.forward_dict))
        with pytest.raises(ParameterError, match="globally convex"):
            hybrid_global(prob, params1, 0.5, (1e-3 + 1.5) / 0.5)

    def test_local_all_switch_for_convex_second_regime(self):
        rng = np.random.default_rng(16)
        prob = self._problem(rng)
        params1 = HyperParams.from_eta(1.0, 1e-3, sensitivity_weights(prob.forward_dict))
        rep = hybrid_local(prob, params1, 2.0, 1.0, StoppingRule(6, 1e-15, after_fixed(10**9)))
        assert (rep.final_state.phase == 2).all()
        assert rep.switch_iteration == 1

    def test_local_threshold_sits_above_rest_point(self):
        # Under the compatibility rescaling the switch threshold is always
        # (1/(1-r))^(1/r) times the zero-coefficient variance, so resting
        # components enter regime two immediately regardless of eta2.
        rng = np.random.default_rng(17)
        prob = self._problem(rng)
        scales = sensitivity_weights(prob.forward_dict)
        params1 = HyperParams.from_eta(1.0, 1e-3, scales)
        for eta2 in (1e-2, 1e-9):
            r2, beta2 = 0.5, (eta2 + 1.5) / 0.5
            params2 = HyperParams(r2, beta2, compatible_scale(params1, r2, beta2))
            from sparse_ias.hyperprior import convexity_threshold

            rest = params1.theta_scale * phi_zero(params1)
            np.testing.assert_allclose(
                convexity_threshold(params2) / rest, (1 / (1 - r2)) ** (1 / r2), rtol=1e-10
            )
            rep = hybrid_local(prob, params1, r2, beta2, StoppingRule(4, 1e-15, after_fixed(10**9)))
            assert rep.switch_iteration is not None and rep.switch_iteration <= 2
            assert (rep.final_state.phase == 2).any()

    def test_local_switch_is_permanent_and_threshold_consistent(self):
        rng = np.random.default_rng(18)
        prob = self._problem(rng, m=20, n=40)
        params1 = HyperParams.from_eta(1.0, 1e-3, sensitivity_weights(prob.forward_dict))
        r2, beta2 = 0.5, (1e-2 + 1.5) / 0.5
        short = hybrid_local(prob, params1, r2, beta2, StoppingRule(3, 1e-15, after_fixed(10**9)))
        long = hybrid_local(prob, params1, r2, beta2, StoppingRule(9, 1e-15, after_fixed(10**9)))
        early = set(np.flatnonzero(short.final_state.phase == 2))
        late = set(np.flatnonzero(long.final_state.phase == 2))
        assert early <= late
        # any component still in phase 1 must sit at or above the threshold
        params2 = HyperParams(r2, beta2, compatible_scale(params1, r2, beta2))
        from sparse_ias.hyperprior import convexity_threshold

        thresholds = convexity_threshold(params2)
        state = long.final_state
        still = state.phase == 1
        assert np.all(state.theta[still] >= thresholds[still])


class TestStoppingRules:
    def test_phase_switch_validation(self):
        with pytest.raises(ValueError, match="trigger"):
            PhaseSwitch()
        with pytest.raises(ValueError, match="after_iters"):
            after_fixed(-1)
        with pytest.raises(ValueError, match="theta_rtol"):
            on_theta_rtol(0.0)

    def test_phase_switch_fires(self):
        assert after_fixed(3).fires(3, None)
        assert not after_fixed(3).fires(2, 1e-9)
        assert on_theta_rtol(1e-3).fires(1, 1e-4)
        assert whichever_first(5, 1e-3).fires(5, 1.0)
        assert whichever_first(5, 1e-3).fires(1, 1e-4)

    def test_stopping_rule_validation(self):
        with pytest.raises(ValueError, match="max_outer"):
            StoppingRule(max_outer=0)
        with pytest.raises(ValueError, match="theta_rtol"):
            StoppingRule(theta_rtol=0.0)
