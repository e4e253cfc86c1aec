import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.stats import norm

from jfbar.errors import InvalidArgumentError, NumericError
from jfbar.likelihood import SubjectRecord, ParameterVector, subject_log_m1
from jfbar.hazard import PiecewiseHazard
from jfbar.quadrature import (
    AdaptiveQuadState,
    adaptive_integrate,
    adaptive_log_integrate,
    find_mode,
    gauss_hermite_rule,
)

from conftest import adaptive_simpson

SQRT_PI = math.sqrt(math.pi)


def golub_welsch_dense(m):
    """Reference nodes/weights from a dense eigen-decomposition of the Jacobi matrix."""
    J = np.zeros((m, m))
    off = np.sqrt(np.arange(1, m) / 2.0)
    J[np.arange(m - 1), np.arange(1, m)] = off
    J[np.arange(1, m), np.arange(m - 1)] = off
    vals, vecs = np.linalg.eigh(J)
    return vals, SQRT_PI * vecs[0] ** 2


class TestRule:
    def test_order_one(self):
        r = gauss_hermite_rule(1)
        assert_allclose(r.nodes, [0.0])
        assert_allclose(r.weights, [SQRT_PI], rtol=1e-14)

    def test_order_two(self):
        r = gauss_hermite_rule(2)
        assert_allclose(r.nodes, [-1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-15)
        assert_allclose(r.weights, [SQRT_PI / 2] * 2, rtol=1e-14)

    def test_order_twenty_matches_dense_golub_welsch(self):
        x, w = golub_welsch_dense(20)
        r = gauss_hermite_rule(20)
        assert_allclose(r.nodes, x, atol=1e-12)
        assert_allclose(r.weights, w, atol=1e-12)

    @pytest.mark.parametrize("m", [3, 10, 30, 64, 128])
    def test_invariants(self, m):
        r = gauss_hermite_rule(m)
        assert np.all(np.diff(r.nodes) > 0)
        assert_allclose(r.nodes, -r.nodes[::-1], atol=1e-12)
        assert np.all(r.weights > 0)
        assert_allclose(r.weights, r.weights[::-1], atol=1e-12)
        assert abs(r.weights.sum() - SQRT_PI) < 1e-10
        assert abs(np.sum(r.weights * r.nodes**2) - SQRT_PI / 2) < 1e-10

    def test_matches_numpy_hermgauss(self):
        for m in (5, 40, 100):
            x, w = np.polynomial.hermite.hermgauss(m)
            r = gauss_hermite_rule(m)
            assert_allclose(r.nodes, x, atol=1e-13)
            assert_allclose(r.weights, w, rtol=1e-10, atol=1e-300)

    @pytest.mark.parametrize("bad", [0, -1, 129, 2.5, True])
    def test_out_of_range(self, bad):
        with pytest.raises(InvalidArgumentError):
            gauss_hermite_rule(bad)

    def test_immutable_and_deterministic(self):
        a, b = gauss_hermite_rule(12), gauss_hermite_rule(12)
        assert np.array_equal(a.nodes, b.nodes)
        with pytest.raises(ValueError):
            a.nodes[0] = 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=8, max_size=8))
    def test_polynomial_exactness(self, coef):
        # degree 7 = 2m - 1 for m = 4
        r = gauss_hermite_rule(4)
        exact = sum(c * (math.gamma((k + 1) / 2) if k % 2 == 0 else 0.0) for k, c in enumerate(coef))
        approx = r.integrate_raw(lambda x: np.polynomial.polynomial.polyval(x, coef))
        assert abs(approx - exact) < 1e-9 * max(1.0, sum(abs(c) for c in coef))


class TestFindMode:
    def test_standard_normal_kernel(self):
        s = find_mode(lambda u: -u * u / 2, u0=3.0)
        assert abs(s.mode) < 1e-7
        assert_allclose([s.curvature, s.scale], [1.0, 1.0], rtol=1e-5)

    def test_shifted_gaussian(self):
        # curvature 4 gives scale 1/sqrt(4) = 0.5
        s = find_mode(lambda u: -(u - 2) ** 2 / (2 * 0.25), u0=0.0)
        assert abs(s.mode - 2) < 1e-7
        assert_allclose(s.curvature, 4.0, rtol=1e-5)
        assert_allclose(s.scale, 0.5, rtol=1e-5)

    def test_analytic_derivatives(self):
        s = find_mode(lambda u: -(u - 1) ** 2, 5.0, lambda u: -2 * (u - 1), lambda u: -2.0)
        assert abs(s.mode - 1) < 1e-9
        assert s.curvature == 2.0

    def test_frailty_integrand_matches_dense_grid(self):
        cuts = np.array([0.0, 0.5, 2.0])
        params = ParameterVector([0.3], [-0.2], PiecewiseHazard(cuts, [5.0, 5.2]), PiecewiseHazard(cuts, [8.0, 8.2]), 1.0, 1.0)
        subj = SubjectRecord([0.2, 0.7], 0.9, 1, [0.5], [1.0])
        log_m1, d1, d2 = subject_log_m1(subj, params)
        s = find_mode(lambda u: float(log_m1(np.array([u]))[0]), 0.0, lambda u: float(d1(u)), lambda u: float(d2(u)))
        grid = np.arange(-10, 10, 1e-4)
        assert abs(s.mode - grid[np.argmax(log_m1(grid))]) < 1e-3

    def test_flat_curvature_is_clamped(self):
        s = AdaptiveQuadState.from_curvature(0.0, 0.0)
        assert s.curvature == 1e-8
        assert s.scale == pytest.approx(1e4)

    def test_nonfinite_start(self):
        with pytest.raises(InvalidArgumentError):
            find_mode(lambda u: -u * u, u0=float("nan"))
        with pytest.raises(InvalidArgumentError):
            find_mode(lambda u: -np.inf, u0=0.0)

    def test_nonconvergence(self):
        with pytest.raises(NumericError) as exc:
            find_mode(lambda u: u, u0=0.0, max_iter=5)
        assert exc.value.last_iterate is not None


class TestAdaptiveIntegrate:
    @pytest.mark.parametrize("m", [1, 2, 5, 30])
    def test_standard_normal(self, m):
        st0 = AdaptiveQuadState(0.0, 1.0, 1.0)
        assert abs(adaptive_integrate(norm.pdf, st0, gauss_hermite_rule(m)) - 1.0) < 1e-12

    def test_shifted_normal_from_find_mode(self):
        logpdf = lambda u: norm.logpdf(u, 2.0, 0.5)
        s = find_mode(logpdf, 0.0)
        val = adaptive_integrate(logpdf, s, gauss_hermite_rule(10), log_space=True)
        assert abs(val - 1.0) < 1e-10

    def test_frailty_integrand_vs_simpson(self):
        cuts = np.array([0.0, 0.4, 1.1, 2.0])
        params = ParameterVector([0.4, -0.3], [0.2, 0.1], PiecewiseHazard(cuts, [5.0, 5.1, 5.3]),
                                 PiecewiseHazard(cuts, [8.0, 8.1, 8.3]), -0.6, 1.0)
        rng = np.random.default_rng(7)
        for _ in range(5):
            k = rng.integers(0, 4)
            Y = rng.uniform(0.3, 2.0)
            times = np.sort(rng.uniform(0, Y, k))
            subj = SubjectRecord(times, Y, int(rng.integers(0, 2)), rng.normal(size=2), rng.normal(size=2))
            log_m1, d1, d2 = subject_log_m1(subj, params)
            s = find_mode(lambda u: float(log_m1(np.array([u]))[0]), 0.0, lambda u: float(d1(u)), lambda u: float(d2(u)))
            approx = adaptive_integrate(log_m1, s, gauss_hermite_rule(30), log_space=True)
            peak = float(log_m1(np.array([s.mode]))[0])
            f = lambda u: math.exp(float(log_m1(np.array([u]))[0]) - peak)
            ref = adaptive_simpson(f, s.mode - 12 * s.scale, s.mode + 12 * s.scale, tol=1e-10 * s.scale) * math.exp(peak)
            assert abs(approx / ref - 1) < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.2, 5.0))
    def test_translation_scale_covariance(self, a, b):
        rule = gauss_hermite_rule(20)
        # skewed but smooth base integrand (Gumbel-type log density)
        log_f = lambda x: x - np.exp(x)
        s_f = find_mode(lambda x: float(log_f(x)), 0.0)
        log_g = lambda u: log_f((u - a) / b) - math.log(b)
        s_g = AdaptiveQuadState(a + b * s_f.mode, b * s_f.scale, s_f.curvature / b**2)
        I_f = adaptive_integrate(log_f, s_f, rule, log_space=True)
        I_g = adaptive_integrate(log_g, s_g, rule, log_space=True)
        assert abs(I_g / I_f - 1) < 1e-8

    def test_nonfinite_node_reported(self):
        s = AdaptiveQuadState(0.0, 1.0, 1.0)
        with pytest.raises(NumericError, match="node"):
            adaptive_integrate(lambda u: np.where(u > 1, np.nan, 1.0), s, gauss_hermite_rule(6))
        with pytest.raises(NumericError, match="node"):
            adaptive_log_integrate(lambda u: np.where(u > 1, np.inf, 0.0), s, gauss_hermite_rule(6))

    def test_log_space_avoids_underflow(self):
        s = AdaptiveQuadState(0.0, 1.0, 1.0)
        val = adaptive_log_integrate(lambda u: -2000.0 - u * u / 2, s, gauss_hermite_rule(10))
        assert val == pytest.approx(-2000.0 + 0.5 * math.log(2 * math.pi), rel=1e-12)

    def test_monotone_refinement(self, sim300):
        from jfbar.likelihood import subject_m1_state

        _, data, params = sim300
        hits = 0
        for subj in data.subjects[:100]:
            log_m1, _, _ = subject_log_m1(subj, params)
            s = subject_m1_state(subj, params)
            I = {m: adaptive_integrate(log_m1, s, gauss_hermite_rule(m), log_space=True) for m in (10, 20, 30, 40)}
            hits += abs(I[40] - I[30]) <= abs(I[20] - I[10])
        assert hits >= 90
