"""Moment functions, analytic derivatives, residual-moment estimators."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orthoplr.dgp import NoiseDistribution, default_discrete_eta, exact_noise_moments
from orthoplr.moments import (
    MomentSpec,
    NuisanceEstimate,
    NuisancePoint,
    dalpha_moment,
    dtheta_moment,
    estimate_residual_moments,
    moment_first_order,
    moment_second_order,
    moment_value,
    nongaussian_gap,
    population_jacobian,
    require_nongaussian,
)
from orthoplr.ortho_check import finite_diff_differential
from orthoplr.rng import derive_rng

val = st.floats(-5, 5, allow_nan=False)

SPECS = {
    "first_order": MomentSpec.first_order(),
    "second_r2": MomentSpec.second_order(2),
    "second_r3": MomentSpec.second_order(3),
    "second_r3_known": MomentSpec.second_order(3, "known"),
}


def _alphas_for(spec, max_order=2):
    coords = 2 if spec.kind == "first_order" else (3 if spec.moment_mode == "known" else 4)
    out = []
    for alpha in itertools.product(range(max_order + 1), repeat=coords):
        if 0 < sum(alpha) <= max_order:
            out.append(tuple(alpha) + (0,) * (4 - coords))
    return out


class TestMomentValues:
    def test_first_order_zero_treatment_residual(self):
        assert moment_first_order(t=2.0, y=1.0, theta=5.0, q=0.3, g=2.0) == 0.0

    def test_first_order_exact_model(self):
        assert moment_first_order(t=1.0, y=3.0, theta=3.0, q=0.0, g=0.0) == 0.0

    def test_first_order_direct(self):
        assert moment_first_order(t=2.0, y=1.0, theta=0.0, q=0.0, g=0.0) == 2.0

    def test_second_order_zero_outcome_residual(self):
        pt = NuisancePoint(q=1.0, g=0.5, mu_prev=0.7, mu_r=0.2)
        t, theta = 2.0, 4.0
        y = pt.q + theta * (t - pt.g)
        assert moment_second_order(t, y, theta, pt, r=3) == 0.0

    def test_second_order_r3_direct(self):
        # first factor 1, e=1, mu2=1, mu3=0: weight = 1 - 0 - 3 = -2
        pt = NuisancePoint(q=0.0, g=0.0, mu_prev=1.0, mu_r=0.0)
        y = pt.q + 0.0 * 1.0 + 1.0  # first factor = 1 at theta=0
        assert moment_second_order(1.0, y, 0.0, pt, r=3) == -2.0

    def test_second_order_r2_weight_reduction(self):
        # with mu_prev = E[eta] = 0 the r=2 weight is e^2 - mu_2
        eta = 1.7
        mu2 = 1.0
        pt = NuisancePoint(q=0.0, g=0.0, mu_prev=0.0, mu_r=mu2)
        got = moment_second_order(eta, 1.0, 0.0, pt, r=2)
        assert got == pytest.approx(1.0 * (eta**2 - mu2))

    def test_invalid_r(self):
        with pytest.raises(ValueError):
            moment_second_order(1.0, 1.0, 1.0, NuisancePoint(0.0, 0.0), r=4)

    @given(val, val, val, val, val)
    def test_moment_linear_in_theta(self, t, y, theta, q, g):
        pt = NuisancePoint(q=q, g=g, mu_prev=0.3, mu_r=-0.2)
        spec = SPECS["second_r3"]
        m0 = moment_value(spec, t, y, theta, pt)
        m1 = moment_value(spec, t, y, theta + 1.0, pt)
        d = dtheta_moment(spec, t, y, theta, pt)
        assert float(m1 - m0) == pytest.approx(float(d), rel=1e-9, abs=1e-9)


class TestDthetaMoment:
    def test_first_order_value(self):
        spec = SPECS["first_order"]
        pt = NuisancePoint(q=0.0, g=0.0)
        assert dtheta_moment(spec, 2.0, 7.0, 1.0, pt) == -4.0

    def test_population_r3_default_eta(self):
        # oracle: -(E[eta^4] - 3 E[eta^2]^2) = -5.05 by exact enumeration
        spec = SPECS["second_r3"]
        d = default_discrete_eta()
        assert float(population_jacobian(spec, d)) == -5.05
        n = 100_000
        eta = d.sample(n, derive_rng(11, 1))
        pt = NuisancePoint(q=0.0, g=0.0, mu_prev=1.0, mu_r=-2.4)
        vals = np.asarray(dtheta_moment(spec, eta, 0.0, 0.0, pt))
        se = vals.std(ddof=1) / math.sqrt(n)
        assert abs(vals.mean() - (-5.05)) < 4 * se

    def test_population_gaussian_degenerate(self):
        spec = SPECS["second_r3"]
        g = NoiseDistribution.gaussian(1.0)
        assert float(population_jacobian(spec, g)) == 0.0
        n = 100_000
        eta = g.sample(n, derive_rng(11, 2))
        pt = NuisancePoint(q=0.0, g=0.0, mu_prev=1.0, mu_r=0.0)
        vals = np.asarray(dtheta_moment(spec, eta, 0.0, 0.0, pt))
        se = vals.std(ddof=1) / math.sqrt(n)
        assert abs(vals.mean()) < 4 * se


class TestDalphaClosedForms:
    @given(val, val, val, val, val, val, val)
    def test_q_mur_mixed_is_one(self, t, y, theta, q, g, mp, mr):
        pt = NuisancePoint(q=q, g=g, mu_prev=mp, mu_r=mr)
        out = dalpha_moment(SPECS["second_r3"], (1, 0, 0, 1), t, y, theta, pt)
        assert float(out) == 1.0

    @given(val, val, val, val, val, val, val)
    def test_g_mur_mixed_is_minus_theta(self, t, y, theta, q, g, mp, mr):
        pt = NuisancePoint(q=q, g=g, mu_prev=mp, mu_r=mr)
        out = dalpha_moment(SPECS["second_r3"], (0, 1, 0, 1), t, y, theta, pt)
        assert float(out) == pytest.approx(-theta, rel=1e-12, abs=1e-12)

    @given(val, val, val)
    def test_linear_in_mur(self, t, y, theta):
        pt = NuisancePoint(q=0.1, g=-0.4, mu_prev=0.2, mu_r=1.1)
        out = dalpha_moment(SPECS["second_r3"], (0, 0, 0, 2), t, y, theta, pt)
        assert float(out) == 0.0

    def test_alpha_zero_is_moment(self):
        pt = NuisancePoint(q=0.3, g=0.1, mu_prev=0.5, mu_r=0.7)
        spec = SPECS["second_r2"]
        a = dalpha_moment(spec, (0, 0, 0, 0), 1.2, 0.7, 2.0, pt)
        b = moment_value(spec, 1.2, 0.7, 2.0, pt)
        assert float(a) == pytest.approx(float(b), rel=1e-15)

    def test_first_order_gg_is_minus_two_theta(self):
        pt = NuisancePoint(q=0.0, g=0.0)
        out = dalpha_moment(SPECS["first_order"], (0, 2, 0, 0), 1.0, 2.0, 3.0, pt)
        assert float(out) == -6.0

    def test_first_order_rejects_mu_orders(self):
        with pytest.raises(ValueError):
            dalpha_moment(SPECS["first_order"], (0, 0, 1, 0), 1.0, 1.0, 1.0, NuisancePoint(0.0, 0.0))

    def test_known_mode_rejects_mur_order(self):
        with pytest.raises(ValueError):
            dalpha_moment(
                SPECS["second_r3_known"], (0, 0, 0, 1), 1.0, 1.0, 1.0, NuisancePoint(0.0, 0.0)
            )

    def test_order_above_three_rejected(self):
        with pytest.raises(ValueError):
            dalpha_moment(SPECS["second_r3"], (2, 2, 0, 0), 1.0, 1.0, 1.0, NuisancePoint(0.0, 0.0))


class TestDalphaVsFiniteDifferences:
    @pytest.mark.parametrize("name", ["first_order", "second_r2", "second_r3"])
    def test_agreement_over_random_points(self, name):
        spec = SPECS[name]
        rng = derive_rng(21, hash(name) % 1000)
        pts = rng.standard_normal((100, 7))
        t, y, theta = pts[:, 0], pts[:, 1], pts[:, 2]
        pt = NuisancePoint(q=pts[:, 3], g=pts[:, 4], mu_prev=pts[:, 5], mu_r=pts[:, 6])
        m_scale = np.abs(np.asarray(moment_value(spec, t, y, theta, pt), dtype=float))
        for alpha in _alphas_for(spec, max_order=2):
            exact = np.asarray(dalpha_moment(spec, alpha, t, y, theta, pt), dtype=float)
            fd = np.asarray(
                finite_diff_differential(spec, alpha, t, y, theta, pt), dtype=float
            )
            # relative to the larger of the derivative and the differenced
            # function: the stencil's roundoff floor is eps*|m|/h^2, so a
            # pure ratio against near-zero derivatives is meaningless
            scale = np.maximum(np.maximum(np.abs(exact), m_scale), 1.0)
            assert np.max(np.abs(fd - exact) / scale) < 1e-6, alpha

    def test_third_order_spot_checks(self):
        spec = SPECS["second_r3"]
        rng = derive_rng(22, 1)
        pts = rng.standard_normal((20, 7))
        t, y, theta = pts[:, 0], pts[:, 1], pts[:, 2]
        pt = NuisancePoint(q=pts[:, 3], g=pts[:, 4], mu_prev=pts[:, 5], mu_r=pts[:, 6])
        for alpha in [(0, 3, 0, 0), (1, 2, 0, 0), (0, 2, 1, 0), (1, 1, 0, 1)]:
            exact = np.asarray(dalpha_moment(spec, alpha, t, y, theta, pt), dtype=float)
            # larger step: third-order stencils at h=1e-4 are pure roundoff,
            # while the moments are polynomials so truncation stays exact
            fd = np.asarray(
                finite_diff_differential(spec, alpha, t, y, theta, pt, h=1e-2), dtype=float
            )
            assert np.allclose(fd, exact, rtol=1e-6, atol=1e-6), alpha


class TestPopulationOrthogonality:
    def test_identifiability_slope_r3(self):
        # at theta = theta0 + delta the population moment mean is
        # (theta0 - theta) * gap = -delta * 5.05 for the default law
        d = default_discrete_eta()
        gap = float(nongaussian_gap(d, 3))
        assert gap == 5.05
        n = 200_000
        rng = derive_rng(23, 1)
        eta = d.sample(n, rng)
        eps = rng.uniform(-1, 1, n)
        theta0, delta = 3.0, 0.5
        pt = NuisancePoint(q=0.0, g=0.0, mu_prev=1.0, mu_r=-2.4)
        t = eta
        y = theta0 * t + eps
        vals = np.asarray(moment_value(SPECS["second_r3"], t, y, theta0 + delta, pt))
        se = vals.std(ddof=1) / math.sqrt(n)
        assert abs(vals.mean() - (-delta * gap)) < 4 * se

    def test_first_order_not_second_order_orthogonal(self):
        # pure second derivative in g is identically -2*theta, nonzero
        pt = NuisancePoint(q=0.0, g=0.0)
        vals = dalpha_moment(SPECS["first_order"], (0, 2, 0, 0), np.ones(10), np.ones(10), 3.0, pt)
        assert np.all(np.asarray(vals) == -6.0)

    def test_nongaussian_gap_oracle(self):
        d = default_discrete_eta()
        assert float(nongaussian_gap(d, 2)) == pytest.approx(-2.4)
        assert float(nongaussian_gap(NoiseDistribution.gaussian(2.0), 3)) == 0.0
        assert float(nongaussian_gap(NoiseDistribution.gaussian(1.5), 2)) == 0.0

    def test_require_nongaussian(self):
        require_nongaussian(SPECS["second_r3"], default_discrete_eta())
        with pytest.raises(ValueError):
            require_nongaussian(SPECS["second_r3"], NoiseDistribution.gaussian(1.0))
        # uniform noise is symmetric: no skewness, so r=2 degenerates
        with pytest.raises(ValueError):
            require_nongaussian(SPECS["second_r2"], NoiseDistribution.uniform(1.0))


class TestResidualMoments:
    def test_constant_residuals(self):
        c = 1.3
        T = np.full(50, c)
        X = np.zeros((50, 2))
        mu2, mu3 = estimate_residual_moments(T, X, np.zeros(2))
        assert mu2 == pytest.approx(c**2)
        assert mu3 == pytest.approx(c**3 - 3 * c**2 * c)  # = -2 c^3

    def test_symmetric_sample_kills_mu3(self):
        a = 0.8
        T = np.array([a, -a] * 25)
        X = np.zeros((50, 1))
        _, mu3 = estimate_residual_moments(T, X, np.zeros(1))
        assert mu3 == pytest.approx(0.0, abs=1e-12)

    def test_lln_with_true_gamma(self):
        d = default_discrete_eta()
        n = 100_000
        rng = derive_rng(24, 1)
        p = 5
        X = rng.standard_normal((n, p))
        gamma0 = rng.uniform(0, 5, p)
        eta = d.sample(n, rng)
        T = X @ gamma0 + eta
        mu2, mu3 = estimate_residual_moments(T, X, gamma0)
        se2 = np.std(eta**2, ddof=1) / math.sqrt(n)
        se3 = np.std(eta**3 - 3.0 * eta, ddof=1) / math.sqrt(n)
        assert abs(mu2 - 1.0) < 4 * se2
        assert abs(mu3 - (-2.4)) < 4 * se3

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            estimate_residual_moments(np.array([]), np.zeros((0, 2)), np.zeros(2))


class TestNuisanceEstimate:
    def test_point_values_hardwire_mu1_for_r2(self):
        est = NuisanceEstimate(
            q_hat=np.zeros(3), gamma_hat=np.zeros(3), mu2_hat=1.5, mu3_hat=-0.7,
            mode="estimated",
        )
        assert est.point_values(SPECS["second_r2"]) == (0.0, 1.5)
        assert est.point_values(SPECS["second_r3"]) == (1.5, -0.7)
        assert est.point_values(SPECS["first_order"]) == (0.0, 0.0)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            NuisanceEstimate(
                q_hat=np.array([np.inf]), gamma_hat=np.zeros(1),
                mu2_hat=1.0, mu3_hat=0.0, mode="estimated",
            )
