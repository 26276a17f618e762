import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from gdl.minimax_lab import (
    BumpFunction,
    FamilyInvalidError,
    PackingError,
    PerturbedFamily,
    ball_quadrature,
    bandwidth,
    bump_eval,
    fisher_information,
    inverse_map,
    log_density,
    loglog_slope,
    lower_bound_curve,
    packing_centers,
    prior_energy_ball,
    prior_energy_product,
    score,
    score_lower_bound_check,
    van_trees_rhs,
)

BUMP1 = BumpFunction()
BUMP2 = BumpFunction(d=2)


def phi(t):
    return math.e * math.exp(-1.0 / (1.0 - t * t)) if abs(t) < 1 else 0.0


def dphi(t):
    s = 1.0 - t * t
    return phi(t) * (-2.0 * t / s ** 2) if abs(t) < 1 else 0.0


def d2phi(t):
    if abs(t) >= 1:
        return 0.0
    s = 1.0 - t * t
    return phi(t) * ((2.0 * t / s ** 2) ** 2 - 2.0 / s ** 2 - 8.0 * t * t / s ** 3)


def single(h, theta, beta=3.0, center=0.5):
    return PerturbedFamily(h, beta, np.array([[center]]), [theta], BUMP1)


class TestBump:
    @pytest.mark.parametrize("b", [BUMP1, BUMP2, BumpFunction(d=3)])
    def test_origin(self, b):
        val, grad, hess = bump_eval(b, np.zeros(b.d))
        assert val == pytest.approx(1.0, abs=1e-15)
        assert np.array_equal(grad, np.zeros(b.d))
        assert np.allclose(hess, -2.0 * np.eye(b.d), atol=1e-15)

    @pytest.mark.parametrize("x", [[1.2, 0.0], [0.0, -1.0], [0.8, 0.6], [3.0, 3.0]])
    def test_zero_outside_support(self, x):
        val, grad, hess = bump_eval(BUMP2, np.array(x))
        assert val == 0.0 and not grad.any() and not hess.any()

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal((20, 2))
        pts = u / np.linalg.norm(u, axis=1, keepdims=True) * rng.uniform(0.05, 0.85, (20, 1))
        _, grad, hess = bump_eval(BUMP2, pts)
        step = 1e-6
        for k in range(2):
            e = np.zeros(2)
            e[k] = step
            vp, gp, _ = bump_eval(BUMP2, pts + e)
            vm, gm, _ = bump_eval(BUMP2, pts - e)
            fd = (vp - vm) / (2 * step)
            assert np.allclose(fd, grad[:, k], rtol=1e-6, atol=1e-12)
            assert np.allclose((gp - gm) / (2 * step), hess[:, :, k], rtol=1e-5, atol=1e-9)

    def test_one_dimensional_matches_scalar_formula(self):
        t = np.linspace(-0.95, 0.95, 39)
        val, grad, hess = bump_eval(BUMP1, t)
        assert np.allclose(val, [phi(s) for s in t], rtol=1e-14)
        assert np.allclose(grad[:, 0], [dphi(s) for s in t], rtol=1e-13, atol=1e-15)
        assert np.allclose(hess[:, 0, 0], [d2phi(s) for s in t], rtol=1e-12, atol=1e-14)

    def test_holder_constant_recorded(self):
        assert BUMP1.h_phi >= 2.0
        assert BumpFunction(h_phi=7.0).h_phi == 7.0

    @pytest.mark.parametrize("kwargs", [{"c": 0.0}, {"d": 0}])
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ValueError):
            BumpFunction(**kwargs)


class TestPacking:
    def test_gaps_in_one_dimension(self):
        c = packing_centers(0.05, 1)[:, 0]
        assert c[0] == pytest.approx(1 / 3)
        assert np.allclose(np.diff(c), 0.11)
        assert np.diff(c).min() > 0.1

    @pytest.mark.parametrize("h", [0.2, 1 / 12, 0.0, -0.01])
    def test_too_large_or_nonpositive(self, h):
        with pytest.raises(PackingError):
            packing_centers(h, 1)

    @pytest.mark.parametrize("h,d", [(0.05, 1), (0.01, 1), (0.03, 2), (0.05, 3)])
    def test_containment_separation_and_count(self, h, d):
        c = packing_centers(h, d)
        assert c.min() >= 1 / 3 - 1e-12 and c.max() <= 2 / 3 + 1e-12
        assert len(c) >= math.floor(1 / (12 * h)) ** d
        if len(c) > 1:
            dist = np.linalg.norm(c[:, None] - c[None], axis=2)
            np.fill_diagonal(dist, np.inf)
            assert dist.min() > 2 * h

    def test_family_accepts_packing(self):
        h = 0.02
        c = packing_centers(h, 1)
        fam = PerturbedFamily(h, 3.0, c, np.zeros(len(c)), BUMP1)
        assert fam.M == len(c) and fam.d == 1


class TestFamilyValidation:
    @pytest.mark.parametrize("kwargs", [
        {"h": 0.0}, {"beta": 2.0}, {"theta": [0.2]}, {"centers": [[0.5, 0.5]]}, {"theta": [0.0, 0.0]},
    ])
    def test_rejects(self, kwargs):
        args = {"h": 0.1, "beta": 3.0, "centers": [[0.5]], "theta": [0.05], "bump": BUMP1} | kwargs
        with pytest.raises(ValueError):
            PerturbedFamily(**args)

    def test_rejects_close_centers(self):
        with pytest.raises(ValueError):
            PerturbedFamily(0.05, 3.0, [[0.4], [0.49]], [0.0, 0.0], BUMP1)

    def test_immutable_arrays(self):
        fam = single(0.05, 0.01)
        with pytest.raises(ValueError):
            fam.theta[0] = 1.0

    def test_with_theta(self):
        fam = single(0.05, 0.0).with_theta([0.03])
        assert fam.theta[0] == 0.03 and fam.h == 0.05


class TestInverseMap:
    def test_zero_theta_identity(self):
        x = np.linspace(0, 1, 41)
        assert np.array_equal(inverse_map(single(0.05, 0.0), x)[:, 0], x)

    def test_outside_bumps_unchanged(self):
        x = np.array([0.1, 0.3, 0.45, 0.55, 0.9])
        assert np.array_equal(inverse_map(single(0.05, 0.05), x)[:, 0], x)

    @pytest.mark.parametrize("h", [0.05, 0.1])
    def test_half_radius_value(self, h):
        beta = 3.0
        x = 0.5 + h / 2
        expected = x + h ** (beta + 1) * dphi(0.5)
        assert inverse_map(single(h, h, beta), x)[0] == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("h,theta", [(0.05, 0.05), (0.2, -0.15)])
    def test_derivative_is_density(self, h, theta):
        fam = single(h, theta)
        x = 0.5 + h * np.linspace(-0.8, 0.8, 9)
        step = 1e-6
        fd = (inverse_map(fam, x + step) - inverse_map(fam, x - step))[:, 0] / (2 * step)
        assert np.allclose(fd, np.exp(log_density(fam, x)), rtol=1e-8)

    def test_two_dimensional_single_point(self):
        fam = PerturbedFamily(0.05, 3.0, [[0.5, 0.5]], [0.05], BUMP2)
        out = inverse_map(fam, [0.52, 0.5])
        assert out.shape == (2,) and out[1] == pytest.approx(0.5, abs=1e-15)


class TestLogDensity:
    def test_zero_theta(self):
        assert not np.any(log_density(single(0.05, 0.0), np.linspace(0, 1, 33)))

    def test_outside_bumps(self):
        assert not np.any(log_density(single(0.05, 0.05), np.array([0.1, 0.44, 0.56, 0.99])))

    @pytest.mark.parametrize("h,theta", [(0.05, 0.05), (0.1, -0.07), (0.2, 0.2)])
    def test_scalar_formula(self, h, theta):
        beta = 3.0
        x = 0.5 + h * np.linspace(-0.9, 0.9, 13)
        expected = [math.log(1 + h ** (beta - 1) * theta * d2phi((xi - 0.5) / h)) for xi in x]
        assert np.allclose(log_density(single(h, theta, beta), x), expected, rtol=0, atol=1e-12)

    def test_invalid_family_raises(self):
        # 1 + h^(beta-1) theta phi''(0) = 1 - 2 < 0
        fam = PerturbedFamily(1.0, 2.5, [[0.5]], [1.0], BUMP1)
        with pytest.raises(FamilyInvalidError):
            log_density(fam, 0.5)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_random_theta_normalizes(self, seed):
        h = 0.04
        c = packing_centers(h, 1)
        rng = np.random.default_rng(seed)
        u = rng.standard_normal(len(c))
        theta = u / np.linalg.norm(u) * h * rng.random()
        fam = PerturbedFamily(h, 3.0, c, theta, BUMP1)
        total = 1.0
        for j in range(fam.M):
            nodes, w = ball_quadrature(c[j], h, 64)
            total += np.dot(w, np.exp(log_density(fam, nodes)) - 1.0)
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_density_near_one_for_small_h(self):
        h = 0.02
        c = packing_centers(h, 1)
        fam = PerturbedFamily(h, 3.0, c, np.full(len(c), h / math.sqrt(len(c))), BUMP1)
        p = np.exp(log_density(fam, np.linspace(0, 1, 2001)))
        lam = 1.01
        assert p.min() >= 1 / lam and p.max() <= lam


class TestScore:
    def test_zero_theta_trace_formula(self):
        h, beta = 0.05, 3.0
        x = 0.5 + h * np.linspace(-0.9, 0.9, 11)
        expected = [h ** (beta - 1) * d2phi((xi - 0.5) / h) for xi in x]
        assert np.allclose(score(single(h, 0.0), x, 0), expected, rtol=1e-13, atol=1e-18)

    def test_outside_ball_zero(self):
        assert not np.any(score(single(0.05, 0.03), np.array([0.2, 0.44, 0.56, 0.8]), 0))

    def test_bad_index(self):
        with pytest.raises(IndexError):
            score(single(0.05, 0.0), 0.5, 1)

    @pytest.mark.parametrize("d", [1, 2])
    def test_finite_differences(self, d):
        rng = np.random.default_rng(d)
        h, beta, step = 0.3, 3.0, 1e-7
        centers = [[0.2] * d, [0.8] * d]
        bump = BumpFunction(d=d)
        worst = 0.0
        for _ in range(50):
            theta = rng.uniform(-0.2, 0.2, 2)
            fam = PerturbedFamily(h, beta, centers, theta, bump)
            j = int(rng.integers(2))
            x = fam.centers[j] + rng.uniform(-0.15, 0.15, d)
            e = np.zeros(2)
            e[j] = step
            fd = (log_density(fam.with_theta(theta + e), x) - log_density(fam.with_theta(theta - e), x)) / (2 * step)
            s = score(fam, x, j)
            worst = max(worst, abs(fd - s) / abs(s))
        assert worst <= 1e-5


class TestFisher:
    @pytest.fixture(scope="class")
    @classmethod
    def phi2_integral(cls):
        return integrate.quad(lambda t: d2phi(t) ** 2, -1, 1, epsabs=1e-13, epsrel=1e-12, limit=200)[0]

    @pytest.mark.parametrize("h", [0.01, 0.04, 0.2])
    def test_closed_form_at_zero(self, h, phi2_integral):
        beta = 3.0
        expected = h ** (2 * beta - 1) * phi2_integral
        assert fisher_information(single(h, 0.0, beta)).total == pytest.approx(expected, rel=1e-6, abs=0)
        assert fisher_information(single(h, 0.0, beta), 200).total == pytest.approx(expected, rel=1e-10, abs=0)

    def test_slope_over_h(self):
        hs = [0.04, 0.02, 0.01]
        vals = [fisher_information(single(h, 0.0)).total for h in hs]
        assert loglog_slope(hs, vals) == pytest.approx(2 * 3.0 + 1 - 2, abs=0.2)

    def test_slope_two_dimensional(self):
        hs = [0.04, 0.02, 0.01]
        vals = [fisher_information(PerturbedFamily(h, 3.0, [[0.5, 0.5]], [0.0], BUMP2), 32).total for h in hs]
        assert loglog_slope(hs, vals) == pytest.approx(2 * 3.0 + 2 - 2, abs=0.2)

    def test_entries_nonnegative_and_sum(self):
        h = 0.04
        c = packing_centers(h, 1)
        theta = np.random.default_rng(0).uniform(-1, 1, len(c))
        theta *= 0.9 * h / np.linalg.norm(theta)
        est = fisher_information(PerturbedFamily(h, 3.0, c, theta, BUMP1))
        assert np.all(est.per_index >= 0)
        assert est.total == pytest.approx(est.per_index.sum())
        assert est.quadrature_id == "ball-gl64^1"


class TestVanTrees:
    def test_zero_fisher(self):
        assert van_trees_rhs(4, 100, 0.0, 8.0) == 2.0

    def test_monotone_in_n(self):
        vals = [van_trees_rhs(4, n, 1e-3, 50.0) for n in (10, 20, 40, 80)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_double_entry(self):
        h, M, n = 0.04, 4, 1000
        c = packing_centers(h, 1)[:M]
        fisher = fisher_information(PerturbedFamily(h, 3.0, c, np.zeros(M), BUMP1)).total
        energy = prior_energy_ball(M, h, samples=20_000)
        got = van_trees_rhs(M, n, fisher, energy)
        assert got == pytest.approx(16.0 / (1000.0 * fisher + energy), rel=1e-15)
        assert 0 < got < M * h * h

    @pytest.mark.parametrize("denom", [(0.0, 0.0), (-1.0, 0.0)])
    def test_degenerate(self, denom):
        with pytest.raises(ValueError):
            van_trees_rhs(4, 1, *denom)

    @pytest.mark.parametrize("M", [1, 3])
    def test_prior_energy_scales_as_m_over_h_squared(self, M):
        a, b = prior_energy_product(M, 0.1), prior_energy_product(M, 0.05)
        assert b / a == pytest.approx(4.0, rel=1e-12)
        assert prior_energy_product(2 * M, 0.1) == pytest.approx(2 * a, rel=1e-12)

    def test_ball_prior_energy_deterministic(self):
        assert prior_energy_ball(3, 0.1, 5000, seed=1) == prior_energy_ball(3, 0.1, 5000, seed=1)


class TestScoreBound:
    @pytest.mark.parametrize("d", [1, 2])
    def test_value_at_center(self, d):
        h, beta = 0.02, 3.0
        fam = PerturbedFamily(h, beta, [[0.5] * d], [0.0], BumpFunction(d=d))
        assert abs(score(fam, [0.5] * d, 0)) == pytest.approx(h ** (beta - 1) * 2 * d, rel=1e-14)

    def test_passes_at_small_h(self):
        h = 0.02
        c = packing_centers(h, 1)
        theta = np.random.default_rng(0).uniform(-1, 1, len(c))
        theta *= h / np.linalg.norm(theta)
        rep = score_lower_bound_check(PerturbedFamily(h, 3.0, c, theta, BUMP1))
        assert rep.precondition_ok and rep.passed
        assert rep.min_abs_score >= rep.bound == pytest.approx(h ** 2 / 2)
        assert len(rep.per_center_min) == len(c)

    def test_large_h_flags_precondition(self):
        rep = score_lower_bound_check(PerturbedFamily(0.9, 2.5, [[0.5]], [0.9], BUMP1))
        assert not rep.precondition_ok and not rep.passed


class TestBandwidth:
    def test_worked_value(self):
        assert bandwidth(1024, 3.0, 1, 1.5) == pytest.approx((1 / 1536) ** (1 / 7), rel=1e-15)
        assert bandwidth(1024, 3.0, 1, 1.5) == pytest.approx(0.3506, abs=1e-4)

    def test_unit_base(self):
        assert bandwidth(1, 3.0, 1, 1.0) == 1.0

    def test_monotone(self):
        hs = [bandwidth(2 ** k, 3.0, 2, 1.5) for k in range(0, 30, 3)]
        assert all(a > b for a, b in zip(hs, hs[1:]))

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            bandwidth(0, 3.0, 1, 1.0)


class TestLowerBoundCurve:
    def test_slope(self):
        ns = [2 ** k for k in range(8, 17)]
        pts = lower_bound_curve(ns)
        slope = loglog_slope(ns, [p.density_bound for p in pts])
        assert slope == pytest.approx(-6 / 7, abs=0.05)
        assert all(p.h == bandwidth(p.n, 3.0, 1, 1.5) for p in pts)

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            lower_bound_curve([256], fisher="exact")

    def test_prior_mode_invalid_at_large_h(self):
        with pytest.raises(FamilyInvalidError):
            lower_bound_curve([256], fisher="prior")
