import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gdl.divergence import chi_sym, js, js_sqrt_metric_check, kl, sandwich_check
from gdl.generator_density import AnalyticMap, GeneratorDensity
from gdl.generators import spline_family
from gdl.quadrature import QuadratureScheme, default_scheme, gauss_legendre, midpoint, monte_carlo

LOG2 = math.log(2.0)


def uniform(x):
    return np.ones(len(x))


def left(x):
    return 2.0 * (np.asarray(x)[:, 0] <= 0.5)


def right(x):
    return 2.0 * (np.asarray(x)[:, 0] > 0.5)


def random_pair(seed, d=1):
    fam = spline_family(8 if d == 1 else 4, d)
    rng = np.random.default_rng(seed)
    return fam.generator(fam.random_weights(rng, 0.6)), fam.generator(fam.random_weights(rng, 0.6))


class TestQuadrature:
    @pytest.mark.parametrize("scheme", [gauss_legendre(7), gauss_legendre(5, 2, 3), midpoint(9, 2),
                                        monte_carlo(100, 3)])
    def test_weights_sum_to_one(self, scheme):
        assert scheme.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(scheme.weights > 0)
        assert scheme.nodes.min() >= 0 and scheme.nodes.max() <= 1

    @pytest.mark.parametrize("deg", range(0, 14))
    def test_gauss_legendre_exact_for_polynomials(self, deg):
        assert gauss_legendre(7).integrate(gauss_legendre(7).nodes[:, 0] ** deg) == pytest.approx(1 / (deg + 1),
                                                                                                  rel=1e-13)

    def test_tensor_product_integral(self):
        q = gauss_legendre(6, 2)
        assert q.integrate(q.nodes[:, 0] ** 2 * q.nodes[:, 1] ** 3) == pytest.approx(1 / 12, rel=1e-13)

    @pytest.mark.parametrize("d,count", [(1, 128), (2, 64 ** 2), (3, 200_000)])
    def test_default_schemes(self, d, count):
        assert default_scheme(d).node_count == count

    @pytest.mark.parametrize("nodes,weights", [([0.5], [0.5]), ([1.5], [1.0]), ([0.2, 0.4], [1.0]),
                                               ([0.2, 0.4], [1.5, -0.5])])
    def test_invalid_schemes(self, nodes, weights):
        with pytest.raises(ValueError):
            QuadratureScheme("custom", np.array(nodes), np.array(weights), "x")


class TestKL:
    def test_self_zero(self):
        g, _ = random_pair(0)
        assert abs(kl(g, g).value) <= 1e-12

    def test_support_violation_is_infinite(self):
        assert kl(uniform, left).value == math.inf

    def test_half_support_against_uniform(self):
        assert kl(left, uniform).value == pytest.approx(LOG2, abs=1e-12)


class TestJS:
    def test_self_zero(self):
        g, _ = random_pair(1)
        assert js(g, g).value == 0.0

    def test_disjoint_is_log2(self):
        assert js(left, right).value == pytest.approx(LOG2, abs=1e-6)

    def test_worked_pair(self):
        assert js(uniform, left).value == pytest.approx(0.75 * math.log(4 / 3), abs=1e-6)

    def test_worked_pair_fine_quadrature_crosscheck(self):
        assert js(uniform, left, midpoint(10_000)).value == pytest.approx(0.75 * math.log(4 / 3), abs=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_symmetry_and_range(self, seed):
        p, q = random_pair(seed)
        a, b = js(p, q).value, js(q, p).value
        assert abs(a - b) <= 1e-12
        assert -1e-12 <= a <= LOG2 + 1e-9

    def test_estimate_metadata(self):
        est = js(uniform, left, gauss_legendre(10))
        assert est.node_count == 10 and est.scheme_id == "gl10x1^1"
        assert float(est) == est.value

    def test_quadrature_convergence(self):
        p = GeneratorDensity(AnalyticMap.sine_1d(), 1.5)
        q, _ = random_pair(5)
        a = js(p, q, gauss_legendre(64, 1, 2)).value
        b = js(p, q, gauss_legendre(64, 1, 4)).value
        assert abs(a - b) < 1e-4


class TestChi:
    def test_self_zero(self):
        assert chi_sym(uniform, uniform).value == 0.0

    def test_worked_pair(self):
        assert chi_sym(uniform, left).value == pytest.approx(2 / 3, abs=1e-6)

    def test_disjoint(self):
        assert chi_sym(left, right).value == pytest.approx(2.0, abs=1e-12)

    def test_symmetric(self):
        p, q = random_pair(2)
        assert chi_sym(p, q).value == pytest.approx(chi_sym(q, p).value, rel=1e-14)


class TestSandwich:
    def test_worked_pair(self):
        rep = sandwich_check(uniform, left)
        assert rep.lhs == pytest.approx(1 / 6, abs=1e-6)
        assert rep.js == pytest.approx(0.21576, abs=1e-5)
        assert rep.rhs == pytest.approx(0.23105, abs=1e-5)
        assert rep.passed and rep.pass_

    def test_equal_densities(self):
        rep = sandwich_check(uniform, uniform)
        assert rep.lhs == rep.js == rep.rhs == 0.0 and rep.passed

    @pytest.mark.parametrize("seed", range(20))
    def test_random_pairs_1d(self, seed):
        assert sandwich_check(*random_pair(seed)).passed

    @pytest.mark.parametrize("seed", range(3))
    def test_random_pairs_2d(self, seed):
        assert sandwich_check(*random_pair(seed, 2), default_scheme(2)).passed


class TestMetric:
    def test_equal_triple(self):
        assert js_sqrt_metric_check(uniform, uniform, uniform)

    def test_between_disjoint(self):
        assert js_sqrt_metric_check(left, uniform, right)

    def test_degenerate(self):
        assert js_sqrt_metric_check(left, uniform, left)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_random_triples(self, seed):
        p, q = random_pair(seed)
        r, _ = random_pair(seed + 1)
        assert js_sqrt_metric_check(p, q, r)
