import json
import math

import numpy as np
import pytest
from scipy.stats import chi2

from gdl.divergence import js
from gdl.gan_core import (
    BestResponseConfig,
    ClampedDiscriminator,
    Dataset,
    FeatureDiscriminator,
    GANProblem,
    TrainingConfig,
    TrainingError,
    batched_losses,
    clamp,
    empirical_loss,
    loss_from_values,
    make_dataset,
    optimal_discriminator,
    population_loss,
    sample_generator,
    train,
    train_best_response,
)
from gdl.generator_density import AnalyticMap, GeneratorDensity, density
from gdl.generators import spline_family
from gdl.oracle_audit import c_d
from gdl.quadrature import gauss_legendre
from gdl.requ_net import Architecture, from_params, param_roundtrip, random_network

SINE = AnalyticMap.sine_1d()
QUAD = gauss_legendre(64, 1, intervals=4)


def half_disc(arch=Architecture(1, (1, 2, 1))):
    return ClampedDiscriminator(random_network(arch, np.random.default_rng(0)), 0.5, 0.5)


def random_disc(seed, arch=Architecture(1, (1, 3, 1))):
    return ClampedDiscriminator(random_network(arch, np.random.default_rng(seed)), 0.2, 0.8)


def random_gen(seed):
    fam = spline_family(8)
    return fam.generator(fam.random_weights(np.random.default_rng(seed), 0.6))


class TestClamp:
    @pytest.mark.parametrize("raw,expected", [(0.5, 0.5), (1.7, 0.9), (-3.0, 0.1)])
    def test_examples(self, raw, expected):
        assert clamp(raw, 0.1, 0.9) == expected

    def test_rejects_inverted_range(self):
        with pytest.raises(ValueError):
            clamp(0.5, 0.9, 0.1)

    def test_discriminator_range(self):
        disc = random_disc(1)
        out = disc(np.linspace(-2, 3, 101))
        assert out.min() >= 0.2 and out.max() <= 0.8

    @pytest.mark.parametrize("d_min,d_max", [(0.0, 0.5), (0.6, 0.5), (0.2, 1.0)])
    def test_invalid_range(self, d_min, d_max):
        with pytest.raises(ValueError):
            ClampedDiscriminator(random_network(Architecture(0, (1, 1)), np.random.default_rng(0)), d_min, d_max)

    def test_input_gradient_matches_finite_differences(self):
        disc = random_disc(2)
        x = np.array([[0.3], [0.7]])
        h = 1e-6
        fd = (disc(x + h) - disc(x - h)) / (2 * h)
        assert np.allclose(disc.input_gradient(x)[:, 0], fd, rtol=1e-6, atol=1e-10)


class TestDataset:
    def test_shapes_must_match(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 1)), np.zeros((4, 1)))

    def test_cube(self):
        with pytest.raises(ValueError):
            Dataset(np.full((2, 1), 1.5), np.zeros((2, 1)))

    def test_seeded(self):
        a, b = make_dataset(SINE, 50, 7), make_dataset(SINE, 50, 7)
        assert np.array_equal(a.real_samples, b.real_samples) and np.array_equal(a.latent_samples, b.latent_samples)
        assert a.n == 50 and a.d == 1


class TestLoss:
    def test_constant_half(self):
        data = make_dataset(SINE, 20, 0)
        assert empirical_loss(random_gen(0), half_disc(), data) == pytest.approx(-math.log(2), abs=1e-15)

    def test_single_sample_arithmetic(self):
        assert loss_from_values([0.8], [0.3]) == pytest.approx(0.5 * math.log(0.8) + 0.5 * math.log(0.7))
        assert loss_from_values([0.8], [0.3]) == pytest.approx(-0.2899092476, abs=1e-10)

    def test_batched_matches_scalar(self):
        rng = np.random.default_rng(0)
        r, f = rng.uniform(0.2, 0.8, (5, 9)), rng.uniform(0.2, 0.8, (5, 9))
        assert np.allclose(batched_losses(r, f), [loss_from_values(a, b) for a, b in zip(r, f)], rtol=1e-14)

    def test_dimension_mismatch(self):
        disc = ClampedDiscriminator(random_network(Architecture(0, (2, 1)), np.random.default_rng(0)), 0.2, 0.8)
        with pytest.raises(ValueError):
            empirical_loss(random_gen(0), disc, make_dataset(SINE, 5, 0))

    @pytest.mark.parametrize("seed", range(5))
    def test_bounded_by_log_range(self, seed):
        loss = empirical_loss(random_gen(seed), random_disc(seed), make_dataset(SINE, 100, seed))
        assert abs(loss) <= 1.5 * c_d(0.2, 0.8)

    def test_unbiased(self):
        gen, disc = random_gen(3), random_disc(3)
        R, n = 2000, 50
        vals = np.array([empirical_loss(gen, disc, make_dataset(SINE, n, s)) for s in range(R)])
        pop = population_loss(gen, disc, SINE, QUAD)
        assert abs(vals.mean() - pop) <= 3 * vals.std(ddof=1) / math.sqrt(R)

    def test_population_constant_half(self):
        assert population_loss(random_gen(0), half_disc(), SINE, QUAD) == pytest.approx(-math.log(2), abs=1e-14)

    def test_population_density_and_map_forms_agree(self):
        gen, disc = random_gen(1), random_disc(1)
        p_star = GeneratorDensity(SINE, 1.5)
        fine = gauss_legendre(32, 1, intervals=128)
        a = population_loss(gen, disc, SINE, fine)
        b = population_loss(gen, disc, lambda x: density(p_star, x), fine, latent_space=False)
        assert a == pytest.approx(b, abs=1e-8)

    @pytest.mark.parametrize("seed", range(10))
    def test_goodfellow_gap(self, seed):
        gen, disc = random_gen(seed), random_disc(seed)
        p_star = GeneratorDensity(SINE, 1.5)
        assert population_loss(gen, disc, SINE, QUAD) + math.log(2) <= js(gen, p_star, QUAD).value + 1e-8

    def test_optimal_discriminator_attains_js(self):
        gen = random_gen(4)
        p_star = GeneratorDensity(SINE, 1.5)
        d_star = optimal_discriminator(p_star, gen)
        ps, pw = density(p_star, QUAD.nodes), density(gen, QUAD.nodes)
        D = d_star(QUAD.nodes)
        loss = 0.5 * QUAD.integrate(ps * np.log(D)) + 0.5 * QUAD.integrate(pw * np.log1p(-D))
        # exact on the nodes once the quadrature masses of p* and p_w are carried along
        mass = 0.5 * (QUAD.integrate(ps) + QUAD.integrate(pw))
        assert loss == pytest.approx(js(p_star, gen, QUAD).value - math.log(2) * mass, abs=1e-12)


class TestOptimalDiscriminator:
    def test_equal_densities(self):
        f = lambda x: np.ones(len(x))
        assert np.allclose(optimal_discriminator(f, f)(np.linspace(0, 1, 5).reshape(-1, 1)), 0.5)

    def test_worked_value(self):
        d = optimal_discriminator(lambda x: 2.0 * (x[:, 0] <= 0.5), lambda x: np.ones(len(x)))
        assert d(np.array([[0.25]]))[0] == pytest.approx(2 / 3)

    def test_range_for_regular_pairs(self):
        lam = 2.0
        lo, hi = 1 / lam / (lam + 1 / lam), lam / (lam + 1 / lam)
        assert (lo, hi) == pytest.approx((0.2, 0.8))
        for seed in range(5):
            D = optimal_discriminator(random_gen(seed), random_gen(seed + 10))(QUAD.nodes)
            assert lo - 1e-12 <= D.min() and D.max() <= hi + 1e-12

    def test_zero_denominator(self):
        z = lambda x: np.zeros(len(x))
        with pytest.raises(ZeroDivisionError):
            optimal_discriminator(z, z)(np.array([[0.5]]))


class TestGradients:
    def test_match_finite_differences(self):
        problem = GANProblem(Architecture(1, (1, 2, 1)), Architecture(1, (1, 3, 1)))
        rng = np.random.default_rng(0)
        w = param_roundtrip(random_network(problem.gen_arch, rng, 0.5)).values
        t = param_roundtrip(random_network(problem.disc_arch, rng)).values
        data = make_dataset(SINE, 40, 0)
        loss, g_w, g_t = problem.gradients(w, t, data.real_samples, data.latent_samples)
        assert loss == pytest.approx(problem.empirical_loss(w, t, data), rel=1e-12)
        h = 1e-6
        for vec, grad, f in ((w, g_w, lambda v: problem.empirical_loss(v, t, data)),
                             (t, g_t, lambda v: problem.empirical_loss(w, v, data))):
            fd = np.array([(f(vec + h * e) - f(vec - h * e)) / (2 * h) for e in np.eye(vec.size)])
            assert np.allclose(grad, fd, rtol=1e-5, atol=1e-8)


class TestFeatureDiscriminator:
    def test_network_realizes_feature_logit(self):
        fd = FeatureDiscriminator(spline_family(16), replicas=4)
        a = np.random.default_rng(0).uniform(-4, 4, fd.size)
        x = np.linspace(0, 1, 41)
        assert np.allclose(fd.network(a).forward(x.reshape(-1, 1))[:, 0], fd.logit_features(x) @ a, atol=1e-13)
        assert np.abs(param_roundtrip(fd.network(a)).values).max() <= 1.0

    def test_budget_enforced(self):
        fd = FeatureDiscriminator(spline_family(4), replicas=2)
        with pytest.raises(ValueError):
            fd.network(np.full(fd.size, 3.0))

    def test_best_response_beats_zero_and_perturbations(self):
        fd = FeatureDiscriminator(spline_family(8), replicas=8)
        data = make_dataset(SINE, 400, 1)
        F_real = fd.logit_features(data.real_samples[:, 0])
        F_fake = fd.logit_features(data.latent_samples[:, 0])
        a = fd.best_response(F_real, F_fake)
        best = fd.loss(a, F_real, F_fake)
        assert best >= fd.loss(np.zeros(fd.size), F_real, F_fake)
        rng = np.random.default_rng(0)
        for _ in range(20):
            b = np.clip(a + rng.normal(0, 0.05, a.size), -8, 8)
            assert fd.loss(b, F_real, F_fake) <= best + 1e-10


class TestTraining:
    @pytest.fixture(scope="class")
    @classmethod
    def problem(cls):
        return GANProblem(Architecture(1, (1, 2, 1)), Architecture(1, (1, 3, 1)))

    def _init(self, problem):
        rng = np.random.default_rng(5)
        return (param_roundtrip(random_network(problem.gen_arch, rng, 0.5)).values,
                param_roundtrip(random_network(problem.disc_arch, rng)).values)

    def test_zero_epochs_returns_init(self, problem):
        w0, t0 = self._init(problem)
        run = train(problem, make_dataset(SINE, 30, 0), TrainingConfig(epochs=0), w0, t0)
        assert np.array_equal(np.asarray(run.w_hat), w0) and run.trace == []

    def test_deterministic(self, problem):
        w0, t0 = self._init(problem)
        data = make_dataset(SINE, 30, 0)
        cfg = TrainingConfig(epochs=15, batch_size=10, seed=3)
        a, b = train(problem, data, cfg, w0, t0), train(problem, data, cfg, w0, t0)
        assert a.trace == b.trace and np.array_equal(np.asarray(a.w_hat), np.asarray(b.w_hat))
        assert len(a.trace) == 15

    def test_params_stay_in_box(self, problem):
        w0, t0 = self._init(problem)
        run = train(problem, make_dataset(SINE, 30, 0), TrainingConfig(epochs=20, lr_g=0.5, lr_d=0.5), w0, t0)
        assert np.abs(np.asarray(run.w_hat)).max() <= 1 and np.abs(np.asarray(run.theta_hat)).max() <= 1

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainingConfig(lr_g=0.0)
        with pytest.raises(ValueError):
            BestResponseConfig(lr0=-1.0)

    def test_trace_jsonl(self, problem, tmp_path):
        w0, t0 = self._init(problem)
        run = train(problem, make_dataset(SINE, 20, 0), TrainingConfig(epochs=3), w0, t0)
        lines = run.to_jsonl(tmp_path / "t.jsonl").read_text().splitlines()
        assert [json.loads(l)["epoch"] for l in lines] == [1, 2, 3]

    def test_nan_detection(self, problem):
        w0, t0 = self._init(problem)

        class Poisoned(GANProblem):
            def gradients(self, w, theta, real, latent):
                loss, g_w, g_t = super().gradients(w, theta, real, latent)
                return float("nan"), g_w, g_t

        with pytest.raises(TrainingError) as info:
            train(Poisoned(problem.gen_arch, problem.disc_arch), make_dataset(SINE, 8, 0), TrainingConfig(epochs=2),
                  w0, t0)
        assert len(info.value.trace) == 1


class TestBestResponseTraining:
    @pytest.fixture(scope="class")
    @classmethod
    def run_4096(cls):
        fam = spline_family(8)
        data = make_dataset(SINE, 4096, 0)
        u0 = fam.random_weights(np.random.default_rng(1000), 0.3)
        return fam, u0, train_best_response(fam, data, BestResponseConfig(epochs=60), u0)

    def test_improves_on_init(self, run_4096):
        fam, u0, run = run_4096
        p_star = GeneratorDensity(SINE, 1.5)
        u_hat = fam.output_weights(from_params(fam.arch, None, np.asarray(run.w_hat)))
        assert js(fam.generator(u_hat), p_star, QUAD).value < js(fam.generator(u0), p_star, QUAD).value

    def test_inner_max_loss_monotone(self, run_4096):
        _, _, run = run_4096
        values = [r["L_n"] for r in run.trace]
        assert all(b < a for a, b in zip(values, values[1:]))
        assert len(run.trace) == run.selected_epoch

    def test_zero_epochs(self):
        fam = spline_family(8)
        u0 = fam.random_weights(np.random.default_rng(0), 0.3)
        run = train_best_response(fam, make_dataset(SINE, 64, 0), BestResponseConfig(epochs=0), u0)
        assert np.allclose(np.asarray(run.w_hat), fam.params(u0), atol=1e-12)

    def test_deterministic(self):
        fam = spline_family(8)
        u0 = fam.random_weights(np.random.default_rng(0), 0.3)
        data = make_dataset(SINE, 128, 0)
        a = train_best_response(fam, data, BestResponseConfig(epochs=5), u0)
        b = train_best_response(fam, data, BestResponseConfig(epochs=5), u0)
        assert a.trace == b.trace and np.array_equal(np.asarray(a.w_hat), np.asarray(b.w_hat))


class TestSampling:
    def test_identity_mean(self):
        x = sample_generator(GeneratorDensity(AnalyticMap.identity(), 2.0), 20_000, 0)
        assert abs(x.mean() - 0.5) <= 3 * math.sqrt(1 / 12 / 20_000)

    def test_half_map_range(self):
        x = sample_generator(GeneratorDensity(AnalyticMap.linear([[0.5]]), 2.0), 1000, 0)
        assert x.min() >= 0 and x.max() <= 0.5

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            sample_generator(random_gen(0), 0, 0)

    def test_histogram_goodness_of_fit(self):
        g = random_gen(2)
        m, bins = 100_000, 64
        x = sample_generator(g, m, 1)[:, 0]
        counts, edges = np.histogram(x, bins=bins, range=(0, 1))
        quad = gauss_legendre(8, 1, intervals=bins)
        probs = np.bincount(np.minimum((quad.nodes[:, 0] * bins).astype(int), bins - 1),
                            weights=quad.weights * density(g, quad.nodes), minlength=bins)
        stat = float(((counts - m * probs) ** 2 / (m * probs)).sum())
        assert stat < chi2.ppf(0.99, bins - 1)
