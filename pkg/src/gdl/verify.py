"""Property suites over every module, aggregated by :func:`verify_all`.

Each suite returns a plain dict ``{"passed": bool, ...observed values...}`` that is
JSON-serializable and free of timing data, so reports are bit-reproducible under a
fixed seed. Sizes default to the acceptance sizes.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import minimax_lab as ml
from .divergence import chi_sym, js, js_sqrt_metric_check, sandwich_check
from .gan_core import ClampedDiscriminator, GANProblem, make_dataset
from .generator_density import (AnalyticMap, GeneratorDensity, cube_grid, density, density_bounds,
                                density_lipschitz_constant, h1_distance, holder_diagnostics, invert)
from .generators import spline_family
from .oracle_audit import (ConcentrationCheckConfig, c_d, class_constants, c_delta, c_eps_net, c_var, concentration_monte_carlo,
                           constants, delta_D_sandwich_check, discriminator_lipschitz, loss_lipschitz_check)
from .quadrature import default_scheme, gauss_legendre
from .requ_net import (Architecture, ReQUNetwork, forward, jacobian, param_roundtrip, perturbation_bounds,
                       random_network)

__all__ = [
    "suite_divergence",
    "suite_perturbation",
    "suite_density",
    "suite_oracle",
    "suite_concentration",
    "suite_fisher",
    "suite_lower_bound",
    "verify_all",
    "SUITES",
]

LOG2 = math.log(2.0)


def _uniform(x):
    return np.ones(len(x))


def _left_half(x):
    return 2.0 * (np.asarray(x)[:, 0] <= 0.5)


def _right_half(x):
    return 2.0 * (np.asarray(x)[:, 0] > 0.5)


def _random_generators(rng, count: int, d: int = 1, knots: int = 8, scale: float = 0.6):
    fam = spline_family(knots, d)
    return [fam.generator(fam.random_weights(rng, scale)) for _ in range(count)]


def suite_divergence(seed: int = 0, pairs_1d: int = 100, pairs_2d: int = 25) -> dict:
    rng = np.random.default_rng(seed)
    js_worked = js(_uniform, _left_half).value
    chi_worked = chi_sym(_uniform, _left_half).value
    js_disjoint = js(_left_half, _right_half).value
    worst = {"symmetry": 0.0, "self": 0.0, "range_violation": 0.0}
    sandwich_ok = metric_ok = True
    for d, count in ((1, pairs_1d), (2, pairs_2d)):
        quad = default_scheme(d)
        gens = _random_generators(rng, 2 * count + 1, d, knots=8 if d == 1 else 4)
        for k in range(count):
            p, q, r = gens[2 * k], gens[2 * k + 1], gens[2 * k + 2]
            a, b = js(p, q, quad).value, js(q, p, quad).value
            worst["symmetry"] = max(worst["symmetry"], abs(a - b))
            worst["self"] = max(worst["self"], abs(js(p, p, quad).value))
            worst["range_violation"] = max(worst["range_violation"], -a, a - LOG2)
            sandwich_ok &= sandwich_check(p, q, quad).passed
            metric_ok &= js_sqrt_metric_check(p, q, r, quad)
    checks = {
        "worked_js": abs(js_worked - 0.75 * math.log(4 / 3)) <= 1e-6,
        "worked_chi": abs(chi_worked - 2 / 3) <= 1e-6,
        "disjoint_log2": abs(js_disjoint - LOG2) <= 1e-6,
        "symmetry": worst["symmetry"] <= 1e-12,
        "self_zero": worst["self"] <= 1e-12,
        "range": worst["range_violation"] <= 1e-12,
        "sandwich": bool(sandwich_ok),
        "sqrt_js_triangle": bool(metric_ok),
    }
    return {"passed": all(checks.values()), "checks": checks, "js_worked": js_worked, "chi_worked": chi_worked,
            "js_disjoint": js_disjoint, "worst": worst, "pairs": [pairs_1d, pairs_2d]}


def _paired(net: ReQUNetwork, eps: float, rng) -> ReQUNetwork:
    weights = tuple(np.clip(W + rng.uniform(-eps, eps, W.shape), -1, 1) for W in net.weights)
    shifts = tuple(np.clip(v + rng.uniform(-eps, eps, v.shape), -1, 1) for v in net.shifts)
    return ReQUNetwork(net.arch, weights, shifts)


def _random_arch(rng, max_depth: int = 2, max_width: int = 3) -> Architecture:
    N = int(rng.integers(0, max_depth + 1))
    return Architecture(N, tuple(int(rng.integers(1, max_width + 1)) for _ in range(N + 2)))


def _grid_points(p0: int, count: int, rng) -> np.ndarray:
    if p0 == 1:
        return np.linspace(0.0, 1.0, count).reshape(-1, 1)
    return rng.random((count, p0))


def suite_perturbation(seed: int = 0, pairs: int = 100, grid: int = 65, eps_list=(1e-4, 1e-3, 1e-2),
                       fd_nets: int = 100) -> dict:
    """Sup and Jacobian perturbation bounds on paired nets; Jacobians against central differences."""
    rng = np.random.default_rng(seed)
    worst_sup = worst_jac = 0.0
    ok = True
    for _ in range(pairs):
        arch = _random_arch(rng)
        net = random_network(arch, rng)
        X = _grid_points(arch.input_dim, grid, rng)
        sup_c, jac_c = perturbation_bounds(arch)
        for eps in eps_list:
            other = _paired(net, eps, rng)
            diff = np.abs(forward(net, X) - forward(other, X)).max()
            worst_sup = max(worst_sup, diff / (eps * sup_c))
            ok &= diff <= eps * sup_c
            if arch.depth_hidden >= 1:
                jd = np.abs(jacobian(net, X) - jacobian(other, X)).max()
                worst_jac = max(worst_jac, jd / (eps * jac_c))
                ok &= jd <= eps * jac_c
    fd_worst = 0.0
    checked = 0
    while checked < fd_nets:
        arch = _random_arch(rng)
        net = random_network(arch, rng)
        x = rng.random(arch.input_dim)
        a, pre_ok = x, True
        for k in range(arch.depth_hidden):
            u = net.weights[k] @ a - net.shifts[k]
            pre_ok &= bool(np.min(np.abs(u)) >= 1e-3)
            a = np.maximum(u, 0) ** 2
        if not pre_ok:
            continue
        J = jacobian(net, x)
        h = 1e-5
        fd = np.stack([(forward(net, x + h * e) - forward(net, x - h * e)) / (2 * h) for e in np.eye(x.size)], axis=1)
        fd_worst = max(fd_worst, float(np.abs(J - fd).max() / max(np.abs(J).max(), 1e-3)))
        checked += 1
    checks = {"bounds": bool(ok), "jacobian_fd": fd_worst <= 1e-5}
    return {"passed": all(checks.values()), "checks": checks, "worst_sup_ratio": worst_sup,
            "worst_jac_ratio": worst_jac, "fd_rel_error": fd_worst}


def suite_density(seed: int = 0, gens_1d: int = 10, gens_2d: int = 4, lip_pairs: int = 50) -> dict:
    """Normalization, inversion roundtrip, density bounds and the density-Lipschitz bound."""
    rng = np.random.default_rng(seed)
    worst_norm = worst_round = 0.0
    bounds_ok = True
    gens = {1: _random_generators(rng, gens_1d, 1) + [GeneratorDensity(AnalyticMap.sine_1d(), 1.5)],
            2: _random_generators(rng, gens_2d, 2, knots=4)}
    for d, family in gens.items():
        quad = gauss_legendre(32, d, intervals=8 if d == 1 else 2)
        grid = cube_grid(33, d)
        for g in family:
            worst_norm = max(worst_norm, abs(quad.integrate(density(g, quad.nodes)) - 1.0))
            back = invert(g, g.forward(grid))
            worst_round = max(worst_round, float(np.abs(back - grid).max()))
            lo, hi = density_bounds(g.lambda_bound, d)
            p = density(g, cube_grid(65, d))
            bounds_ok &= bool(p.min() >= lo - 1e-12 and p.max() <= hi + 1e-12)
    fam = spline_family(8)
    grid = cube_grid(129, 1)
    lip_ok = True
    worst_lip = 0.0
    for _ in range(lip_pairs):
        u = fam.random_weights(rng, 0.6)
        v = fam.project_weights(u + rng.uniform(-0.05, 0.05, u.shape))
        gu, gv = fam.generator(u), fam.generator(v)
        h_g = max(holder_diagnostics(gu, 2, 65).holder_norm, holder_diagnostics(gv, 2, 65).holder_norm)
        bound = density_lipschitz_constant(1, fam.lambda_bound, h_g) * h1_distance(gu, gv, 129)
        gap = float(np.abs(density(gu, grid) - density(gv, grid)).max())
        lip_ok &= gap <= bound + 1e-12
        if bound > 0:
            worst_lip = max(worst_lip, gap / bound)
    checks = {"normalization": worst_norm <= 1e-4, "roundtrip": worst_round <= 1e-8, "density_bounds": bool(bounds_ok),
              "density_lipschitz": bool(lip_ok)}
    return {"passed": all(checks.values()), "checks": checks, "normalization_error": worst_norm,
            "roundtrip_error": worst_round, "worst_lipschitz_ratio": worst_lip}


def _constant_formulas_mp(d_min: float, d_max: float) -> dict:
    """Second, independent evaluation of the closed forms in 50-digit arithmetic."""
    import mpmath as mp

    mp.mp.dps = 50
    a, b = mp.mpf(d_min), mp.mpf(d_max)
    two_log2_sq = 2 * mp.log(2) ** 2
    first = two_log2_sq if a == mp.mpf("0.5") else mp.log(2 * a) ** 2 / (mp.mpf("0.5") - a)
    second = two_log2_sq if b == mp.mpf("0.5") else mp.log(2 - 2 * b) ** 2 / (b - mp.mpf("0.5"))
    var = (mp.mpf(max(first, two_log2_sq)) + mp.mpf(max(second, two_log2_sq))
           + mp.log(mp.e / (2 * a)) / (2 * a * a) + mp.log(mp.e / (2 - 2 * b)) / (2 - 2 * b) ** 2)
    cd = max(-mp.log(b), -mp.log(a), -mp.log(1 - b), -mp.log(1 - a))
    cdelta = 1 + mp.sqrt(min(a / ((1 - a) * mp.log(1 / (1 - b))), (1 - b) / (b * mp.log(1 / a))))
    return {"c_var": float(var), "c_d": float(cd), "c_delta": float(cdelta)}


def _arch_constant_mp(arch: Architecture, all_widths: bool = False) -> tuple[float, float]:
    """Perturbation coefficients (product up to p_N) or class constants (product over every width)."""
    import mpmath as mp

    N = arch.depth_hidden
    sup = mp.mpf((N + 1) * 2 ** N)
    jac = mp.mpf(N * (N + 1) * 2 ** (N + 1))
    for p in (arch.widths if all_widths else arch.widths[: N + 1]):
        sup *= (p + 1) ** (2 ** N)
        jac *= (p + 1) ** (2 ** (N + 1) + 1)
    return float(sup), float(jac)


def _double_entry(rng) -> tuple[bool, float]:
    worst = 0.0
    ranges = [(0.5, 0.5), (0.1, 0.9), (0.2, 0.8), (0.3, 0.6), (0.05, 0.99)] + [
        tuple(sorted(rng.uniform(0.02, 0.98, 2))) for _ in range(10)]
    for d_min, d_max in ranges:
        ref = _constant_formulas_mp(d_min, d_max)
        got = {"c_var": c_var(d_min, d_max), "c_d": c_d(d_min, d_max), "c_delta": c_delta(d_min, d_max)}
        for k in ref:
            worst = max(worst, abs(got[k] - ref[k]) / max(1.0, abs(ref[k])))
    for widths in ((1, 1), (1, 1, 1), (1, 2, 1), (2, 3, 3, 2), (1, 3, 2, 1)):
        arch = Architecture.from_widths(widths)
        ref = _arch_constant_mp(arch)
        got = tuple(perturbation_bounds(arch))
        for x, y in zip(got + class_constants(arch), ref + _arch_constant_mp(arch, True)):
            worst = max(worst, abs(x - y) / max(1.0, abs(y)))
        l_g, l_t, h_d = ref[0], ref[0], 1.7
        e1 = c_eps_net(l_g, h_d, l_t, 0.2, 0.8)
        e2 = l_g * h_d / (2 * (1 - 0.8)) + l_t / 0.2
        worst = max(worst, abs(e1 - e2) / max(1.0, abs(e2)))
    for d, lam, h_g in ((1, 2.0, 1.0), (2, 1.5, 3.0), (3, 1.2, 0.5)):
        ref = d ** 2 * math.sqrt(d) ** d * lam ** (3 * d) * (1 + h_g * lam * math.sqrt(d))
        worst = max(worst, abs(density_lipschitz_constant(d, lam, h_g) - ref) / ref)
    return worst <= 1e-12, worst


def _random_disc(rng, arch: Architecture, d_min=0.2, d_max=0.8) -> ClampedDiscriminator:
    return ClampedDiscriminator(random_network(arch, rng), d_min, d_max)


def suite_oracle(seed: int = 0, sandwich_pairs: int = 100, lipschitz_pairs: int = 1000) -> dict:
    """Delta sandwich and Goodfellow gap on random (w, theta), loss Lipschitzness, double-entry constants."""
    rng = np.random.default_rng(seed)
    p_star = GeneratorDensity(AnalyticMap.sine_1d(), 1.5)
    quad = gauss_legendre(64, 1, intervals=4)
    disc_archs = [Architecture(1, (1, 3, 1)), Architecture(2, (1, 3, 2, 1)), Architecture(1, (1, 2, 1))]
    sandwich_ok = True
    min_delta = math.inf
    worst_upper = 0.0
    gens = _random_generators(rng, sandwich_pairs)
    for g in gens:
        disc = _random_disc(rng, disc_archs[int(rng.integers(len(disc_archs)))])
        rep = delta_D_sandwich_check(g, disc, p_star, quad)
        sandwich_ok &= rep.passed
        min_delta = min(min_delta, rep.delta)
        if rep.upper > 0:
            worst_upper = max(worst_upper, rep.delta / rep.upper)
    # loss Lipschitzness: spline generators keep g_w(Y) inside the cube
    fam = spline_family(4)
    disc_arch = Architecture(1, (1, 2, 1))
    problem = GANProblem(fam.arch, disc_arch)
    h_d = discriminator_lipschitz(disc_arch, 0.2, 0.8, 1.0)
    bundle = constants(0.2, 0.8, fam.arch, disc_arch, h_d, 1, fam.lambda_bound, 1.0)
    data = make_dataset(AnalyticMap.sine_1d(), 64, seed)
    pairs = []
    for _ in range(lipschitz_pairs):
        u1 = fam.random_weights(rng, 0.4)
        u2 = fam.project_weights(u1 + 10 ** rng.uniform(-4, -1) * rng.uniform(-1, 1, u1.shape))
        t1 = param_roundtrip(random_network(disc_arch, rng)).values
        t2 = np.clip(t1 + 10 ** rng.uniform(-4, 0) * rng.uniform(-1, 1, t1.shape), -1, 1)
        pairs.append((fam.params(u1), fam.params(u2), t1, t2))
    lip = loss_lipschitz_check(problem, pairs, data, bundle)
    de_ok, de_worst = _double_entry(rng)
    checks = {"sandwich": bool(sandwich_ok), "goodfellow_gap": min_delta >= -1e-8, "loss_lipschitz": lip.passed,
              "double_entry": de_ok}
    return {"passed": all(checks.values()), "checks": checks, "min_delta": min_delta,
            "worst_delta_over_upper": worst_upper, "lipschitz_worst_w": lip.worst_w_ratio,
            "lipschitz_worst_theta": lip.worst_theta_ratio, "double_entry_rel_error": de_worst}


def suite_concentration(seed: int = 0, replicates: int = 10_000, n: int = 500, delta_level: float = 0.05) -> dict:
    """Empirical quantile of |L_n - L| against the Bernstein bound, plus unbiasedness of L_n."""
    rng = np.random.default_rng(seed)
    fam = spline_family(8)
    gen = fam.generator(fam.random_weights(rng, 0.6))
    disc_arch = Architecture(1, (1, 3, 1))
    disc = _random_disc(rng, disc_arch)
    truth = AnalyticMap.sine_1d()
    bundle = constants(0.2, 0.8, fam.arch, disc_arch, discriminator_lipschitz(disc_arch, 0.2, 0.8), 1,
                       fam.lambda_bound, 1.0)
    cfg = ConcentrationCheckConfig(replicates, delta_level, n, seed=seed)
    rep = concentration_monte_carlo(gen, disc, truth, cfg, bundle, truth_density=GeneratorDensity(truth, 1.5))
    checks = {"bernstein": rep.passed, "unbiased": rep.unbiased}
    return {"passed": all(checks.values()), "checks": checks, "quantile": rep.quantile, "rhs": rep.rhs,
            "population_loss": rep.population_loss, "mean_loss": rep.mean_loss, "std_error": rep.mean_std_error}


def suite_fisher(seed: int = 0, fd_points: int = 100) -> dict:
    """Fisher-information scaling in h, the score lower bound, score finite differences, normalization."""
    rng = np.random.default_rng(seed)
    beta, hs = 3.0, [0.04, 0.02, 0.01]
    info = [ml.fisher_information(ml.PerturbedFamily(h, beta, [[0.5]], [0.0])).total for h in hs]
    slope = ml.loglog_slope(hs, info)
    centers = ml.packing_centers(0.02, 1)
    fam = ml.PerturbedFamily(0.02, beta, centers, np.zeros(len(centers)))
    score_rep = ml.score_lower_bound_check(fam)
    fd_worst = 0.0
    step = 1e-7
    base_fam = ml.PerturbedFamily(0.05, beta, ml.packing_centers(0.05, 1), np.zeros(4))
    for _ in range(fd_points):
        theta = rng.uniform(-1, 1, base_fam.M)
        theta *= 0.5 * base_fam.h / np.linalg.norm(theta)
        j = int(rng.integers(base_fam.M))
        x = base_fam.centers[j] + rng.uniform(-0.9, 0.9) * base_fam.h
        e = np.eye(base_fam.M)[j] * step
        fd = (ml.log_density(base_fam.with_theta(theta + e), x)
              - ml.log_density(base_fam.with_theta(theta - e), x)) / (2 * step)
        sc = ml.score(base_fam.with_theta(theta), x, j)
        fd_worst = max(fd_worst, abs(sc - fd) / max(abs(sc), 1e-6))
    theta = rng.uniform(-1, 1, base_fam.M)
    theta *= 0.9 * base_fam.h / np.linalg.norm(theta)
    f = base_fam.with_theta(theta)
    quad = gauss_legendre(64, 1, intervals=32)
    mass = quad.integrate(np.exp(ml.log_density(f, quad.nodes)))
    checks = {"fisher_slope": abs(slope - (2 * beta + 1 - 2)) <= 0.2, "score_bound": score_rep.passed,
              "score_fd": fd_worst <= 1e-5, "normalization": abs(mass - 1) <= 1e-6}
    return {"passed": all(checks.values()), "checks": checks, "fisher_slope": slope, "fisher_values": info,
            "score_min": score_rep.min_abs_score, "score_bound": score_rep.bound, "score_fd_rel_error": fd_worst,
            "mass": mass}


def suite_lower_bound(seed: int = 0) -> dict:
    beta, d = 3.0, 1
    ns = [2 ** k for k in range(8, 17)]
    pts = ml.lower_bound_curve(ns, beta, d, 1.5)
    slope = ml.loglog_slope(ns, [p.density_bound for p in pts])
    target = -2 * beta / (2 * beta + d)
    checks = {"slope": abs(slope - target) <= 0.05}
    return {"passed": all(checks.values()), "checks": checks, "slope": slope, "target": target,
            "bounds": [p.density_bound for p in pts]}


SUITES = {
    "divergence": suite_divergence,
    "perturbation": suite_perturbation,
    "density": suite_density,
    "oracle": suite_oracle,
    "concentration": suite_concentration,
    "fisher": suite_fisher,
    "lower_bound": suite_lower_bound,
}


def verify_all(seed: int = 0, suites: Optional[list] = None) -> dict:
    """Run the named suites (all by default) and aggregate a master report."""
    names = list(SUITES) if suites is None else list(suites)
    unknown = [s for s in names if s not in SUITES]
    if unknown:
        raise ValueError(f"unknown suites: {unknown}")
    results = {name: SUITES[name](seed) for name in names}
    return {"seed": seed, "passed": all(r["passed"] for r in results.values()), "suites": results}
