"""Explicit constants of the oracle inequality and numerical audits of its ingredients.

Conventions. Densities are callables on ``(B, d)`` arrays; generators are
:class:`~gdl.generator_density.GeneratorDensity` objects; discriminators are
:class:`~gdl.gan_core.ClampedDiscriminator` objects. All integrals use one
quadrature scheme so that identities between JS, L and Delta hold node by node.

Reading of c_delta: the closed form has an unbalanced parenthesis in its first
fraction; it is read as ``D_min / ((1 - D_min) * log(1 / (1 - D_max)))``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .divergence import js_values
from . import gan_core
from .gan_core import ClampedDiscriminator, FeatureDiscriminator
from .generator_density import GeneratorDensity, density, density_lipschitz_constant
from .quadrature import QuadratureScheme, default_scheme, gauss_legendre
from .requ_net import Architecture, hidden_bounds

__all__ = [
    "ConstantsBundle",
    "constants",
    "class_constants",
    "c_eps_net",
    "c_var",
    "c_d",
    "c_delta",
    "output_radius",
    "discriminator_lipschitz",
    "OracleTerms",
    "delta",
    "delta_terms",
    "feature_disc_optimizer",
    "SandwichAudit",
    "delta_D_sandwich_check",
    "bernstein_rhs",
    "ConcentrationCheckConfig",
    "ConcentrationReport",
    "concentration_monte_carlo",
    "LipschitzReport",
    "loss_lipschitz_check",
    "oracle_rhs",
    "save_report",
]

LOG2 = math.log(2.0)


def _check_range(d_min: float, d_max: float) -> None:
    if not 0 < d_min <= d_max < 1:
        raise ValueError(f"need 0 < d_min <= d_max < 1, got d_min={d_min}, d_max={d_max}")


def c_var(d_min: float, d_max: float) -> float:
    """Variance constant; each of the first two brackets falls back to 2 log^2 2 at the removable point 1/2."""
    _check_range(d_min, d_max)
    floor = 2 * LOG2 ** 2
    low = math.log(2 * d_min) ** 2 / (0.5 - d_min) if d_min != 0.5 else floor
    high = math.log(2 - 2 * d_max) ** 2 / (d_max - 0.5) if d_max != 0.5 else floor
    tail = math.log(math.e / (2 * d_min)) / (2 * d_min ** 2) + math.log(math.e / (2 - 2 * d_max)) / (2 - 2 * d_max) ** 2
    return max(low, floor) + max(high, floor) + tail


def c_d(d_min: float, d_max: float) -> float:
    _check_range(d_min, d_max)
    return max(math.log(max(1 / d_max, 1 / d_min)), math.log(max(1 / (1 - d_max), 1 / (1 - d_min))))


def c_delta(d_min: float, d_max: float) -> float:
    _check_range(d_min, d_max)
    a = d_min / ((1 - d_min) * math.log(1 / (1 - d_max)))
    b = (1 - d_max) / (d_max * math.log(1 / d_min))
    return 1 + math.sqrt(min(a, b))


def c_eps_net(l_g: float, l_x: float, l_theta: float, d_min: float, d_max: float) -> float:
    _check_range(d_min, d_max)
    return l_g * l_x / (2 - 2 * d_max) + l_theta / min(d_min, 1 - d_max)


@dataclass(frozen=True)
class ConstantsBundle:
    c_eps_net: float
    c_var: float
    c_d: float
    c_delta: float
    l_G: float
    l_Theta: float
    l_X: float
    l_p: float
    d_min: float
    d_max: float

    def __post_init__(self):
        for name in ("c_eps_net", "c_var", "c_d", "l_G", "l_Theta", "l_X", "l_p"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.c_delta > 1:
            raise ValueError("c_delta must exceed 1")

    @property
    def sandwich_factor(self) -> float:
        c = self.c_delta
        return c * c / ((c - 1) ** 2 * self.d_min * (1 - self.d_max))

    def to_dict(self) -> dict:
        return asdict(self)


def _to_float(value: int, what: str) -> float:
    try:
        return float(value)
    except OverflowError:
        warnings.warn(f"{what} overflows float64; saturating to +inf", RuntimeWarning)
        return math.inf


def class_constants(arch: Architecture) -> tuple[float, float]:
    """Parameter-Lipschitz constants of a network class, product over every width of the architecture.

    sup: (N+1) 2^N prod_p (p+1)^{2^N}
    jac: N (N+1) 2^{N+1} prod_p (p+1)^{2^{N+1}+1}

    These dominate the perturbation bounds of :func:`perturbation_bounds`, whose product stops
    before the output width.
    """
    N = arch.depth_hidden
    sup, jac = (N + 1) * 2 ** N, N * (N + 1) * 2 ** (N + 1)
    for p in arch.widths:
        sup *= (p + 1) ** (2 ** N)
        jac *= (p + 1) ** (2 ** (N + 1) + 1)
    return _to_float(sup, "sup constant"), _to_float(jac, "Jacobian constant")


def constants(d_min: float, d_max: float, gen_arch: Architecture, disc_arch: Architecture, h_d: float, d: int,
              lam: float, h_g: float) -> ConstantsBundle:
    """Every constant from its closed form. l_p is the density-Lipschitz constant times the Jacobian class constant."""
    _check_range(d_min, d_max)
    if h_d <= 0:
        raise ValueError("H_D must be positive")
    l_g, l_jac = class_constants(gen_arch)
    l_theta = class_constants(disc_arch)[0]
    l_p = density_lipschitz_constant(d, lam, h_g) * l_jac
    if l_p == 0:
        # without hidden layers the Jacobian is W_0 itself, so its entrywise change is at most ||u - v||_inf
        l_p = density_lipschitz_constant(d, lam, h_g)
    return ConstantsBundle(
        c_eps_net=c_eps_net(l_g, h_d, l_theta, d_min, d_max),
        c_var=c_var(d_min, d_max),
        c_d=c_d(d_min, d_max),
        c_delta=c_delta(d_min, d_max),
        l_G=l_g,
        l_Theta=l_theta,
        l_X=float(h_d),
        l_p=l_p,
        d_min=d_min,
        d_max=d_max,
    )


def output_radius(arch: Architecture, radius: float = 1.0) -> float:
    """Upper bound on ||f(x)||_inf over ||x||_inf <= radius for any network of this architecture."""
    N, p = arch.depth_hidden, arch.widths
    if N == 0:
        return p[0] * radius
    return p[N] * hidden_bounds(arch, N, 1, radius, "sup")


def discriminator_lipschitz(disc_arch: Architecture, d_min: float, d_max: float, radius: float = 1.0) -> float:
    """Lipschitz bound (sup norm) of x -> d_min + (d_max - d_min) logistic(f(x)) on the box of the given radius."""
    N = disc_arch.depth_hidden
    if N == 0:
        lip_f = float(disc_arch.widths[0])
    else:
        lip_f = hidden_bounds(disc_arch, N, 1, radius, "lip")
    return (d_max - d_min) / 4 * lip_f


# Delta(w, theta) and its sandwich ------------------------------------------------------------


def _values(p_star: Callable, gen, quad: QuadratureScheme):
    ps = np.asarray(p_star(quad.nodes), dtype=float).reshape(-1)
    pw = density(gen, quad.nodes) if isinstance(gen, GeneratorDensity) else np.asarray(gen(quad.nodes), dtype=float).reshape(-1)
    return ps, pw


def _delta_from_values(w, ps, pw, D) -> float:
    # node-wise (p*+p_w)/2 * KL(Bern(D*) || Bern(D)), so the quadrature sum is >= 0 exactly
    s = ps + pw
    pos = s > 0
    d_star = np.where(pos, ps / np.where(pos, s, 1.0), 0.5)
    t1 = np.where(ps > 0, ps * np.log(np.where(ps > 0, d_star, 1.0) / D), 0.0)
    t2 = np.where(pw > 0, pw * np.log(np.where(pw > 0, 1 - d_star, 1.0) / (1 - D)), 0.0)
    return float(0.5 * np.dot(w, t1 + t2))


def delta(gen, disc, p_star: Callable, quad: Optional[QuadratureScheme] = None) -> float:
    """Delta(w, theta) = JS(p_w, p*) - log 2 - L(w, theta), evaluated node by node.

    ``gen`` is a GeneratorDensity or a density callable; ``disc`` any callable with values in (0, 1).
    """
    quad = quad or default_scheme(1)
    ps, pw = _values(p_star, gen, quad)
    D = np.asarray(disc(quad.nodes), dtype=float).reshape(-1)
    return _delta_from_values(quad.weights, ps, pw, D)


@dataclass(frozen=True)
class SandwichAudit:
    lower: float
    delta: float
    upper: float
    slack: float
    passed: bool


def delta_D_sandwich_check(gen, disc, p_star: Callable, quad: Optional[QuadratureScheme] = None,
                           c: Optional[float] = None) -> SandwichAudit:
    """||D* - D||^2 <= Delta <= C^2 / ((C-1)^2 D_min (1 - D_max)) ||D* - D||^2 in L2(p* + p_w)."""
    quad = quad or default_scheme(1)
    d_min, d_max = disc.d_min, disc.d_max
    c = c_delta(d_min, d_max) if c is None else c
    ps, pw = _values(p_star, gen, quad)
    D = np.asarray(disc(quad.nodes), dtype=float).reshape(-1)
    s = ps + pw
    d_star = np.where(s > 0, ps / np.where(s > 0, s, 1.0), 0.5)
    norm2 = float(np.dot(quad.weights, s * (d_star - D) ** 2))
    dlt = _delta_from_values(quad.weights, ps, pw, D)
    upper = c * c / ((c - 1) ** 2 * d_min * (1 - d_max)) * norm2
    slack = 1e-6 + 1e-3 * abs(dlt)
    return SandwichAudit(norm2, dlt, upper, slack, bool(norm2 - slack <= dlt <= upper + slack and dlt >= -1e-8))


# Delta_G and Delta_D over finite grids ------------------------------------------------------


@dataclass(frozen=True)
class OracleTerms:
    delta_G: float
    delta_D: float
    grid_spec: dict


def feature_disc_optimizer(fd: FeatureDiscriminator, starts: int = 8, seed: int = 0) -> Callable:
    """Inner problem min_theta Delta = max_theta L over a feature discriminator, with random multistarts.

    Returns a callable ``(ps, pw, quad) -> ClampedDiscriminator``.
    """

    def optimize(ps, pw, quad):
        F = fd.logit_features(quad.nodes[:, 0])
        w = quad.weights

        def neg(a):
            t = F @ a
            v1, d1 = fd._terms(t, True)
            v2, d2 = fd._terms(t, False)
            val = 0.5 * np.dot(w, ps * v1 + pw * v2)
            grad = 0.5 * F.T @ (w * (ps * d1 + pw * d2))
            return -val, -grad

        rng = np.random.default_rng(seed)
        bounds = [(-fd.replicas, fd.replicas)] * fd.size
        best = None
        for k in range(starts):
            a0 = np.zeros(fd.size) if k == 0 else rng.uniform(-1, 1, fd.size)
            res = minimize(neg, a0, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": 1000, "ftol": 1e-15, "gtol": 1e-12})
            if best is None or res.fun < best.fun:
                best = res
        return fd.discriminator(np.clip(best.x, -fd.replicas, fd.replicas))

    return optimize


def delta_terms(gen_grid: Sequence, disc_optimizer: Callable, p_star: Callable,
                quad: Optional[QuadratureScheme] = None) -> OracleTerms:
    """Delta_G = min_grid JS(p_w, p*) and Delta_D = max_grid min_theta Delta(w, theta).

    ``disc_optimizer(ps, pw, quad)`` returns the discriminator achieving the inner minimum
    (or a fixed one, in which case Delta_D is evaluated at that single theta). Generators
    whose density evaluation fails are skipped with a warning and listed in ``grid_spec``.
    """
    if len(gen_grid) == 0:
        raise ValueError("generator grid is empty")
    quad = quad or default_scheme(1)
    skipped, js_list, dd_list = [], [], []
    for idx, gen in enumerate(gen_grid):
        try:
            ps, pw = _values(p_star, gen, quad)
            if not np.all(np.isfinite(pw)):
                raise ValueError("non-finite density")
        except Exception as exc:  # any invalid generator is skipped, not fatal
            warnings.warn(f"skipping grid member {idx}: {exc}", RuntimeWarning)
            skipped.append({"index": idx, "reason": str(exc)})
            continue
        js_list.append(0.5 * (js_values(quad.weights, pw, ps) + js_values(quad.weights, ps, pw)))
        disc = disc_optimizer(ps, pw, quad)
        D = np.asarray(disc(quad.nodes), dtype=float).reshape(-1)
        dd_list.append(_delta_from_values(quad.weights, ps, pw, D))
    if not js_list:
        raise ValueError("no valid generator on the grid")
    spec = {"generators": len(gen_grid), "evaluated": len(js_list), "skipped": skipped,
            "quadrature": quad.scheme_id, "js_values": js_list, "delta_values": dd_list}
    return OracleTerms(max(0.0, min(js_list)), max(0.0, max(dd_list)), spec)


# Concentration --------------------------------------------------------------------------------


def bernstein_rhs(gen, disc, p_star: Callable, n: int, delta_level: float, bundle: ConstantsBundle,
                  quad: Optional[QuadratureScheme] = None) -> float:
    """sqrt(C_var (9 JS + Delta) log(2/delta) / (2n)) + 2 C_D log(2/delta) / (3n)."""
    if not 0 < delta_level < 1:
        raise ValueError("delta must lie in (0, 1)")
    quad = quad or default_scheme(1)
    ps, pw = _values(p_star, gen, quad)
    js = 0.5 * (js_values(quad.weights, pw, ps) + js_values(quad.weights, ps, pw))
    D = np.asarray(disc(quad.nodes), dtype=float).reshape(-1)
    dlt = max(_delta_from_values(quad.weights, ps, pw, D), 0.0)
    return bernstein_formula(js, dlt, n, delta_level, bundle.c_var, bundle.c_d)


def bernstein_formula(js: float, dlt: float, n: int, delta_level: float, cv: float, cd: float) -> float:
    log_term = math.log(2 / delta_level)
    return math.sqrt(cv * (9 * js + dlt) * log_term / (2 * n)) + 2 * cd * log_term / (3 * n)


@dataclass(frozen=True)
class ConcentrationCheckConfig:
    replicates: int = 10_000
    delta: float = 0.05
    n: int = 500
    eps_net: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 100:
            raise ValueError("at least 100 replicates required")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.eps_net <= 2:
            raise ValueError("eps_net must lie in (0, 2]")


@dataclass(frozen=True)
class ConcentrationReport:
    quantile: float
    rhs: float
    passed: bool
    population_loss: float
    replicates: int
    n: int
    delta: float
    resolution_warning: bool
    mean_loss: float
    mean_std_error: float

    @property
    def unbiased(self) -> bool:
        """Mean of L_n over replicates within 3 standard errors (plus 1e-12) of L."""
        return abs(self.mean_loss - self.population_loss) <= 3 * self.mean_std_error + 1e-12


def concentration_monte_carlo(gen, disc: ClampedDiscriminator, truth, config: ConcentrationCheckConfig,
                              bundle: ConstantsBundle, quad: Optional[QuadratureScheme] = None,
                              truth_density: Optional[Callable] = None) -> ConcentrationReport:
    """Empirical (1 - delta)-quantile of |L_n - L| over independent datasets versus the Bernstein bound.

    ``truth`` maps uniform latent points to samples of p*; ``gen`` has ``forward`` and,
    for the bound, a density (GeneratorDensity). Each replicate owns a spawned RNG stream.
    """
    quad = quad or gauss_legendre(64, 1, intervals=16)
    if config.replicates * config.delta < 10:
        warnings.warn("replicates * delta < 10: the requested quantile is poorly resolved", RuntimeWarning)
    d = disc.net.arch.input_dim
    # population loss with both expectations taken in latent space
    pop = 0.5 * float(np.dot(quad.weights, np.log(disc(np.clip(truth.forward(quad.nodes), 0, 1)))))
    pop += 0.5 * float(np.dot(quad.weights, np.log1p(-disc(gen.forward(quad.nodes)))))
    streams = np.random.SeedSequence(config.seed).spawn(config.replicates)
    n = config.n
    losses = np.empty(config.replicates)
    chunk = max(1, 200_000 // (2 * n))
    for start in range(0, config.replicates, chunk):
        idx = range(start, min(start + chunk, config.replicates))
        draws = np.stack([np.random.default_rng(streams[r]).random((2 * n, d)) for r in idx])
        U, Y = draws[:, :n].reshape(-1, d), draws[:, n:].reshape(-1, d)
        real = disc(np.clip(truth.forward(U), 0, 1)).reshape(len(idx), n)
        fake = disc(gen.forward(Y)).reshape(len(idx), n)
        losses[start : start + len(idx)] = gan_core.batched_losses(real, fake)
    devs = np.abs(losses - pop)
    q = float(np.quantile(devs, 1 - config.delta))
    p_star = truth_density if truth_density is not None else GeneratorDensity(truth, 2.0)
    rhs = bernstein_rhs(gen, disc, p_star, n, config.delta, bundle, quad)
    se = float(losses.std(ddof=1) / math.sqrt(config.replicates))
    return ConcentrationReport(q, rhs, bool(q <= rhs), pop, config.replicates, n, config.delta,
                               config.replicates * config.delta < 10, float(losses.mean()), se)


# Lipschitz continuity of the loss in the parameters -----------------------------------------


@dataclass(frozen=True)
class LipschitzReport:
    pairs: int
    w_side_passed: bool
    theta_side_passed: bool
    worst_w_ratio: float
    worst_theta_ratio: float

    @property
    def passed(self) -> bool:
        return self.w_side_passed and self.theta_side_passed


def loss_lipschitz_check(problem, pairs: Sequence[tuple], data, bundle: ConstantsBundle) -> LipschitzReport:
    """Check both parameter-side Lipschitz inequalities of L_n.

    ``pairs`` holds tuples ``(w1, w2, theta1, theta2)``; the w-side uses (w1, w2) at theta1,
    the theta-side (theta1, theta2) at w1. Ratios observed / bound are reported (<= 1 passes).
    """
    d_min, d_max = bundle.d_min, bundle.d_max
    k_w = bundle.l_G * bundle.l_X / (2 - 2 * d_max)
    k_t = bundle.l_Theta / min(d_min, 1 - d_max)
    worst_w = worst_t = 0.0
    ok_w = ok_t = True
    for w1, w2, t1, t2 in pairs:
        w1, w2, t1, t2 = (np.asarray(v, dtype=float) for v in (w1, w2, t1, t2))
        base = problem.empirical_loss(w1, t1, data)
        dw = float(np.abs(w1 - w2).max(initial=0.0))
        lhs_w = abs(base - problem.empirical_loss(w2, t1, data))
        bound_w = k_w * dw
        ok_w &= lhs_w <= bound_w + 1e-12
        worst_w = max(worst_w, lhs_w / bound_w if bound_w > 0 else (0.0 if lhs_w == 0 else math.inf))
        dt = float(np.abs(t1 - t2).max(initial=0.0))
        lhs_t = abs(base - problem.empirical_loss(w1, t2, data))
        bound_t = k_t * dt
        ok_t &= lhs_t <= bound_t + 1e-12
        worst_t = max(worst_t, lhs_t / bound_t if bound_t > 0 else (0.0 if lhs_t == 0 else math.inf))
    return LipschitzReport(len(pairs), bool(ok_w), bool(ok_t), worst_w, worst_t)


# Oracle inequality --------------------------------------------------------------------------


def oracle_rhs(terms: OracleTerms, d_g: int, d_d: int, n: int, delta_level: float, bundle: ConstantsBundle) -> float:
    """Structural right side with unit multiplicative constant:
    sqrt((Delta_G + Delta_D) T / n) + T / n, T = (d_G + d_D) log(2 (l_G l_X v l_Theta v l_p v 1) n) + log(8/delta).
    """
    if n < 1 or not 0 < delta_level < 1:
        raise ValueError("n >= 1 and 0 < delta < 1 required")
    lip = max(bundle.l_G * bundle.l_X, bundle.l_Theta, bundle.l_p, 1.0)
    T = (d_g + d_d) * math.log(2 * lip * n) + math.log(8 / delta_level)
    return math.sqrt((terms.delta_G + terms.delta_D) * T / n) + T / n


def save_report(report, path) -> Path:
    """Serialize a dataclass report (or dict) as JSON."""
    path = Path(path)
    data = asdict(report) if hasattr(report, "__dataclass_fields__") else report
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n")
    return path
