"""The vanilla GAN objective and an alternating projected-gradient solver.

Empirical loss for data X_1..X_n and latent draws Y_1..Y_n:

    L_n(w, theta) = 1/(2n) sum log D(X_i) + 1/(2n) sum log(1 - D(g_w(Y_j))).

Discriminators are ReQU networks squashed into [d_min, d_max]:
D(x) = clamp(d_min + (d_max - d_min) * logistic(f_theta(x))).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .generator_density import GeneratorDensity, as_points, density
from .generators import SplineGeneratorFamily, spline_family
from .quadrature import QuadratureScheme, default_scheme
from .requ_net import (Architecture, ParamVector, ReQUNetwork, from_params,
                       param_roundtrip, sparsity_projection, vjp)

__all__ = [
    "clamp",
    "ClampedDiscriminator",
    "Dataset",
    "make_dataset",
    "loss_from_values",
    "batched_losses",
    "empirical_loss",
    "population_loss",
    "optimal_discriminator",
    "GANProblem",
    "TrainingConfig",
    "TrainingRun",
    "TrainingError",
    "train",
    "BestResponseConfig",
    "FeatureDiscriminator",
    "train_best_response",
    "sample_generator",
]


# weight of each half of the empirical loss; kept separate from the population loss
EMPIRICAL_WEIGHT = 0.5


class TrainingError(RuntimeError):
    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


def clamp(raw, d_min: float, d_max: float):
    if d_min > d_max:
        raise ValueError("d_min must not exceed d_max")
    return np.minimum(d_max, np.maximum(d_min, raw))


@dataclass(frozen=True)
class ClampedDiscriminator:
    net: ReQUNetwork
    d_min: float
    d_max: float

    def __post_init__(self):
        if not 0 < self.d_min <= self.d_max < 1:
            raise ValueError("need 0 < d_min <= d_max < 1")
        if self.net.arch.output_dim != 1:
            raise ValueError("discriminator must have scalar output")

    def logits(self, x) -> np.ndarray:
        return self.net.forward(x)[:, 0]

    def squash(self, t: np.ndarray) -> np.ndarray:
        return self.d_min + (self.d_max - self.d_min) * expit(t)

    def __call__(self, x) -> np.ndarray:
        xb, single = as_points(x, self.net.arch.input_dim)
        out = clamp(self.squash(self.logits(xb)), self.d_min, self.d_max)
        return out[0] if single else out

    def input_gradient(self, x) -> np.ndarray:
        """Gradient of D with respect to x, shape ``(B, d)``."""
        xb, _ = as_points(x, self.net.arch.input_dim)
        s = expit(self.logits(xb))
        scale = (self.d_max - self.d_min) * s * (1 - s)
        return scale[:, None] * self.net.jacobian(xb)[:, 0, :]


@dataclass(frozen=True)
class Dataset:
    real_samples: np.ndarray
    latent_samples: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.real_samples, dtype=float))
        Y = np.atleast_2d(np.asarray(self.latent_samples, dtype=float))
        if X.shape[0] == 1 and X.shape[1] > 1 and Y.shape[1] != X.shape[1]:
            X = X.T
        if X.shape != Y.shape:
            raise ValueError(f"real and latent samples disagree in shape: {X.shape} vs {Y.shape}")
        if np.any(X < 0) or np.any(X > 1) or np.any(Y < 0) or np.any(Y > 1):
            raise ValueError("samples must lie in the unit cube")
        object.__setattr__(self, "real_samples", X)
        object.__setattr__(self, "latent_samples", Y)

    @property
    def n(self) -> int:
        return self.real_samples.shape[0]

    @property
    def d(self) -> int:
        return self.real_samples.shape[1]


def make_dataset(truth, n: int, seed: int, d: int = 1) -> Dataset:
    """Real samples X = g*(U) and independent latent draws, both from one seeded stream."""
    rng = np.random.default_rng(seed)
    U = rng.random((n, d))
    X = np.clip(truth.forward(U), 0.0, 1.0)
    Y = rng.random((n, d))
    return Dataset(X, Y, seed)


def loss_from_values(d_real, d_fake) -> float:
    """(1/2) mean log D(X) + (1/2) mean log(1 - D(g(Y)))."""
    d_real = np.asarray(d_real, dtype=float).reshape(-1)
    d_fake = np.asarray(d_fake, dtype=float).reshape(-1)
    return EMPIRICAL_WEIGHT * float(np.mean(np.log(d_real))) + EMPIRICAL_WEIGHT * float(np.mean(np.log1p(-d_fake)))


def batched_losses(d_real: np.ndarray, d_fake: np.ndarray) -> np.ndarray:
    """Empirical losses of R datasets at once; inputs have shape ``(R, n)``."""
    return EMPIRICAL_WEIGHT * np.log(d_real).mean(axis=1) + EMPIRICAL_WEIGHT * np.log1p(-d_fake).mean(axis=1)


def _forward_map(gen, y):
    return gen.forward(y) if hasattr(gen, "forward") else gen(y)


def empirical_loss(gen, disc: ClampedDiscriminator, data: Dataset) -> float:
    fake = _forward_map(gen, data.latent_samples)
    if fake.shape[1] != disc.net.arch.input_dim:
        raise ValueError("generator output and discriminator input dimensions differ")
    return loss_from_values(disc(data.real_samples), disc(fake))


def population_loss(gen, disc: ClampedDiscriminator, p_star, quad: Optional[QuadratureScheme] = None,
                    latent_space: bool = True) -> float:
    """L(w, theta) by quadrature.

    ``p_star`` is a density callable or a map (object with ``forward``) pushing the
    uniform law to p*; in the latter case the data term is integrated in latent space.
    The fake term is integrated in latent space unless ``latent_space`` is False, in
    which case it uses the push-forward density of ``gen`` on the x-nodes.
    """
    d = disc.net.arch.input_dim
    quad = quad or default_scheme(d)
    nodes, w = quad.nodes, quad.weights
    if hasattr(p_star, "forward"):
        data_term = np.dot(w, np.log(disc(np.clip(p_star.forward(nodes), 0, 1))))
    else:
        data_term = np.dot(w, np.asarray(p_star(nodes)).reshape(-1) * np.log(disc(nodes)))
    if latent_space:
        fake_term = np.dot(w, np.log1p(-disc(_forward_map(gen, nodes))))
    else:
        pw = density(gen, nodes) if isinstance(gen, GeneratorDensity) else gen.density(nodes)
        fake_term = np.dot(w, pw * np.log1p(-disc(nodes)))
    return 0.5 * float(data_term) + 0.5 * float(fake_term)


def optimal_discriminator(p_star: Callable, p_w: Callable) -> Callable:
    """D*(x) = p*(x) / (p*(x) + p_w(x))."""

    def d_star(x):
        a = np.asarray(p_star(x), dtype=float)
        b = np.asarray(p_w(x), dtype=float)
        s = a + b
        if np.any(s <= 0):
            raise ZeroDivisionError("p* + p_w vanishes at an evaluation point")
        return a / s

    return d_star


@dataclass(frozen=True)
class GANProblem:
    """Architectures, range and sparsity constraints for a generator/discriminator pair."""

    gen_arch: Architecture
    disc_arch: Architecture
    d_min: float = 0.2
    d_max: float = 0.8
    gen_sparsity: Optional[int] = None
    disc_sparsity: Optional[int] = None
    lambda_bound: float = 2.0

    def generator_net(self, w) -> ReQUNetwork:
        return from_params(self.gen_arch, self.gen_sparsity, np.asarray(w, dtype=float))

    def generator(self, w) -> GeneratorDensity:
        return GeneratorDensity(self.generator_net(w), self.lambda_bound)

    def discriminator(self, theta) -> ClampedDiscriminator:
        return ClampedDiscriminator(from_params(self.disc_arch, self.disc_sparsity, np.asarray(theta, dtype=float)),
                                    self.d_min, self.d_max)

    def empirical_loss(self, w, theta, data: Dataset) -> float:
        return empirical_loss(self.generator_net(w), self.discriminator(theta), data)

    def population_loss(self, w, theta, p_star, quad=None, latent_space: bool = True) -> float:
        gen = self.generator(w) if not latent_space else self.generator_net(w)
        return population_loss(gen, self.discriminator(theta), p_star, quad, latent_space)

    def gradients(self, w, theta, real: np.ndarray, latent: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Return (L_n, dL/dw, dL/dtheta) on the given batch, differentiating through the squashing."""
        gen = self.generator_net(w)
        disc = self.discriminator(theta)
        span = self.d_max - self.d_min
        n_real, n_fake = real.shape[0], latent.shape[0]
        fake = gen.forward(latent)
        s_r = expit(disc.logits(real))
        s_f = expit(disc.logits(fake))
        D_r = self.d_min + span * s_r
        D_f = self.d_min + span * s_f
        loss = 0.5 * float(np.mean(np.log(D_r))) + 0.5 * float(np.mean(np.log1p(-D_f)))
        up_r = (span * s_r * (1 - s_r) / D_r / (2 * n_real))[:, None]
        up_f = (-span * s_f * (1 - s_f) / (1 - D_f) / (2 * n_fake))[:, None]
        g_theta_r, _ = vjp(disc.net, real, up_r)
        g_theta_f, gx = vjp(disc.net, fake, up_f)
        g_w, _ = vjp(gen, latent, gx)
        return loss, g_w, g_theta_r + g_theta_f


@dataclass(frozen=True)
class TrainingConfig:
    lr_g: float = 0.005
    lr_d: float = 0.02
    k_d: int = 5
    epochs: int = 1500
    batch_size: Optional[int] = None
    seed: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    snapshot_every: int = 10
    pool_refresh: int = 50
    polish_steps: int = 0

    def __post_init__(self):
        if not (self.lr_g > 0 and self.lr_d > 0):
            raise ValueError("step sizes must be positive")
        if self.k_d < 1 or self.epochs < 0:
            raise ValueError("k_d >= 1 and epochs >= 0 required")


@dataclass
class TrainingRun:
    config: TrainingConfig
    w_hat: ParamVector
    theta_hat: ParamVector
    trace: list
    wall_time: float
    w_init: ParamVector
    selected_epoch: int = 0

    def to_jsonl(self, path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec) + "\n")
        return path


class _Adam:
    def __init__(self, size: int, lr: float, beta1: float, beta2: float, eps: float = 1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _default_project(vec: np.ndarray, budget: Optional[int]) -> np.ndarray:
    return sparsity_projection(vec, budget)


def train(problem: GANProblem, data: Dataset, config: TrainingConfig, w0, theta0,
          gen_mask: Optional[np.ndarray] = None,
          gen_project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
          gen_accept: Optional[Callable[[np.ndarray], bool]] = None) -> TrainingRun:
    """Alternating projected Adam: k_d ascent steps on theta per descent step on w.

    ``gen_mask`` selects trainable generator coordinates, ``gen_project`` maps a
    parameter vector back into the admissible set, and ``gen_accept`` can veto a
    generator step (e.g. a failed Λ-audit), in which case w is left unchanged.
    The returned w_hat minimizes max_theta L_n over a pool of discriminator
    snapshots among the recorded generator snapshots (w0 always included).
    """
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    w = np.array(w0, dtype=float)
    theta = np.array(theta0, dtype=float)
    mask = np.ones_like(w, dtype=bool) if gen_mask is None else np.asarray(gen_mask, dtype=bool)
    project_w = gen_project or (lambda v: _default_project(v, problem.gen_sparsity))
    opt_w = _Adam(w.size, config.lr_g, config.beta1, config.beta2)
    opt_t = _Adam(theta.size, config.lr_d, config.beta1, config.beta2)
    X, Y = data.real_samples, data.latent_samples
    n = data.n
    batch = n if config.batch_size is None else min(config.batch_size, n)
    trace = []
    w_snaps = [(0, w.copy())]
    theta_pool = [theta.copy()]

    def draw():
        if batch == n:
            return X, Y
        return X[rng.integers(0, n, batch)], Y[rng.integers(0, n, batch)]

    for epoch in range(1, config.epochs + 1):
        for _ in range(config.k_d):
            xr, yl = draw()
            _, _, g_t = problem.gradients(w, theta, xr, yl)
            theta = _default_project(theta + opt_t.step(g_t), problem.disc_sparsity)
        xr, yl = draw()
        loss, g_w, _ = problem.gradients(w, theta, xr, yl)
        if not np.isfinite(loss) or not np.all(np.isfinite(g_w)):
            trace.append({"epoch": epoch, "L_n": float(loss), "grad_w": float("nan"), "grad_theta": float("nan")})
            raise TrainingError(f"non-finite loss at epoch {epoch}", trace)
        step = np.where(mask, opt_w.step(np.where(mask, g_w, 0.0)), 0.0)
        candidate = project_w(w - step)
        if gen_accept is None or gen_accept(candidate):
            w = candidate
        trace.append({"epoch": epoch, "L_n": loss, "grad_w": float(np.abs(g_w[mask]).max()) if mask.any() else 0.0,
                      "grad_theta": float(np.abs(g_t).max())})
        if epoch % config.snapshot_every == 0:
            w_snaps.append((epoch, w.copy()))
        if epoch % config.pool_refresh == 0:
            theta_pool.append(theta.copy())
    if config.epochs % config.snapshot_every:
        w_snaps.append((config.epochs, w.copy()))
    theta_pool.append(theta.copy())

    best_epoch, best_w, best_val = 0, w_snaps[0][1], math.inf
    for epoch, ws in w_snaps:
        val = max(problem.empirical_loss(ws, t, data) for t in theta_pool)
        if val < best_val:
            best_epoch, best_w, best_val = epoch, ws, val
    return TrainingRun(config, ParamVector(best_w), ParamVector(theta), trace, time.perf_counter() - start,
                       ParamVector(np.array(w0, dtype=float)), best_epoch)


@dataclass(frozen=True)
class FeatureDiscriminator:
    """One-hidden-layer ReQU discriminator with a frozen spline first layer.

    The logit is ``t(x) = sum_k a_k sigma(c_k x - s_k)`` with ``|a_k| <= replicas``.
    Each hidden unit is repeated ``replicas`` times with output weight ``a_k / replicas``,
    so the realized network has all entries in [-1, 1].
    """

    family: SplineGeneratorFamily
    replicas: int = 8
    d_min: float = 0.2
    d_max: float = 0.8

    @property
    def size(self) -> int:
        return self.family.units

    def logit_features(self, x) -> np.ndarray:
        return self.family.features(np.asarray(x, dtype=float).reshape(-1))

    def logit_slopes(self, x) -> np.ndarray:
        return self.family._slope_features(np.asarray(x, dtype=float).reshape(-1))

    def network(self, a) -> ReQUNetwork:
        a = np.asarray(a, dtype=float).reshape(-1)
        if np.abs(a).max(initial=0.0) > self.replicas * (1 + 1e-12):
            raise ValueError("output weights exceed the replica budget")
        W0, v = self.family._first_layer()
        R = self.replicas
        W1 = np.repeat(np.clip(a / R, -1.0, 1.0), R)[None, :]
        return ReQUNetwork(Architecture(1, (1, self.size * R, 1)), (np.repeat(W0, R, axis=0), W1), (np.repeat(v, R),))

    def discriminator(self, a) -> ClampedDiscriminator:
        return ClampedDiscriminator(self.network(a), self.d_min, self.d_max)

    def _terms(self, t: np.ndarray, real: bool):
        """log D (or log(1-D)) and its first derivative in the logit."""
        span = self.d_max - self.d_min
        s = expit(t)
        D = self.d_min + span * s
        q = span * s * (1 - s)
        if real:
            return np.log(D), q / D
        return np.log1p(-D), -q / (1 - D)

    def loss(self, a, F_real: np.ndarray, F_fake: np.ndarray) -> float:
        return 0.5 * float(self._terms(F_real @ a, True)[0].mean()) + 0.5 * float(self._terms(F_fake @ a, False)[0].mean())

    def best_response(self, F_real: np.ndarray, F_fake: np.ndarray, warm: Optional[np.ndarray] = None) -> np.ndarray:
        """Maximize the empirical loss over the box |a| <= replicas (smooth, started warm and at zero)."""
        def neg(a):
            v1, d1 = self._terms(F_real @ a, True)
            v2, d2 = self._terms(F_fake @ a, False)
            val = 0.5 * v1.mean() + 0.5 * v2.mean()
            grad = 0.5 * F_real.T @ d1 / d1.size + 0.5 * F_fake.T @ d2 / d2.size
            return -val, -grad

        starts = [np.zeros(self.size)] if warm is None else [np.asarray(warm, dtype=float), np.zeros(self.size)]
        best = None
        for a0 in starts:
            res = minimize(neg, a0, jac=True, method="L-BFGS-B", bounds=[(-self.replicas, self.replicas)] * self.size,
                           options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-11})
            if best is None or res.fun < best.fun:
                best = res
        return best.x


@dataclass(frozen=True)
class BestResponseConfig:
    epochs: int = 400
    disc_knots: int = 32
    disc_replicas: int = 8
    lr0: float = 1.0
    max_halvings: int = 20
    seed: int = 0
    d_min: float = 0.2
    d_max: float = 0.8

    def __post_init__(self):
        if self.epochs < 0 or self.lr0 <= 0 or self.disc_replicas < 1:
            raise ValueError("epochs >= 0, lr0 > 0 and disc_replicas >= 1 required")


def train_best_response(family: SplineGeneratorFamily, data: Dataset, config: BestResponseConfig, u0) -> TrainingRun:
    """Projected descent on Phi(u) = max_a L_n(u, a) for a 1-D spline generator family.

    The inner maximum is solved to optimality at every generator iterate, so the
    generator step follows the Danskin gradient of Phi. Steps are preconditioned by
    the H^1 Gram matrix of the generator features, projected back onto the
    regular polytope, and accepted only when Phi decreases (step size x1.5 on
    success, halved on failure). Training stops when no decrease is found.
    """
    if family.d != 1 or data.d != 1:
        raise ValueError("best-response training is implemented for d = 1")
    start = time.perf_counter()
    disc = FeatureDiscriminator(spline_family(config.disc_knots), config.disc_replicas, config.d_min, config.d_max)
    n = data.n
    F_real = disc.logit_features(data.real_samples[:, 0])
    F_lat = family.features(data.latent_samples[:, 0])
    M = family.metric()
    M_inv = np.linalg.inv(M)
    u = family.project_weights(u0)[0]
    u_init = u.copy()

    def phi(u, warm):
        F_fake = disc.logit_features(F_lat @ u)
        a = disc.best_response(F_real, F_fake, warm)
        return disc.loss(a, F_real, F_fake), a, F_fake

    val, a, F_fake = phi(u, None)
    trace = []
    lr = config.lr0
    best_epoch = 0
    for epoch in range(1, config.epochs + 1):
        x_fake = F_lat @ u
        _, d2 = disc._terms(F_fake @ a, False)
        grad = 0.5 * F_lat.T @ (d2 * (disc.logit_slopes(x_fake) @ a)) / n
        if not np.all(np.isfinite(grad)):
            trace.append({"epoch": epoch, "L_n": float(val), "grad_w": float("nan"), "step": lr})
            raise TrainingError(f"non-finite gradient at epoch {epoch}", trace)
        accepted = False
        for _ in range(config.max_halvings):
            cand = family.project_weights(u - lr * (M_inv @ grad), M)[0]
            v_new, a_new, F_new = phi(cand, a)
            if v_new < val:
                u, val, a, F_fake = cand, v_new, a_new, F_new
                accepted = True
                lr *= 1.5
                break
            lr *= 0.5
        if not accepted:
            break
        best_epoch = epoch
        trace.append({"epoch": epoch, "L_n": float(val), "grad_w": float(np.abs(grad).max()), "step": float(lr)})
    w_hat = ParamVector(family.params(u[None]))
    theta_hat = param_roundtrip(disc.network(a))
    return TrainingRun(config, w_hat, theta_hat, trace, time.perf_counter() - start,
                       ParamVector(family.params(u_init[None])), best_epoch)


def sample_generator(g, m: int, seed: int) -> np.ndarray:
    if m < 1:
        raise ValueError("m must be positive")
    net = g.net if isinstance(g, GeneratorDensity) else g
    d = net.arch.input_dim if isinstance(net, ReQUNetwork) else net.input_dim
    rng = np.random.default_rng(seed)
    return net.forward(rng.random((m, d)))
