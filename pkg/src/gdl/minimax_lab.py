"""Bump-perturbed generator families used for minimax lower bounds.

For a bandwidth h, smoothness beta and centers x_1..x_M the inverse generator is

    g_theta^{-1}(x) = x + h^beta sum_j theta_j grad phi((x - x_j) / h),

so the push-forward of the uniform law has log-density
log det A_theta(x), with A_theta(x) = I + h^(beta-1) sum_j theta_j Hess phi((x - x_j) / h).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "BumpFunction",
    "bump_eval",
    "holder_constant",
    "packing_centers",
    "PackingError",
    "FamilyInvalidError",
    "PerturbedFamily",
    "inverse_map",
    "log_density",
    "score",
    "FisherEstimate",
    "fisher_information",
    "ball_quadrature",
    "expected_fisher_single",
    "prior_energy_ball",
    "prior_energy_product",
    "van_trees_rhs",
    "ScoreBoundReport",
    "score_lower_bound_check",
    "bandwidth",
    "LowerBoundPoint",
    "lower_bound_curve",
    "packing_constant",
    "loglog_slope",
]


class PackingError(ValueError):
    """The requested bandwidth leaves no room for a 2h-separated packing of [1/3, 2/3]^d."""


class FamilyInvalidError(ValueError):
    """A_theta(x) is not positive definite, so the perturbed map is not a valid generator."""


@dataclass(frozen=True)
class BumpFunction:
    """phi(x) = c exp(-1 / (1 - |x|^2)) on the open unit ball, zero outside."""

    c: float = math.e
    d: int = 1
    h_phi: Optional[float] = None

    def __post_init__(self):
        if self.c <= 0 or self.d < 1:
            raise ValueError("scale must be positive and d >= 1")
        if self.h_phi is None:
            object.__setattr__(self, "h_phi", holder_constant(self))

    def __call__(self, x):
        return bump_eval(self, x)[0]


def _as_rows(x, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim == 1:
        if d == 1 and x.size != 1:
            return x.reshape(-1, 1), False
        return x.reshape(1, d), True
    return x, False


def bump_eval(b: BumpFunction, x):
    """Value, gradient and Hessian of the bump; zero triple outside the open unit ball."""
    z, single = _as_rows(x, b.d)
    r2 = np.sum(z * z, axis=1)
    inside = r2 < 1.0
    s = np.where(inside, 1.0 - r2, 1.0)
    val = np.where(inside, b.c * np.exp(-1.0 / s), 0.0)
    # psi = -1/s, grad psi = -2 z / s^2, Hess psi = -2 I / s^2 - 8 z z' / s^3
    gpsi = -2.0 * z / (s * s)[:, None]
    grad = val[:, None] * gpsi
    eye = np.eye(b.d)
    hpsi = -2.0 * eye[None] / (s * s)[:, None, None] - 8.0 * z[:, :, None] * z[:, None, :] / (s ** 3)[:, None, None]
    hess = val[:, None, None] * (gpsi[:, :, None] * gpsi[:, None, :] + hpsi)
    if single:
        return float(val[0]), grad[0], hess[0]
    return val, grad, hess


def holder_constant(b: BumpFunction, res: int = 2001) -> float:
    """Grid estimate of max(sup|phi|, sup|grad phi|, sup|Hess phi|, Lipschitz constant of Hess phi) along a ray."""
    r = np.linspace(0.0, 1.0, res)
    pts = np.zeros((res, b.d))
    pts[:, 0] = r
    val, grad, hess = bump_eval(BumpFunction(b.c, b.d, h_phi=1.0), pts)
    hn = np.linalg.norm(hess, ord=2, axis=(1, 2))
    lip = np.max(np.abs(np.diff(hess.reshape(res, -1), axis=0)).max(axis=1) / np.diff(r)) * b.d
    return float(max(np.abs(val).max(), np.linalg.norm(grad, axis=1).max(), hn.max(), lip))


SPACING = 2.2


def packing_constant() -> float:
    """Lattice spacing in units of h; the packing holds about (1/(3 * spacing * h))^d centers."""
    return SPACING


def packing_centers(h: float, d: int) -> np.ndarray:
    """Axis-aligned lattice in [1/3, 2/3]^d with spacing 2.2 h (> 2h)."""
    if not 0 < h < 1.0 / 12:
        raise PackingError(f"h = {h} must lie in (0, 1/12) for a nontrivial packing")
    s = SPACING * h
    k = int(math.floor((1.0 / 3) / s + 1e-12))
    axis = 1.0 / 3 + s * np.arange(k + 1)
    axis = axis[axis <= 2.0 / 3 + 1e-12]
    return np.array(list(itertools.product(axis, repeat=d)), dtype=float)


@dataclass(frozen=True)
class PerturbedFamily:
    h: float
    beta: float
    centers: np.ndarray
    theta: np.ndarray
    bump: BumpFunction = field(default_factory=BumpFunction)
    lam: float = 1.0

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if centers.shape[1] != self.bump.d:
            raise ValueError("centers and bump disagree in dimension")
        if theta.size != centers.shape[0]:
            raise ValueError("theta must have one entry per center")
        if self.h <= 0 or self.beta <= 2:
            raise ValueError("h > 0 and beta > 2 required")
        if np.linalg.norm(theta) > self.h * (1 + 1e-12):
            raise ValueError("theta must lie in the ball of radius h")
        if centers.shape[0] > 1:
            dist = np.linalg.norm(centers[:, None] - centers[None], axis=2)
            np.fill_diagonal(dist, np.inf)
            if dist.min() <= 2 * self.h:
                raise ValueError("centers must be more than 2h apart")
        centers.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "theta", theta)

    @property
    def d(self) -> int:
        return self.bump.d

    @property
    def M(self) -> int:
        return self.centers.shape[0]

    def with_theta(self, theta) -> "PerturbedFamily":
        return PerturbedFamily(self.h, self.beta, self.centers, theta, self.bump, self.lam)

    def _hessians(self, x: np.ndarray) -> np.ndarray:
        """Hess phi((x - x_j)/h) for all j, shape (B, M, d, d)."""
        z = (x[:, None, :] - self.centers[None]) / self.h
        _, _, H = bump_eval(self.bump, z.reshape(-1, self.d))
        return H.reshape(x.shape[0], self.M, self.d, self.d)

    def matrix(self, x) -> np.ndarray:
        xb, _ = _as_rows(x, self.d)
        H = self._hessians(xb)
        return np.eye(self.d)[None] + self.h ** (self.beta - 1) * np.einsum("j,bjkl->bkl", self.theta, H)


def inverse_map(fam: PerturbedFamily, x) -> np.ndarray:
    xb, single = _as_rows(x, fam.d)
    z = (xb[:, None, :] - fam.centers[None]) / fam.h
    _, G, _ = bump_eval(fam.bump, z.reshape(-1, fam.d))
    out = xb + fam.h ** fam.beta * np.einsum("j,bjk->bk", fam.theta, G.reshape(xb.shape[0], fam.M, fam.d))
    return out[0] if single else out


def log_density(fam: PerturbedFamily, x) -> np.ndarray:
    xb, single = _as_rows(x, fam.d)
    A = fam.matrix(xb)
    sign, logdet = np.linalg.slogdet(A)
    if np.any(sign <= 0) or np.any(np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, 1, 2)))[:, 0] <= 0):
        raise FamilyInvalidError("A_theta(x) is not positive definite")
    return float(logdet[0]) if single else logdet


def score(fam: PerturbedFamily, x, j: int) -> np.ndarray:
    """d log p / d theta_j = h^(beta-1) Tr(A^{-1} Hess phi((x - x_j)/h))."""
    if not 0 <= j < fam.M:
        raise IndexError(f"center index {j} out of range")
    xb, single = _as_rows(x, fam.d)
    A = fam.matrix(xb)
    if np.any(np.abs(np.linalg.det(A)) < 1e-14):
        raise FamilyInvalidError("A_theta(x) is singular")
    z = (xb - fam.centers[j]) / fam.h
    _, _, Hj = bump_eval(fam.bump, z)
    Hj = Hj.reshape(xb.shape[0], fam.d, fam.d)
    out = fam.h ** (fam.beta - 1) * np.trace(np.linalg.solve(A, Hj), axis1=1, axis2=2)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class FisherEstimate:
    per_index: np.ndarray
    total: float
    quadrature_id: str


def ball_quadrature(center: np.ndarray, radius: float, n: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre nodes on the cube around a ball, restricted by the ball indicator."""
    t, w = np.polynomial.legendre.leggauss(n)
    d = center.size
    x = t * radius
    wx = w * radius
    nodes = np.array(list(itertools.product(x, repeat=d))) + center
    weights = np.prod(np.array(list(itertools.product(wx, repeat=d))), axis=1)
    keep = np.linalg.norm(nodes - center, axis=1) < radius
    return nodes[keep], weights[keep]


def fisher_information(fam: PerturbedFamily, n_nodes: int = 64) -> FisherEstimate:
    """I_j(theta) = int score_j^2 p_theta dx; score_j vanishes off the ball around x_j."""
    per = np.empty(fam.M)
    for j in range(fam.M):
        nodes, weights = ball_quadrature(fam.centers[j], fam.h, n_nodes)
        s = score(fam, nodes, j)
        p = np.exp(log_density(fam, nodes))
        per[j] = float(np.dot(weights, s * s * p))
    return FisherEstimate(per, float(per.sum()), f"ball-gl{n_nodes}^{fam.d}")


def _bump_marginal_1d(bump_c: float = math.e, n: int = 201):
    """Normalized 1-D bump density on (-1, 1) on Gauss-Legendre nodes."""
    t, w = np.polynomial.legendre.leggauss(n)
    val = bump_c * np.exp(-1.0 / (1.0 - t * t))
    return t, w * val / np.dot(w, val)


def expected_fisher_single(h: float, beta: float, d: int = 1, n_theta: int = 41, n_nodes: int = 64) -> float:
    """E_lambda I_1 for one center when theta_1 ~ h * (normalized 1-D bump); disjoint balls decouple the centers."""
    bump = BumpFunction(d=d)
    c = np.full(d, 0.5)
    t, w = _bump_marginal_1d(n=n_theta)
    vals = []
    for tk in t:
        fam = PerturbedFamily(h, beta, c[None], np.array([h * tk]), bump)
        vals.append(fisher_information(fam, n_nodes).total)
    return float(np.dot(w, vals))


def prior_energy_product(M: float, h: float) -> float:
    """Prior energy of theta_j i.i.d. h * (1-D bump): J = M * J_1 / h^2 with J_1 = int (log phi)'^2 phi / int phi."""
    t, w = _bump_marginal_1d(n=401)
    dlog = -2.0 * t / (1.0 - t * t) ** 2
    return float(M * np.dot(w, dlog * dlog) / h ** 2)


def prior_energy_ball(M: int, h: float, samples: int = 100_000, seed: int = 0) -> float:
    """Prior energy of lambda(theta) = h^-M lambda_0(theta / h), lambda_0 the bump normalized on the unit ball of R^M.

    J = h^-2 E_u[|grad log phi|^2 phi] / E_u[phi] for u uniform on the ball (Monte Carlo).
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((samples, M))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    u = g * rng.random(samples)[:, None] ** (1.0 / M)
    r2 = np.sum(u * u, axis=1)
    s = 1.0 - r2
    phi = np.exp(-1.0 / s)
    grad2 = 4.0 * r2 / s ** 4
    return float(np.mean(grad2 * phi) / np.mean(phi) / h ** 2)


def van_trees_rhs(M: float, n: int, fisher_total: float, prior_energy: float) -> float:
    """M^2 / (n * sum_j E I_j + J(lambda))."""
    denom = n * fisher_total + prior_energy
    if not denom > 0:
        raise ValueError("degenerate van Trees denominator")
    return M * M / denom


@dataclass(frozen=True)
class ScoreBoundReport:
    r0: float
    bound: float
    min_abs_score: float
    precondition_ok: bool
    passed: bool
    per_center_min: list


def score_lower_bound_check(fam: PerturbedFamily, grid: int = 41) -> ScoreBoundReport:
    """Evaluate |score_j| on a grid over B(x_j, r0), r0 = h / (2 (H_phi v 1)), against h^(beta-1) d / 2.

    The precondition (h small) is checked numerically: -Hess phi((x - x_j)/h) >= I/2 on the
    ball and h^beta * sup|Hess phi| * |theta|/h <= 1/2. When it fails the report says so
    and ``passed`` is False without raising.
    """
    r0 = fam.h / (2 * max(fam.bump.h_phi, 1.0))
    bound = fam.h ** (fam.beta - 1) * fam.d / 2
    axis = np.linspace(-r0, r0, grid)
    offs = np.array(list(itertools.product(axis, repeat=fam.d)))
    offs = offs[np.linalg.norm(offs, axis=1) <= r0 + 1e-15]
    hess_sup = max(fam.bump.h_phi, 1.0)
    theta_max = float(np.abs(fam.theta).max(initial=0.0))
    pre = fam.h ** (fam.beta - 1) * theta_max * hess_sup <= 0.5 and fam.h <= 0.5
    mins = []
    for j in range(fam.M):
        pts = fam.centers[j] + offs
        _, _, H = bump_eval(fam.bump, offs / fam.h)
        if np.linalg.eigvalsh(-H.reshape(-1, fam.d, fam.d))[:, 0].min() < 0.5:
            pre = False
        try:
            mins.append(float(np.abs(score(fam, pts, j)).min()))
        except FamilyInvalidError:
            pre = False
            mins.append(float("nan"))
    worst = float(np.nanmin(mins)) if mins and not all(np.isnan(mins)) else float("nan")
    return ScoreBoundReport(r0, bound, worst, bool(pre), bool(pre and worst >= bound), mins)


def bandwidth(n: int, beta: float, d: int, lam: float) -> float:
    """h(n) = (1 / (n Lambda^d d^2))^(1 / (2 beta + d))."""
    if n < 1:
        raise ValueError("n >= 1 required")
    return (1.0 / (n * lam ** d * d * d)) ** (1.0 / (2 * beta + d))


@dataclass(frozen=True)
class LowerBoundPoint:
    n: int
    h: float
    M_eff: float
    fisher_total: float
    prior_energy: float
    van_trees: float
    density_bound: float


def lower_bound_curve(ns: Sequence[int], beta: float = 3.0, d: int = 1, lam: float = 1.5,
                      fisher: str = "leading") -> list[LowerBoundPoint]:
    """Assembled density lower bound van_trees * h^(2 beta - 2 + d) / Lambda^(2d) with h = bandwidth(n).

    The packing size uses the continuous lattice count M_eff = (1 / (3 * 2.2 * h))^d and the
    prior is a product of scaled 1-D bumps, which keeps M ~ h^-d and J ~ M / h^2 exact in h.
    ``fisher="leading"`` uses I_j(0), the small-h limit of E_lambda I_j; ``fisher="prior"``
    averages over the prior and raises FamilyInvalidError where theta in B(0, h) breaks validity.
    """
    if fisher not in ("leading", "prior"):
        raise ValueError("fisher must be 'leading' or 'prior'")
    out = []
    for n in ns:
        h = bandwidth(n, beta, d, lam)
        m_eff = (1.0 / (3 * SPACING * h)) ** d
        if fisher == "prior":
            per_center = expected_fisher_single(h, beta, d)
        else:
            per_center = fisher_information(PerturbedFamily(h, beta, np.full((1, d), 0.5), [0.0], BumpFunction(d=d))).total
        energy = prior_energy_product(m_eff, h)
        vt = van_trees_rhs(m_eff, n, m_eff * per_center, energy)
        out.append(LowerBoundPoint(int(n), h, m_eff, m_eff * per_center, energy, vt,
                                   vt * h ** (2 * beta - 2 + d) / lam ** (2 * d)))
    return out


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
