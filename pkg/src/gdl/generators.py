"""Concrete Λ-regular ReQU generators of the unit cube.

The 1-D family uses one hidden layer. Two gadget units give a linear term,

    (y + 1)^2 - (1 - y)^2 = 4y,

and knot units sigma(y - v_k) add a quadratic spline. With the first layer held
fixed, the boundary conditions g(0) = 0 and g(1) = 1 are linear in the output
weights, so the family is a polytope slice of [-1, 1]^m. In d = 2 the map acts
coordinatewise through a block-diagonal network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .generator_density import GeneratorDensity, InversionConfig, cube_grid
from .requ_net import Architecture, ReQUNetwork, from_params, param_roundtrip

__all__ = [
    "SplineGeneratorFamily",
    "spline_family",
    "audit_regular",
]


@dataclass(frozen=True)
class SplineGeneratorFamily:
    """Block-diagonal quadratic-spline generators with a frozen first layer."""

    knots: tuple
    d: int = 1
    lambda_bound: float = 2.0

    @property
    def units(self) -> int:
        return len(self.knots) + 2

    @property
    def arch(self) -> Architecture:
        m = self.units * self.d
        return Architecture(1, (self.d, m, self.d))

    def _first_layer(self):
        m, d = self.units, self.d
        W0 = np.zeros((m * d, d))
        v = np.zeros(m * d)
        for axis in range(d):
            rows = slice(axis * m, (axis + 1) * m)
            col = np.ones(m)
            col[1] = -1.0
            W0[rows, axis] = col
            v[rows] = np.concatenate(([-1.0, -1.0], self.knots))
        return W0, v

    def features(self, y: np.ndarray) -> np.ndarray:
        """Hidden activations of one axis block at scalar inputs ``y``."""
        y = np.asarray(y, dtype=float).reshape(-1, 1)
        col = np.ones(self.units)
        col[1] = -1.0
        shifts = np.concatenate(([-1.0, -1.0], self.knots))
        return np.maximum(y * col - shifts, 0.0) ** 2

    def network(self, output_weights) -> ReQUNetwork:
        """Build the network from per-axis output weights, shape ``(d, units)``."""
        u = np.asarray(output_weights, dtype=float).reshape(self.d, self.units)
        W0, v = self._first_layer()
        W1 = np.zeros((self.d, self.units * self.d))
        for axis in range(self.d):
            W1[axis, axis * self.units : (axis + 1) * self.units] = u[axis]
        return ReQUNetwork(self.arch, (W0, W1), (v,))

    def output_weights(self, net: ReQUNetwork) -> np.ndarray:
        W1 = net.weights[1]
        return np.stack([W1[a, a * self.units : (a + 1) * self.units] for a in range(self.d)])

    def trainable_mask(self) -> np.ndarray:
        """Boolean mask over the flat parameter vector selecting the block-diagonal output weights."""
        arch = self.arch
        mask = np.zeros(arch.n_params, dtype=bool)
        offset = arch.widths[1] * arch.widths[0] + arch.widths[1]
        block = np.zeros((self.d, self.units * self.d), dtype=bool)
        for axis in range(self.d):
            block[axis, axis * self.units : (axis + 1) * self.units] = True
        mask[offset:] = block.reshape(-1)
        return mask

    def identity_weights(self) -> np.ndarray:
        u = np.zeros((self.d, self.units))
        u[:, 0], u[:, 1] = 0.25, -0.25
        return u

    def _slope_features(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1, 1)
        col = np.ones(self.units)
        col[1] = -1.0
        shifts = np.concatenate(([-1.0, -1.0], self.knots))
        return 2.0 * np.maximum(y * col - shifts, 0.0) * col

    def breakpoints(self) -> np.ndarray:
        # g' is a linear spline, so its extremes sit at the knots or the endpoints
        return np.unique(np.concatenate(([0.0, 1.0], [k for k in self.knots if 0 <= k <= 1])))

    def metric(self, res: int = 257) -> np.ndarray:
        """Gram matrix of values and slopes of the per-axis features (an H^1 inner product)."""
        y = np.linspace(0.0, 1.0, res)
        F, dF = self.features(y), self._slope_features(y)
        return (F.T @ F + dF.T @ dF) / res + 1e-10 * np.eye(self.units)

    def constraints(self):
        """(A_eq, b_eq, C, lo, hi): boundary conditions and exact slope bounds C u in [lo, hi]."""
        A = self.features(np.array([0.0, 1.0]))
        b = np.array([0.0, 1.0])
        C = self._slope_features(self.breakpoints())
        return A, b, C, 1.0 / self.lambda_bound, self.lambda_bound

    def project_weights(self, u, metric: Optional[np.ndarray] = None) -> np.ndarray:
        """Metric projection onto {g(0)=0, g(1)=1, |u| <= 1, 1/Λ <= g' <= Λ} per axis (a small QP)."""
        u = np.array(u, dtype=float).reshape(self.d, self.units)
        M = self.metric() if metric is None else metric
        A, b, C, lo, hi = self.constraints()
        out = np.empty_like(u)
        for axis in range(self.d):
            out[axis] = _qp_project(u[axis], M, A, b, C, lo, hi)
        return out

    def slope_range(self, u, res: Optional[int] = None) -> tuple[float, float]:
        """Exact min and max of g' over [0, 1] across axes."""
        u = np.asarray(u, dtype=float).reshape(self.d, self.units)
        y = self.breakpoints() if res is None else np.linspace(0.0, 1.0, res)
        slopes = self._slope_features(y) @ u.T
        return float(slopes.min()), float(slopes.max())

    def is_regular(self, u, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float).reshape(self.d, self.units)
        lo, hi = self.slope_range(u)
        A = self.features(np.array([0.0, 1.0]))
        ends = A @ u.T
        return (lo >= 1.0 / self.lambda_bound - tol and hi <= self.lambda_bound + tol
                and np.abs(u).max() <= 1.0 and np.allclose(ends, [[0.0], [1.0]], atol=1e-9))

    def project_params(self, vec: np.ndarray) -> np.ndarray:
        """Projection of a full parameter vector used by the optimizer."""
        net = from_params(self.arch, None, np.clip(vec, -1.0, 1.0))
        return self.params(self.project_weights(self.output_weights(net)))

    def params(self, u) -> np.ndarray:
        return param_roundtrip(self.network(u)).values.copy()

    def generator(self, u, inversion: Optional[InversionConfig] = None) -> GeneratorDensity:
        return GeneratorDensity(self.network(u), self.lambda_bound, inversion or InversionConfig())

    def fit(self, target, res: int = 513) -> np.ndarray:
        """Least-squares fit of a 1-D target map on a grid, then projection."""
        y = np.linspace(0.0, 1.0, res)
        F = self.features(y)
        rows = []
        for axis in range(self.d):
            t = np.asarray(target(y), dtype=float).reshape(-1)
            rows.append(np.linalg.lstsq(F, t, rcond=None)[0])
        return self.project_weights(np.stack(rows))

    def random_weights(self, rng: np.random.Generator, scale: float = 0.3, max_tries: int = 200) -> np.ndarray:
        """Random regular member: identity plus a projected perturbation."""
        base = self.identity_weights()
        for _ in range(max_tries):
            pert = rng.uniform(-scale, scale, size=base.shape)
            u = self.project_weights(base + pert)
            if self.is_regular(u):
                return u
            scale *= 0.8
        return base


def _qp_project(x0, M, A, b, C, lo, hi) -> np.ndarray:
    """argmin (x-x0)' M (x-x0) / 2 subject to A x = b, lo <= C x <= hi, |x| <= 1."""
    cons = [
        {"type": "eq", "fun": lambda x: A @ x - b, "jac": lambda x: A},
        {"type": "ineq", "fun": lambda x: C @ x - lo, "jac": lambda x: C},
        {"type": "ineq", "fun": lambda x: hi - C @ x, "jac": lambda x: -C},
    ]
    start = np.clip(x0, -1.0, 1.0)
    if np.allclose(A @ start, b, atol=1e-12) and np.all(C @ start >= lo) and np.all(C @ start <= hi):
        return start if np.array_equal(start, x0) else _solve_qp(x0, M, cons, start)
    return _solve_qp(x0, M, cons, start)


def _solve_qp(x0, M, cons, start) -> np.ndarray:
    res = minimize(
        lambda x: 0.5 * (x - x0) @ M @ (x - x0),
        start,
        jac=lambda x: M @ (x - x0),
        constraints=cons,
        bounds=[(-1.0, 1.0)] * len(x0),
        method="SLSQP",
        options={"maxiter": 200, "ftol": 1e-16},
    )
    return np.clip(res.x, -1.0, 1.0)


def spline_family(n_knots: int = 8, d: int = 1, lambda_bound: float = 2.0) -> SplineGeneratorFamily:
    """Equispaced knots k / n_knots for k = 0..n_knots-1; the knot at 0 carries the curvature near the origin."""
    knots = tuple(float(k) / n_knots for k in range(n_knots))
    return SplineGeneratorFamily(knots, d, lambda_bound)


def audit_regular(g: GeneratorDensity, res: int = 33, tol: float = 1e-9) -> bool:
    """Grid audit of Λ-regularity and of g([0,1]^d) ⊆ [0,1]^d.

    ``tol`` absorbs rounding for members whose slope sits on an active constraint.
    """
    pts = cube_grid(res, g.dim)
    vals = g.net.forward(pts)
    if np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
        return False
    sv = np.linalg.svd(g.net.jacobian(pts), compute_uv=False)
    return bool(sv.min() >= 1.0 / g.lambda_bound - tol and sv.max() <= g.lambda_bound + tol)
