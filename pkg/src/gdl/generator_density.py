"""Push-forward densities of uniform noise through invertible generators.

For a bijection g of [0, 1]^d and Y uniform on the cube, g(Y) has density

    p(x) = |det grad g(g^{-1}(x))|^{-1}.

Any object exposing batched ``forward(y) -> (B, d)`` and ``jacobian(y) -> (B, d, d)``
can serve as the map; ``ReQUNetwork`` does, and ``AnalyticMap`` wraps closed forms.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .requ_net import ReQUNetwork

__all__ = [
    "InversionConfig",
    "InversionError",
    "RegularityError",
    "AnalyticMap",
    "GeneratorDensity",
    "HolderEstimate",
    "as_points",
    "cube_grid",
    "invert",
    "density",
    "density_general",
    "density_bounds",
    "density_lipschitz_constant",
    "holder_diagnostics",
    "h1_distance",
    "dump_density_csv",
]


class InversionError(RuntimeError):
    """Newton (and bisection fallback) failed to reach the tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class RegularityError(RuntimeError):
    """The Jacobian is numerically singular at an iterate."""


@dataclass(frozen=True)
class InversionConfig:
    tolerance: float = 1e-10
    max_iterations: int = 100
    damping: float = 1.0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


class AnalyticMap:
    """A closed-form map R^d -> R^d with a known Jacobian, batched like a network."""

    def __init__(self, f: Callable, jac: Callable, dim: int = 1, name: str = "analytic"):
        self._f = f
        self._jac = jac
        self.dim = dim
        self.name = name

    @property
    def input_dim(self) -> int:
        return self.dim

    def forward(self, y):
        y = np.asarray(y, dtype=float)
        return np.asarray(self._f(y), dtype=float).reshape(y.shape)

    def jacobian(self, y):
        y = np.asarray(y, dtype=float)
        return np.asarray(self._jac(y), dtype=float).reshape(y.shape[0], self.dim, self.dim)

    @classmethod
    def linear(cls, A) -> "AnalyticMap":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        d = A.shape[0]
        return cls(lambda y: y @ A.T, lambda y: np.broadcast_to(A, (y.shape[0], d, d)), d, "linear")

    @classmethod
    def identity(cls, d: int = 1) -> "AnalyticMap":
        return cls.linear(np.eye(d))

    @classmethod
    def sine_1d(cls, amplitude: float = 0.05) -> "AnalyticMap":
        """g(y) = y - a sin(2 pi y), the default ground truth of the rate experiment."""
        two_pi = 2.0 * math.pi
        return cls(
            lambda y: y - amplitude * np.sin(two_pi * y),
            lambda y: (1.0 - amplitude * two_pi * np.cos(two_pi * y)).reshape(-1, 1, 1),
            1,
            f"sine({amplitude})",
        )


def _map_dim(net) -> int:
    if isinstance(net, ReQUNetwork):
        return net.arch.input_dim
    return int(net.input_dim)


@dataclass(frozen=True)
class GeneratorDensity:
    net: object
    lambda_bound: float = 2.0
    inversion: InversionConfig = field(default_factory=InversionConfig)

    def __post_init__(self):
        if isinstance(self.net, ReQUNetwork) and self.net.arch.input_dim != self.net.arch.output_dim:
            raise ValueError("generator must map R^d to R^d")
        if not self.lambda_bound > 1:
            raise ValueError("lambda_bound must exceed 1")

    @property
    def dim(self) -> int:
        return _map_dim(self.net)

    def forward(self, y):
        return self.net.forward(as_points(y, self.dim)[0])

    def jacobian(self, y):
        return self.net.jacobian(as_points(y, self.dim)[0])

    def __call__(self, x):
        return density(self, x)


def as_points(x, d: int) -> tuple[np.ndarray, bool]:
    """Coerce to a ``(B, d)`` batch; flag whether the input was a single point.

    For d = 1 a flat array of length B is read as B scalar points.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1), True
    if x.ndim == 1:
        if x.shape[0] == d:
            return x.reshape(1, d), True
        if d == 1:
            return x.reshape(-1, 1), False
    if x.ndim == 2 and x.shape[1] == d:
        return x, False
    raise ValueError(f"points of shape {x.shape} do not live in dimension {d}")


def cube_grid(res: int, d: int) -> np.ndarray:
    """Tensor grid with ``res`` equispaced points per axis, endpoints included."""
    axis = np.linspace(0.0, 1.0, res)
    return np.array(list(itertools.product(axis, repeat=d))) if d > 1 else axis.reshape(-1, 1)


def _det(J: np.ndarray) -> np.ndarray:
    if J.shape[-1] == 1:
        return J[:, 0, 0]
    return np.linalg.det(J)


def _bisect_1d(g: GeneratorDensity, targets: np.ndarray, steps: int = 40) -> np.ndarray:
    ends = g.net.forward(np.array([[0.0], [1.0]]))[:, 0]
    increasing = ends[1] >= ends[0]
    lo = np.zeros_like(targets)
    hi = np.ones_like(targets)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        val = g.net.forward(mid.reshape(-1, 1))[:, 0]
        below = (val < targets) if increasing else (val > targets)
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def invert(g: GeneratorDensity, x) -> np.ndarray:
    """Solve g(y) = x by damped Newton started at y = x, iterates clipped to the cube."""
    xb, single = as_points(x, g.dim)
    cfg = g.inversion
    y = np.clip(xb.copy(), 0.0, 1.0)
    active = np.ones(len(y), dtype=bool)
    for _ in range(cfg.max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        r = g.net.forward(y[idx]) - xb[idx]
        done = np.max(np.abs(r), axis=1) <= cfg.tolerance
        active[idx[done]] = False
        idx, r = idx[~done], r[~done]
        if idx.size == 0:
            break
        J = g.net.jacobian(y[idx])
        dets = _det(J)
        if np.any(np.abs(dets) < 1e-12):
            bad = idx[np.abs(dets) < 1e-12][0]
            raise RegularityError(f"singular Jacobian at y={y[bad]} (|det| < 1e-12)")
        step = np.linalg.solve(J, r[:, :, None])[:, :, 0]
        y[idx] = np.clip(y[idx] - cfg.damping * step, 0.0, 1.0)
    if active.any():
        idx = np.flatnonzero(active)
        r = np.max(np.abs(g.net.forward(y[idx]) - xb[idx]), axis=1)
        still = r > cfg.tolerance
        idx = idx[still]
        if idx.size and g.dim == 1:
            y[idx, 0] = _bisect_1d(g, xb[idx, 0])
        if idx.size:
            res = np.max(np.abs(g.net.forward(y[idx]) - xb[idx]), axis=1)
            if np.any(res > cfg.tolerance):
                worst = float(res.max())
                raise InversionError(f"inversion did not converge (residual {worst:.3e})", worst)
    return y[0] if single else y


def density(g: GeneratorDensity, x) -> np.ndarray:
    """Push-forward density of the uniform law, returned per point."""
    xb, single = as_points(x, g.dim)
    y = invert(g, xb)
    p = 1.0 / np.abs(_det(g.net.jacobian(y)))
    return p[0] if single else p


def density_general(g: GeneratorDensity, latent: Callable, x) -> np.ndarray:
    """Push-forward of a latent density ``latent((B, d)) -> (B,)`` through g."""
    xb, single = as_points(x, g.dim)
    y = invert(g, xb)
    p = np.asarray(latent(y), dtype=float).reshape(-1) / np.abs(_det(g.net.jacobian(y)))
    return p[0] if single else p


def density_bounds(lam: float, d: int) -> tuple[float, float]:
    if not lam > 1:
        raise ValueError("Lambda must exceed 1")
    return float(lam) ** (-d), float(lam) ** d


def density_lipschitz_constant(d: int, lam: float, h_g: float) -> float:
    """L_2 = d^{2+d/2} Lambda^{3d} (1 + H_G Lambda sqrt(d))."""
    return d ** (2 + d / 2) * lam ** (3 * d) * (1 + h_g * lam * math.sqrt(d))


@dataclass(frozen=True)
class HolderEstimate:
    """Grid maxima; each entry is a lower bound on the corresponding true norm."""

    order: float
    c_s_norm: float
    holder_quotient: float
    grid_resolution: int
    c0_norm: float
    c1_norm: float
    sigma_min: float
    sigma_max: float
    maps_into_cube: bool

    @property
    def holder_norm(self) -> float:
        return max(self.c_s_norm, self.holder_quotient)

    def lambda_regular(self, lam: float) -> bool:
        return self.maps_into_cube and self.sigma_min >= 1.0 / lam and self.sigma_max <= lam


def _pairwise_quotient(pts: np.ndarray, vals: np.ndarray, chunk: int = 512) -> float:
    # max over grid pairs of ||f(x)-f(y)||_inf / min(1, ||x-y||)
    best = 0.0
    for start in range(0, len(pts), chunk):
        p = pts[start : start + chunk]
        v = vals[start : start + chunk]
        dist = np.sqrt(((p[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        diff = np.abs(v[:, None, :] - vals[None, :, :]).max(-1)
        mask = dist > 0
        if mask.any():
            best = max(best, float((diff[mask] / np.minimum(1.0, dist[mask])).max()))
    return best


def holder_diagnostics(g: GeneratorDensity, order: float = 2, grid_res: int = 65) -> HolderEstimate:
    """Grid estimates of the C^s norm, the top-order Hölder quotient, and the singular values of grad g.

    order 1: s = 0, the quotient is taken over g itself.
    order 2: s = 1, the quotient is taken over the Jacobian entries.
    """
    if grid_res < 2:
        raise ValueError("grid resolution must be at least 2")
    if order not in (1, 2):
        raise ValueError("only orders 1 and 2 are supported")
    pts = cube_grid(grid_res, g.dim)
    vals = g.net.forward(pts)
    J = g.net.jacobian(pts)
    c0 = float(np.abs(vals).max())
    c1 = max(c0, float(np.abs(J).max()))
    sv = np.linalg.svd(J, compute_uv=False)
    if order == 1:
        c_s, quotient = c0, _pairwise_quotient(pts, vals)
    else:
        c_s, quotient = c1, _pairwise_quotient(pts, J.reshape(len(pts), -1))
    inside = bool(np.all(vals >= -1e-12) and np.all(vals <= 1 + 1e-12))
    return HolderEstimate(float(order), c_s, quotient, grid_res, c0, c1, float(sv.min()), float(sv.max()), inside)


def h1_distance(g1, g2, grid_res: int = 65) -> float:
    """Grid estimate of ||g1 - g2||_{H^1}: max of the sup distance and the sup Jacobian distance."""
    d = _map_dim(g1.net if isinstance(g1, GeneratorDensity) else g1)
    pts = cube_grid(grid_res, d)
    f1 = g1.net if isinstance(g1, GeneratorDensity) else g1
    f2 = g2.net if isinstance(g2, GeneratorDensity) else g2
    sup = np.abs(f1.forward(pts) - f2.forward(pts)).max()
    jac = np.abs(f1.jacobian(pts) - f2.jacobian(pts)).max()
    return float(max(sup, jac))


def dump_density_csv(g: GeneratorDensity, path, grid_res: int = 129) -> Path:
    pts = cube_grid(grid_res, g.dim)
    p = density(g, pts)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{i + 1}" for i in range(g.dim)] + ["p"])
        for row, val in zip(pts, p):
            writer.writerow([repr(float(c)) for c in row] + [repr(float(val))])
    return path
