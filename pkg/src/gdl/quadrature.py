"""Quadrature rules for Lebesgue measure on [0, 1]^d."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["QuadratureScheme", "gauss_legendre", "midpoint", "monte_carlo", "default_scheme"]


@dataclass(frozen=True)
class QuadratureScheme:
    kind: str
    nodes: np.ndarray
    weights: np.ndarray
    scheme_id: str

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if nodes.ndim == 1:
            nodes = nodes.reshape(-1, 1)
        if nodes.shape[0] != weights.size:
            raise ValueError("nodes and weights disagree in count")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        if np.any(nodes < 0) or np.any(nodes > 1):
            raise ValueError("nodes must lie in the unit cube")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def node_count(self) -> int:
        return self.weights.size

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float).reshape(-1)))


def _tensor(axis_nodes: np.ndarray, axis_weights: np.ndarray, d: int):
    if d == 1:
        return axis_nodes.reshape(-1, 1), axis_weights
    nodes = np.array(list(itertools.product(axis_nodes, repeat=d)))
    weights = np.prod(np.array(list(itertools.product(axis_weights, repeat=d))), axis=1)
    return nodes, weights / weights.sum()


def gauss_legendre(n: int, d: int = 1, intervals: int = 1) -> QuadratureScheme:
    """Tensor Gauss-Legendre rule, optionally composite over ``intervals`` equal panels per axis."""
    t, w = np.polynomial.legendre.leggauss(n)
    edges = np.linspace(0.0, 1.0, intervals + 1)
    x = np.concatenate([a + (b - a) * (t + 1) / 2 for a, b in zip(edges[:-1], edges[1:])])
    wx = np.concatenate([(b - a) * w / 2 for a, b in zip(edges[:-1], edges[1:])])
    wx = wx / wx.sum()
    nodes, weights = _tensor(x, wx, d)
    return QuadratureScheme("gauss-legendre", nodes, weights, f"gl{n}x{intervals}^{d}")


def midpoint(n: int, d: int = 1) -> QuadratureScheme:
    x = (np.arange(n) + 0.5) / n
    nodes, weights = _tensor(x, np.full(n, 1.0 / n), d)
    return QuadratureScheme("midpoint", nodes, weights, f"mid{n}^{d}")


def monte_carlo(n: int, d: int, seed: int = 0) -> QuadratureScheme:
    rng = np.random.default_rng(seed)
    return QuadratureScheme("monte-carlo", rng.random((n, d)), np.full(n, 1.0 / n), f"mc{n}^{d}s{seed}")


def default_scheme(d: int, seed: Optional[int] = 0) -> QuadratureScheme:
    """128 Gauss-Legendre nodes in d=1, 64 per axis in d=2, Monte Carlo with 2e5 nodes beyond."""
    if d == 1:
        return gauss_legendre(128, 1)
    if d == 2:
        return gauss_legendre(64, 2)
    return monte_carlo(200_000, d, seed or 0)
