"""KL, Jensen-Shannon and symmetric chi-square functionals by quadrature.

Densities are callables mapping a ``(B, d)`` array of points to ``(B,)`` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .quadrature import QuadratureScheme, default_scheme

__all__ = [
    "DivergenceEstimate",
    "SandwichReport",
    "kl",
    "js",
    "chi_sym",
    "sandwich_check",
    "js_sqrt_metric_check",
    "evaluate",
    "kl_values",
    "js_values",
    "chi_sym_values",
]

ZERO = 1e-300
LOG2 = math.log(2.0)


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    scheme_id: str
    node_count: int

    def __float__(self) -> float:
        return self.value


def evaluate(p: Callable, quad: QuadratureScheme) -> np.ndarray:
    vals = np.asarray(p(quad.nodes), dtype=float).reshape(-1)
    if vals.size != quad.node_count:
        raise ValueError("density returned the wrong number of values")
    return vals


def kl_values(w, pv, qv) -> float:
    pos = pv > ZERO
    if np.any(pos & (qv <= 0)):
        return math.inf
    return float(np.dot(w[pos], pv[pos] * np.log(pv[pos] / qv[pos])))


def js_values(w, pv, qv) -> float:
    m = 0.5 * (pv + qv)
    return 0.5 * kl_values(w, pv, m) + 0.5 * kl_values(w, qv, m)


def chi_sym_values(w, pv, qv) -> float:
    s = pv + qv
    pos = s > 0
    return float(np.dot(w[pos], (pv[pos] - qv[pos]) ** 2 / s[pos]))


def _quad(quad: Optional[QuadratureScheme], d: int = 1) -> QuadratureScheme:
    return quad if quad is not None else default_scheme(d)


def kl(p: Callable, q: Callable, quad: Optional[QuadratureScheme] = None) -> DivergenceEstimate:
    """KL(p, q); a node with p > 0 and q = 0 makes the value +inf."""
    quad = _quad(quad)
    return DivergenceEstimate(kl_values(quad.weights, evaluate(p, quad), evaluate(q, quad)), quad.scheme_id, quad.node_count)


def js(p: Callable, q: Callable, quad: Optional[QuadratureScheme] = None) -> DivergenceEstimate:
    quad = _quad(quad)
    pv, qv = evaluate(p, quad), evaluate(q, quad)
    # symmetrize the floating-point evaluation order so js(p,q) == js(q,p) exactly
    value = 0.5 * (js_values(quad.weights, pv, qv) + js_values(quad.weights, qv, pv))
    return DivergenceEstimate(value, quad.scheme_id, quad.node_count)


def chi_sym(p: Callable, q: Callable, quad: Optional[QuadratureScheme] = None) -> DivergenceEstimate:
    quad = _quad(quad)
    return DivergenceEstimate(chi_sym_values(quad.weights, evaluate(p, quad), evaluate(q, quad)), quad.scheme_id, quad.node_count)


@dataclass(frozen=True)
class SandwichReport:
    lhs: float
    js: float
    rhs: float
    slack: float
    passed: bool

    @property
    def pass_(self) -> bool:
        return self.passed


def sandwich_check(p: Callable, q: Callable, quad: Optional[QuadratureScheme] = None) -> SandwichReport:
    """Check chi/4 <= JS <= (log 2 / 2) chi with slack 1e-8 + 1e-3 chi."""
    quad = _quad(quad)
    pv, qv = evaluate(p, quad), evaluate(q, quad)
    chi = chi_sym_values(quad.weights, pv, qv)
    j = 0.5 * (js_values(quad.weights, pv, qv) + js_values(quad.weights, qv, pv))
    tau = 1e-8 + 1e-3 * chi
    lhs, rhs = 0.25 * chi, 0.5 * LOG2 * chi
    return SandwichReport(lhs, j, rhs, tau, bool(lhs - tau <= j <= rhs + tau))


def js_sqrt_metric_check(p: Callable, q: Callable, r: Callable, quad: Optional[QuadratureScheme] = None) -> bool:
    """Triangle inequality for sqrt(JS) with additive slack 1e-8."""
    quad = _quad(quad)
    pv, qv, rv = (evaluate(f, quad) for f in (p, q, r))
    w = quad.weights

    def dist(a, b):
        return math.sqrt(max(0.5 * (js_values(w, a, b) + js_values(w, b, a)), 0.0))

    return dist(pv, rv) <= dist(pv, qv) + dist(qv, rv) + 1e-8
