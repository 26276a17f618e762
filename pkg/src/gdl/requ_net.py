"""Feed-forward ReQU networks with entries bounded in [-1, 1].

A network of depth N+1 with architecture ``A = (p_0, ..., p_{N+1})`` computes

    f(x) = W_N o s_{v_N} o W_{N-1} o ... o W_1 o s_{v_1} o W_0 x,

where ``s_v(z) = sigma(z - v)`` componentwise and ``sigma(t) = max(t, 0)**2``.
The output layer is linear and carries no shift.

Parameter vectors enumerate entries layer by layer: ``W_0`` (row-major),
``v_1``, ``W_1``, ``v_2``, ..., ``W_{N-1}``, ``v_N``, ``W_N``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "Architecture",
    "ReQUNetwork",
    "ParamVector",
    "ShapeError",
    "ParameterRangeError",
    "requ",
    "requ_prime",
    "forward",
    "jacobian",
    "partial_forward",
    "perturbation_bounds",
    "PerturbationBounds",
    "hidden_bounds",
    "param_roundtrip",
    "from_params",
    "grad_params",
    "vjp",
    "sparsity_projection",
    "random_network",
    "save_network",
    "load_network",
]


class ShapeError(ValueError):
    """Input or parameter shapes do not match the architecture."""


class ParameterRangeError(ValueError):
    """A weight or shift lies outside [-1, 1] or the sparsity budget is exceeded."""


def requ(t):
    return np.square(np.maximum(t, 0.0))


def requ_prime(t):
    # sigma'(0) = 0, consistent with the kink of (t v 0)^2
    return 2.0 * np.maximum(t, 0.0)


@dataclass(frozen=True)
class Architecture:
    depth_hidden: int
    widths: tuple

    def __post_init__(self):
        widths = tuple(int(p) for p in self.widths)
        object.__setattr__(self, "widths", widths)
        if self.depth_hidden < 0:
            raise ValueError("depth_hidden must be >= 0")
        if len(widths) != self.depth_hidden + 2:
            raise ValueError(
                f"architecture with N={self.depth_hidden} needs {self.depth_hidden + 2} widths, got {len(widths)}"
            )
        if any(p < 1 for p in widths):
            raise ValueError("all widths must be positive")

    @classmethod
    def from_widths(cls, widths: Sequence[int]) -> "Architecture":
        return cls(len(widths) - 2, tuple(widths))

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        p = self.widths
        n = sum(p[i + 1] * p[i] for i in range(self.depth_hidden + 1))
        return n + sum(p[1 : self.depth_hidden + 1])


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def length(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _check_range(name: str, arr: np.ndarray) -> None:
    if arr.size and (not np.all(np.isfinite(arr)) or np.max(np.abs(arr)) > 1.0):
        raise ParameterRangeError(f"{name} has entries outside [-1, 1] (max |.| = {np.max(np.abs(arr)):.6g})")


@dataclass(frozen=True)
class ReQUNetwork:
    """A member of NN(N, A) or, with ``sparsity_budget`` set, of NN(N, A, s)."""

    arch: Architecture
    weights: tuple
    shifts: tuple
    sparsity_budget: Optional[int] = None
    _frozen: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        arch = self.arch
        N, p = arch.depth_hidden, arch.widths
        weights = tuple(np.array(W, dtype=float).reshape(p[i + 1], p[i]) if np.size(W) == p[i + 1] * p[i]
                        else _bad_shape(f"W_{i}", (p[i + 1], p[i]), np.shape(W))
                        for i, W in enumerate(self.weights))
        if len(weights) != N + 1:
            raise ShapeError(f"expected {N + 1} weight matrices, got {len(weights)}")
        shifts = tuple(np.array(v, dtype=float).reshape(p[i + 1]) if np.size(v) == p[i + 1]
                       else _bad_shape(f"v_{i + 1}", (p[i + 1],), np.shape(v))
                       for i, v in enumerate(self.shifts))
        if len(shifts) != N:
            raise ShapeError(f"expected {N} shift vectors, got {len(shifts)}")
        for i, W in enumerate(weights):
            _check_range(f"W_{i}", W)
            W.setflags(write=False)
        for i, v in enumerate(shifts):
            _check_range(f"v_{i + 1}", v)
            v.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "shifts", shifts)
        if self.sparsity_budget is not None and self.nonzero_count() > self.sparsity_budget:
            raise ParameterRangeError(
                f"{self.nonzero_count()} nonzero parameters exceed the sparsity budget {self.sparsity_budget}"
            )

    @property
    def depth_hidden(self) -> int:
        return self.arch.depth_hidden

    def nonzero_count(self) -> int:
        return int(sum(np.count_nonzero(W) for W in self.weights) + sum(np.count_nonzero(v) for v in self.shifts))

    def forward(self, x):
        return forward(self, x)

    def jacobian(self, x):
        return jacobian(self, x)

    def __call__(self, x):
        return forward(self, x)

    def params(self) -> ParamVector:
        return param_roundtrip(self)


def _bad_shape(name, expected, got):
    raise ShapeError(f"{name} must have shape {expected}, got {got}")


def _as_batch(net: ReQUNetwork, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    p0 = net.arch.input_dim
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim == 1:
        if x.shape[0] != p0:
            raise ShapeError(f"input has length {x.shape[0]}, network expects {p0}")
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == p0:
        return x, False
    raise ShapeError(f"input of shape {x.shape} incompatible with input width {p0}")


def _layers(net: ReQUNetwork, xb: np.ndarray):
    """Forward pass keeping pre-activations ``z_k - v_k`` for k = 1..N."""
    pre = []
    a = xb
    for k in range(net.depth_hidden):
        u = a @ net.weights[k].T - net.shifts[k]
        pre.append(u)
        a = requ(u)
    return pre, a @ net.weights[-1].T


def forward(net: ReQUNetwork, x) -> np.ndarray:
    """Evaluate the network at one point (shape ``(p_0,)``) or a batch (``(B, p_0)``)."""
    xb, single = _as_batch(net, x)
    _, out = _layers(net, xb)
    return out[0] if single else out


def jacobian(net: ReQUNetwork, x) -> np.ndarray:
    """Jacobian ``p_{N+1} x p_0`` at x, or a stack ``(B, p_{N+1}, p_0)`` for a batch."""
    xb, single = _as_batch(net, x)
    pre, _ = _layers(net, xb)
    J = np.broadcast_to(net.weights[0], (xb.shape[0],) + net.weights[0].shape).copy()
    for k in range(net.depth_hidden):
        J = requ_prime(pre[k])[:, :, None] * J
        J = np.einsum("ij,bjk->bik", net.weights[k + 1], J)
    return J[0] if single else J


def partial_forward(net: ReQUNetwork, kind: str, j: int, k: int, x) -> np.ndarray:
    """Partial compositions of the network.

    ``kind="B"``: B_{j,k}(x) = s_{v_j} o W_{j-1} o ... o s_{v_k} o W_{k-1} x, for
    1 <= k <= j <= N, with B_{k-1,k}(x) = x (in particular B_{0,1} = x).

    ``kind="A"``: A_{j,k}(x) = W_j o s_{v_j} o ... o W_k o s_{v_k} o W_{k-1} x, for
    1 <= k <= j + 1 <= N + 1, with the convention A_{N,N+2}(x) = x.
    """
    N = net.depth_hidden
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    xb = np.atleast_2d(x)
    if kind == "B":
        if not (1 <= k <= j + 1 and j <= N and k >= 1) or j < 0:
            raise IndexError(f"B_{{{j},{k}}} is undefined for N={N}")
        if xb.shape[1] != net.arch.widths[k - 1]:
            raise ShapeError(f"B_{{{j},{k}}} expects inputs of width {net.arch.widths[k - 1]}")
        a = xb
        for layer in range(k, j + 1):
            a = requ(a @ net.weights[layer - 1].T - net.shifts[layer - 1])
        return a[0] if single else a
    if kind == "A":
        if j == N and k == N + 2:
            return xb[0] if single else xb
        if not (1 <= k <= j + 1 and j <= N):
            raise IndexError(f"A_{{{j},{k}}} is undefined for N={N}")
        if xb.shape[1] != net.arch.widths[k - 1]:
            raise ShapeError(f"A_{{{j},{k}}} expects inputs of width {net.arch.widths[k - 1]}")
        a = xb @ net.weights[k - 1].T
        for layer in range(k, j + 1):
            a = requ(a - net.shifts[layer - 1]) @ net.weights[layer].T
        return a[0] if single else a
    raise ValueError(f"kind must be 'A' or 'B', got {kind!r}")


@dataclass(frozen=True)
class PerturbationBounds:
    """Coefficients multiplying the parameter distance in the sup and Jacobian bounds.

    Iterates as the pair ``(sup_coeff, jac_coeff)``; the natural logs are kept
    because the linear values overflow for modest depths.
    """

    sup_coeff: float
    jac_coeff: float
    log_sup_coeff: float
    log_jac_coeff: float

    def __iter__(self) -> Iterator[float]:
        yield self.sup_coeff
        yield self.jac_coeff


def _exp_saturating(log_value: float, what: str, exact=None) -> float:
    """Linear value of a log-space coefficient; ``exact`` computes it directly when it fits."""
    if log_value == -math.inf:
        return 0.0
    if log_value > 709.0:
        warnings.warn(f"{what} overflows float64 (log = {log_value:.4g}); saturating to +inf", RuntimeWarning)
        return math.inf
    return float(exact()) if exact is not None else math.exp(log_value)


def perturbation_bounds(arch: Architecture) -> PerturbationBounds:
    """Sup-norm and Jacobian perturbation coefficients on [0, 1]^{p_0}.

    sup: (N+1) 2^N prod_{l=0}^{N} (p_l+1)^{2^N}
    jac: N (N+1) 2^{N+1} prod_{l=0}^{N} (p_l+1)^{2^{N+1}+1}
    """
    N = arch.depth_hidden
    log_prod = sum(math.log(p + 1) for p in arch.widths[: N + 1])
    log_sup = math.log(N + 1) + N * math.log(2) + (2 ** N) * log_prod
    if N == 0:
        log_jac = -math.inf
    else:
        log_jac = math.log(N) + math.log(N + 1) + (N + 1) * math.log(2) + (2 ** (N + 1) + 1) * log_prod
    p = arch.widths[: N + 1]
    # integer arithmetic keeps representable values exact
    exact_sup = lambda: (N + 1) * 2 ** N * math.prod((q + 1) ** (2 ** N) for q in p)
    exact_jac = lambda: N * (N + 1) * 2 ** (N + 1) * math.prod((q + 1) ** (2 ** (N + 1) + 1) for q in p)
    return PerturbationBounds(
        _exp_saturating(log_sup, "sup perturbation coefficient", exact_sup),
        _exp_saturating(log_jac, "Jacobian perturbation coefficient", exact_jac),
        log_sup,
        log_jac,
    )


def hidden_bounds(arch: Architecture, k: int, i: int, K: float, kind: str = "sup") -> float:
    """Bounds on partial compositions for inputs with ``||x||_inf <= K``.

    ``kind="sup"`` bounds ``||B_{k,i}(x)||_inf`` for 1 <= i <= k <= N:
        prod_{l=1}^{k-i+1} (p_{k-l}+1)^{2^l} * (K v 1)^{2^{k-i+1}}.
    ``kind="lip"`` reads (k, i) as the indices (j, k) of A_{j,k} and returns its
    Lipschitz constant in the sup norm:
        2^{j-k+1} prod_{l=0}^{j-k+1} (p_{j-l}+1)^{2^l} * (K v 1)^{2^{j-k+1}}.
    """
    p = arch.widths
    N = arch.depth_hidden
    Kc = max(float(K), 1.0)
    if kind == "sup":
        if not (1 <= i <= k <= N):
            raise IndexError(f"need 1 <= i <= k <= N, got k={k}, i={i}, N={N}")
        m = k - i + 1
        log_b = sum((2 ** l) * math.log(p[k - l] + 1) for l in range(1, m + 1)) + (2 ** m) * math.log(Kc)
        exact = lambda: math.prod((p[k - l] + 1) ** (2 ** l) for l in range(1, m + 1)) * Kc ** (2 ** m)
        return _exp_saturating(log_b, "hidden-layer sup bound", exact)
    if kind == "lip":
        j, kk = k, i
        if not (1 <= kk <= j + 1 and j <= N):
            raise IndexError(f"A_{{{j},{kk}}} is undefined for N={N}")
        m = j - kk + 1
        log_b = (m * math.log(2) + sum((2 ** l) * math.log(p[j - l] + 1) for l in range(0, m + 1))
                 + (2 ** m) * math.log(Kc))
        exact = lambda: 2 ** m * math.prod((p[j - l] + 1) ** (2 ** l) for l in range(0, m + 1)) * Kc ** (2 ** m)
        return _exp_saturating(log_b, "partial-composition Lipschitz bound", exact)
    raise ValueError(f"kind must be 'sup' or 'lip', got {kind!r}")


def param_roundtrip(net: ReQUNetwork) -> ParamVector:
    """Flatten the network parameters in the documented order."""
    parts = []
    N = net.depth_hidden
    for layer in range(N + 1):
        parts.append(net.weights[layer].reshape(-1))
        if layer < N:
            parts.append(net.shifts[layer])
    if not parts:
        return ParamVector(np.zeros(0))
    return ParamVector(np.concatenate(parts))


def _split(arch: Architecture, vec: np.ndarray):
    p, N = arch.widths, arch.depth_hidden
    weights, shifts = [], []
    pos = 0
    for layer in range(N + 1):
        size = p[layer + 1] * p[layer]
        weights.append(vec[pos : pos + size].reshape(p[layer + 1], p[layer]))
        pos += size
        if layer < N:
            shifts.append(vec[pos : pos + p[layer + 1]])
            pos += p[layer + 1]
    return weights, shifts


def from_params(arch: Architecture, sparsity_budget: Optional[int], vec) -> ReQUNetwork:
    """Rebuild a network from a flat parameter vector; out-of-range entries are rejected."""
    values = np.asarray(vec.values if isinstance(vec, ParamVector) else vec, dtype=float).reshape(-1)
    if values.size != arch.n_params:
        raise ShapeError(f"parameter vector has length {values.size}, architecture needs {arch.n_params}")
    weights, shifts = _split(arch, values)
    return ReQUNetwork(arch, tuple(weights), tuple(shifts), sparsity_budget)


def vjp(net: ReQUNetwork, x, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode pass for ``sum_b upstream_b . f(x_b)``.

    Returns the gradient with respect to the flat parameter vector and the
    gradient with respect to the inputs (same shape as ``x``).
    """
    xb, single = _as_batch(net, x)
    up = np.asarray(upstream, dtype=float)
    if single:
        up = up.reshape(1, -1)
    if up.shape != (xb.shape[0], net.arch.output_dim):
        raise ShapeError(f"upstream has shape {up.shape}, expected {(xb.shape[0], net.arch.output_dim)}")
    N = net.depth_hidden
    pre, _ = _layers(net, xb)
    acts = [xb] + [requ(u) for u in pre]
    grad_W = [None] * (N + 1)
    grad_v = [None] * N
    delta = up
    for layer in range(N, -1, -1):
        grad_W[layer] = delta.T @ acts[layer]
        delta = delta @ net.weights[layer]
        if layer > 0:
            delta = delta * requ_prime(pre[layer - 1])
            grad_v[layer - 1] = -delta.sum(axis=0)
    parts = []
    for layer in range(N + 1):
        parts.append(grad_W[layer].reshape(-1))
        if layer < N:
            parts.append(grad_v[layer])
    gx = delta[0] if single else delta
    return np.concatenate(parts), gx


def grad_params(net: ReQUNetwork, x, upstream) -> ParamVector:
    """Gradient of ``upstream . forward(net, x)`` with respect to the parameters.

    Unlike a ``ParamVector`` of a network, the entries are not restricted to [-1, 1].
    """
    g, _ = vjp(net, x, upstream)
    return ParamVector(g)


def sparsity_projection(vec, budget: Optional[int]) -> np.ndarray:
    """Hard-threshold to the ``budget`` largest magnitudes and clip to [-1, 1]."""
    v = np.clip(np.asarray(vec, dtype=float).reshape(-1), -1.0, 1.0)
    if budget is None or np.count_nonzero(v) <= budget:
        return v
    order = np.argsort(-np.abs(v), kind="stable")
    out = np.zeros_like(v)
    keep = order[: max(int(budget), 0)]
    out[keep] = v[keep]
    return out


def random_network(arch: Architecture, rng: np.random.Generator, scale: float = 1.0,
                   sparsity_budget: Optional[int] = None) -> ReQUNetwork:
    vec = rng.uniform(-scale, scale, size=arch.n_params)
    if sparsity_budget is not None:
        vec = sparsity_projection(vec, sparsity_budget)
    return from_params(arch, sparsity_budget, vec)


def network_to_dict(net: ReQUNetwork) -> dict:
    return {
        "arch": {"depth_hidden": net.depth_hidden, "widths": list(net.arch.widths)},
        "weights": [W.tolist() for W in net.weights],
        "shifts": [v.tolist() for v in net.shifts],
        "sparsity": net.sparsity_budget,
    }


def network_from_dict(record: dict) -> ReQUNetwork:
    arch = Architecture(record["arch"]["depth_hidden"], tuple(record["arch"]["widths"]))
    return ReQUNetwork(arch, tuple(np.array(W, dtype=float) for W in record["weights"]),
                       tuple(np.array(v, dtype=float) for v in record["shifts"]), record.get("sparsity"))


def save_network(net: ReQUNetwork, path) -> None:
    # json writes shortest round-trip reprs, so decoding is bit-exact
    Path(path).write_text(json.dumps(network_to_dict(net)))


def load_network(path) -> ReQUNetwork:
    return network_from_dict(json.loads(Path(path).read_text()))
