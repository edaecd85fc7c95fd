"""Orthonormal Legendre bases and Gauss-Legendre rules on intervals.

The basis functions are ``psi_k = sqrt(2k+1) P_k(t)`` with ``t`` the affine
image of ``x`` in ``[-1, 1]``.  They are orthonormal with respect to the
uniform probability measure on ``[a, b]``, so the Frobenius norm of a
coefficient tensor equals the L2 norm of the function it represents.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import DomainError

# slack for affine round-off at the interval ends
_EDGE_SLACK = 1e-12


def check_in_box(x, domain) -> None:
    """Raise DomainError if any point of ``x`` (..., d) lies outside the (d, 2) box."""
    if domain is None:
        return
    box = np.asarray(domain, dtype=float)
    x = np.asarray(x, dtype=float)
    slack = _EDGE_SLACK * (box[:, 1] - box[:, 0])
    bad = (x < box[:, 0] - slack) | (x > box[:, 1] + slack) | ~np.isfinite(x)
    if np.any(bad):
        raise DomainError("point outside the surrogate domain", point=np.atleast_2d(x)[np.any(np.atleast_2d(bad), axis=-1)])


@dataclass(frozen=True)
class BasisSpec:
    degree_count: int
    domain: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if int(self.degree_count) < 1:
            raise ValueError("degree_count must be >= 1")
        a, b = self.domain
        if not a < b:
            raise ValueError(f"empty interval {self.domain}")
        object.__setattr__(self, "degree_count", int(self.degree_count))
        object.__setattr__(self, "domain", (float(a), float(b)))

    @property
    def scale(self) -> float:
        """d t / d x for the map onto [-1, 1]."""
        a, b = self.domain
        return 2.0 / (b - a)

    def to_reference(self, x):
        a, b = self.domain
        x = np.asarray(x, dtype=float)
        slack = _EDGE_SLACK * (b - a)
        bad = (x < a - slack) | (x > b + slack) | ~np.isfinite(x)
        if np.any(bad):
            raise DomainError(f"point outside basis domain [{a}, {b}]", point=x[bad] if x.ndim else x)
        t = (2.0 * x - (a + b)) / (b - a)
        return np.clip(t, -1.0, 1.0)

    def __call__(self, x):
        return eval_basis_vector(self, x)

    def deriv(self, x):
        return eval_basis_derivative(self, x)

    def to_dict(self) -> dict:
        return {"degree_count": self.degree_count, "domain": list(self.domain)}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(int(d["degree_count"]), tuple(d["domain"]))


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def _legendre_table(t, n):
    """P_0..P_{n-1} and their t-derivatives, stacked on a trailing axis."""
    p = np.empty(t.shape + (n,))
    dp = np.empty(t.shape + (n,))
    p[..., 0] = 1.0
    dp[..., 0] = 0.0
    if n > 1:
        p[..., 1] = t
        dp[..., 1] = 1.0
    for k in range(1, n - 1):
        p[..., k + 1] = ((2 * k + 1) * t * p[..., k] - k * p[..., k - 1]) / (k + 1)
        dp[..., k + 1] = dp[..., k - 1] + (2 * k + 1) * p[..., k]
    return p, dp


def _norms(n):
    return np.sqrt(2.0 * np.arange(n) + 1.0)


def eval_basis_vector(spec: BasisSpec, x):
    """Values ``[psi_0(x), ..., psi_{n-1}(x)]``; vectorized over ``x``."""
    t = spec.to_reference(x)
    p, _ = _legendre_table(t, spec.degree_count)
    return p * _norms(spec.degree_count)


def eval_basis_derivative(spec: BasisSpec, x):
    """x-derivatives of the basis, including the domain-map chain factor."""
    t = spec.to_reference(x)
    _, dp = _legendre_table(t, spec.degree_count)
    return dp * (_norms(spec.degree_count) * spec.scale)


def gauss_legendre_rule(node_count: int, domain=(-1.0, 1.0)) -> QuadratureRule:
    """Gauss-Legendre nodes and weights on ``domain`` (weights sum to b - a).

    Nodes are the eigenvalues of the symmetric Jacobi matrix of the Legendre
    recurrence; weights come from the first components of its eigenvectors.
    """
    if int(node_count) < 1:
        raise ValueError("node_count must be >= 1")
    n = int(node_count)
    k = np.arange(1, n)
    off = k / np.sqrt(4.0 * k * k - 1.0)
    t, vecs = eigh_tridiagonal(np.zeros(n), off)
    w = 2.0 * vecs[0, :] ** 2
    # symmetrize against eigensolver round-off
    t = 0.5 * (t - t[::-1])
    w = 0.5 * (w + w[::-1])
    a, b = float(domain[0]), float(domain[1])
    if not a < b:
        raise ValueError(f"empty interval {domain}")
    nodes = 0.5 * (b - a) * t + 0.5 * (a + b)
    return QuadratureRule(nodes=nodes, weights=0.5 * (b - a) * w)
