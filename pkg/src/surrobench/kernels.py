"""Radial kernel interpolation with analytic gradients and Halton sampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .basis import check_in_box
from .data import Dataset, FitStats
from .errors import FitError
from .metrics import err2

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "exponential", "matern2")
JITTER_LEVELS = (0.0, 1e-14, 1e-12, 1e-10)


def _phi(family, r):
    if family == "gaussian":
        return np.exp(-r * r)
    if family == "exponential":
        return np.exp(-r)
    if family == "matern2":
        return (1.0 + r + r * r / 3.0) * np.exp(-r)
    raise ValueError(f"unknown kernel family {family!r}")


def _dphi_over_r(family, r):
    """phi'(r) / r, the factor multiplying (x - y) in the gradient."""
    if family == "gaussian":
        return -2.0 * np.exp(-r * r)
    if family == "matern2":
        # phi'(r) = -r (1 + r) e^-r / 3
        return -(1.0 + r) * np.exp(-r) / 3.0
    if family == "exponential":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -np.exp(-r) / r
        return np.where(r > 0, out, 0.0)
    raise ValueError(f"unknown kernel family {family!r}")


@dataclass(frozen=True)
class KernelSpec:
    family: str = "matern2"
    shape: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if not self.shape > 0:
            raise ValueError("shape must be positive")

    def matrix(self, x, y):
        return _phi(self.family, self.shape * _distances(x, y))


def _distances(x, y):
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    sq = (np.sum(x * x, axis=1)[:, None] + np.sum(y * y, axis=1)[None, :] - 2.0 * x @ y.T)
    return np.sqrt(np.maximum(sq, 0.0))


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("dimension mismatch")
    return float(_phi(spec.family, spec.shape * np.linalg.norm(x - y)))


def _primes(count):
    out = []
    c = 2
    while len(out) < count:
        if all(c % p for p in out if p * p <= c):
            out.append(c)
        c += 1
    return out


def _radical_inverse(idx, base):
    out = np.zeros(idx.shape, dtype=float)
    f = 1.0 / base
    i = idx.copy()
    while np.any(i > 0):
        out += f * (i % base)
        i //= base
        f /= base
    return out


def halton_points(count: int, d: int, domain=None) -> np.ndarray:
    """First ``count`` Halton points (index from 1) mapped to the box."""
    if d > 100:
        raise ValueError("Halton sequence supported up to d = 100")
    if count == 0:
        return np.empty((0, d))
    idx = np.arange(1, count + 1)
    u = np.column_stack([_radical_inverse(idx, p) for p in _primes(d)])
    if domain is None:
        return u
    box = np.asarray(domain, dtype=float)
    return box[:, 0] + (box[:, 1] - box[:, 0]) * u


@dataclass
class KernelSurrogate:
    spec: KernelSpec
    centers: np.ndarray
    coefficients: np.ndarray
    regularization: float = 0.0
    domain: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def dofs(self) -> int:
        return int(self.coefficients.size)

    def __call__(self, x):
        return predict(self, x)

    def grad(self, x):
        return predict_grad(self, x)


def _points(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise ValueError(f"points have dimension {x.shape[1]}, surrogate expects {d}")
    return x, single


def predict(s: KernelSurrogate, x, chunk: int = 2048):
    x, single = _points(x, s.dim)
    check_in_box(x, s.domain)
    out = np.empty(len(x))
    for lo in range(0, len(x), chunk):
        out[lo:lo + chunk] = s.spec.matrix(x[lo:lo + chunk], s.centers) @ s.coefficients
    return out[0] if single else out


def predict_grad(s: KernelSurrogate, x, chunk: int = 1024):
    x, single = _points(x, s.dim)
    check_in_box(x, s.domain)
    out = np.empty_like(x)
    eps = s.spec.shape
    for lo in range(0, len(x), chunk):
        xc = x[lo:lo + chunk]
        r = eps * _distances(xc, s.centers)
        w = eps * eps * _dphi_over_r(s.spec.family, r) * s.coefficients[None, :]
        # sum_j w_ij (x_i - c_j)
        out[lo:lo + chunk] = w.sum(axis=1)[:, None] * xc - w @ s.centers
    return out[0] if single else out


def fit_interpolant(data: Dataset, spec: KernelSpec, regularization: float = 0.0,
                    domain=None) -> KernelSurrogate:
    """Solve (K + reg I) alpha = y by Cholesky with escalating jitter."""
    import time
    t0 = time.perf_counter()
    x = data.x
    K = spec.matrix(x, x)
    K = 0.5 * (K + K.T)
    scale = np.linalg.norm(K, 2) if len(x) <= 200 else np.abs(K).sum(axis=1).max()
    levels = (regularization,) if regularization > 0 else JITTER_LEVELS
    alpha, used = None, None
    for jit in levels:
        shift = jit if regularization > 0 else jit * scale
        try:
            c = sla.cho_factor(K + shift * np.eye(len(x)), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        alpha = sla.cho_solve(c, data.y, check_finite=False)
        if np.all(np.isfinite(alpha)):
            used = shift
            break
    if alpha is None or used is None:
        raise FitError("kernel matrix factorization failed at every jitter level")
    if regularization == 0 and used > 0:
        log.info("kernel fit needed jitter %.3g", used)
    s = KernelSurrogate(spec, x.copy(), alpha, regularization, domain)
    s.meta = {"jitter": used, "cpu_train_s": time.perf_counter() - t0}
    return s


def fit_kernel(data: Dataset, spec: KernelSpec, regularization: float = 0.0, domain=None):
    """Fit plus the shared statistics record."""
    s = fit_interpolant(data, spec, regularization, domain)
    stats = FitStats(err_train_2=err2(predict(s, data.x), data.y), dofs=s.dofs,
                     n_train_samples=len(data), cpu_train_s=s.meta["cpu_train_s"],
                     regularized=s.meta["jitter"] > 0,
                     extra={"shape": spec.shape, "family": spec.family, "jitter": s.meta["jitter"]})
    return s, stats


def select_shape(data: Dataset, family: str, shapes, holdout: float = 0.1, seed=0):
    """Shape with the smallest validation error on a held-out split."""
    train, val = data.split(holdout, rng=seed)
    best = None
    for eps in shapes:
        s = fit_interpolant(train, KernelSpec(family, eps))
        e = err2(predict(s, val.x), val.y)
        log.info("shape %.4g: validation err2 %.3e", eps, e)
        if best is None or e < best[1]:
            best = (eps, e)
    return best[0], best[1]
