"""Benchmark problems: analytic test functions and control models.

Every problem exposes ``value(X)`` and ``grad(X)`` on batches ``(N, d)``
together with a ``domain`` box of shape ``(d, 2)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .control import CareSolution, SemilinearModel, care_residual
from .data import Dataset
from .errors import CareError, SingularityError

log = logging.getLogger(__name__)

# smallest |x_i| used when forming dV_i / x_i
ACADEMIC_FLOOR = 1e-12


def _batch(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise ValueError(f"points have dimension {x.shape[1]}, problem has {d}")
    return x, single


def _box(d, lo, hi):
    return np.tile([float(lo), float(hi)], (d, 1))


@dataclass
class TestFunction:
    name: str
    dim: int
    domain: np.ndarray
    _value: Callable = field(repr=False)
    _grad: Callable = field(repr=False)

    __test__ = False  # not a pytest class

    def value(self, x):
        x, single = _batch(x, self.dim)
        v = self._value(x)
        return v[0] if single else v

    def grad(self, x):
        x, single = _batch(x, self.dim)
        g = self._grad(x)
        return g[0] if single else g

    __call__ = value

    def value_and_grad(self, x):
        return self.value(x), self.grad(x)


def lowrank_fn(case: str, d: int) -> TestFunction:
    """exp(-sum x / 2d) on [-1,1]^d (a), exp(-prod x) on [-1,1]^d (b) or [0,2]^d (c)."""
    if d < 2:
        raise ValueError("d must be at least 2")
    case = case.lower()
    if case == "a":
        def value(x):
            return np.exp(-x.sum(axis=1) / (2 * d))

        def grad(x):
            return np.repeat((-value(x) / (2 * d))[:, None], d, axis=1)

        return TestFunction("lowrank-a", d, _box(d, -1, 1), value, grad)
    if case in ("b", "c"):
        def value(x):
            return np.exp(-np.prod(x, axis=1))

        def grad(x):
            # prod over j != k without dividing by x_k
            n = x.shape[1]
            left = np.cumprod(np.hstack([np.ones((len(x), 1)), x[:, :-1]]), axis=1)
            right = np.cumprod(np.hstack([np.ones((len(x), 1)), x[:, :0:-1]]), axis=1)[:, ::-1]
            others = left * right[:, :n]
            return -value(x)[:, None] * others

        box = _box(d, -1, 1) if case == "b" else _box(d, 0, 2)
        return TestFunction(f"lowrank-{case}", d, box, value, grad)
    raise ValueError(f"unknown case {case!r}; expected a, b or c")


def regularity_fn(lams, d: int) -> TestFunction:
    """l0 |x|^2 + l1 |x - y1| + l2 sqrt|x - y2| on [-1,1]^d, y1 = 0.5, y2 = -0.5."""
    l0, l1, l2 = (float(v) for v in lams)
    if min(l0, l1, l2) < 0:
        raise ValueError("lambda components must be nonnegative")
    y1 = np.full(d, 0.5)
    y2 = np.full(d, -0.5)

    def value(x):
        return (l0 * np.sum(x * x, axis=1) + l1 * np.linalg.norm(x - y1, axis=1)
                + l2 * np.sqrt(np.linalg.norm(x - y2, axis=1)))

    def grad(x):
        g = 2 * l0 * x
        if l1 > 0:
            r1 = np.linalg.norm(x - y1, axis=1)
            if np.any(r1 == 0):
                raise SingularityError("gradient undefined at x = y1")
            g = g + l1 * (x - y1) / r1[:, None]
        if l2 > 0:
            r2 = np.linalg.norm(x - y2, axis=1)
            if np.any(r2 == 0):
                raise SingularityError("gradient undefined at x = y2")
            g = g + l2 * (x - y2) / (2 * r2[:, None] ** 1.5)
        return g

    tag = ",".join(f"{v:g}" for v in (l0, l1, l2))
    return TestFunction(f"regularity-{tag}", d, _box(d, -1, 1), value, grad)


class AcademicProblem:
    """V(x) = |x|^2 (g1 + g2) with Gaussians g_i = exp(-|x - mu_i|^2 / s_i^2).

    Dynamics ``x' = u`` with running cost ``r(x) + u^T R u``, ``R = I/2``
    and ``r = |grad V|^2 / 2``, so V is the exact value function.
    """

    def __init__(self, d: int, mu1=0.0, mu2=0.5, sigma1=1.0, sigma2=1.0):
        if sigma1 <= 0 or sigma2 <= 0:
            raise ValueError("Gaussian widths must be positive")
        self.d = int(d)
        self.mu1 = np.broadcast_to(np.asarray(mu1, dtype=float), (self.d,)).copy()
        self.mu2 = np.broadcast_to(np.asarray(mu2, dtype=float), (self.d,)).copy()
        self.sigma1, self.sigma2 = float(sigma1), float(sigma2)
        self.name = f"academic-{self.d}"
        self.dim = self.d
        self.domain = _box(self.d, -1, 1)

    def _gauss(self, x):
        g1 = np.exp(-np.sum((x - self.mu1) ** 2, axis=1) / self.sigma1 ** 2)
        g2 = np.exp(-np.sum((x - self.mu2) ** 2, axis=1) / self.sigma2 ** 2)
        return g1, g2

    def value(self, x):
        x, single = _batch(x, self.d)
        g1, g2 = self._gauss(x)
        v = np.sum(x * x, axis=1) * (g1 + g2)
        return v[0] if single else v

    __call__ = value

    def grad(self, x):
        x, single = _batch(x, self.d)
        g1, g2 = self._gauss(x)
        sq = np.sum(x * x, axis=1)[:, None]
        dg = (-2 * (x - self.mu1) / self.sigma1 ** 2 * g1[:, None]
              - 2 * (x - self.mu2) / self.sigma2 ** 2 * g2[:, None])
        g = 2 * x * (g1 + g2)[:, None] + sq * dg
        return g[0] if single else g

    def value_and_grad(self, x):
        return self.value(x), self.grad(x)

    def running_cost(self, x):
        g = np.atleast_2d(self.grad(x))
        r = 0.5 * np.sum(g * g, axis=1)
        return r[0] if np.asarray(x).ndim == 1 else r

    def q_diag(self, x):
        """Diagonal of Q(x) = diag(|dV_i|^2 / x_i^2) / 2 with x_i floored away from 0."""
        x = np.asarray(x, dtype=float)
        g = self.grad(x)
        safe = np.where(np.abs(x) < ACADEMIC_FLOOR, np.copysign(ACADEMIC_FLOOR, x), x)
        return 0.5 * (g / safe) ** 2

    def sdre_matrices(self, x):
        x = np.asarray(x, dtype=float).reshape(self.d)
        return (np.zeros((self.d, self.d)), np.eye(self.d), np.diag(self.q_diag(x)),
                0.5 * np.eye(self.d))

    def model(self) -> SemilinearModel:
        d = self.d
        return SemilinearModel(A=lambda y: np.zeros((d, d)), B=lambda y: np.eye(d),
                               Q=lambda y: np.diag(self.q_diag(y)), R=0.5 * np.eye(d), d=d,
                               name=self.name)


def academic_value(prob: AcademicProblem, x):
    return prob.value(x)


def academic_grad(prob: AcademicProblem, x):
    return prob.grad(x)


def academic_running_cost(prob: AcademicProblem, x):
    return prob.running_cost(x)


def academic_sdre_matrices(prob: AcademicProblem, x):
    return prob.sdre_matrices(x)


def neumann_laplacian(d: int, boundary: str = "one-sided") -> np.ndarray:
    """Second-difference matrix on d nodes of [0,1] with Neumann boundary rows.

    ``one-sided`` rows are ``(-1, 1) / h^2`` (symmetric matrix); ``ghost``
    rows are ``(-2, 2) / h^2``.  Both have zero row sums.
    """
    if d < 3:
        raise ValueError("need at least 3 grid points")
    h = 1.0 / (d - 1)
    A0 = (np.diag(np.full(d - 1, 1.0), -1) + np.diag(np.full(d, -2.0))
          + np.diag(np.full(d - 1, 1.0), 1))
    if boundary == "ghost":
        A0[0, 1] = 2.0
        A0[-1, -2] = 2.0
    elif boundary == "one-sided":
        A0[0, 0] = -1.0
        A0[-1, -1] = -1.0
    else:
        raise ValueError(f"unknown boundary form {boundary!r}")
    return A0 / h ** 2


def space_weights(d: int, quadrature: str = "uniform") -> np.ndarray:
    h = 1.0 / (d - 1)
    w = np.full(d, h)
    if quadrature == "trapezoid":
        w[0] = w[-1] = h / 2
    elif quadrature != "uniform":
        raise ValueError(f"unknown quadrature {quadrature!r}")
    return w


class AllenCahnModel(SemilinearModel):
    """Finite-difference Allen-Cahn ``y' = sigma A0 y + y - y^3 + u`` on [0,1].

    Costs use spatial quadrature weights W: ``Q = W`` and ``R = gamma W``.
    Whenever ``W A0`` is symmetric (one-sided rows with uniform weights, ghost
    rows with trapezoid weights) the frozen Riccati equation is solved in
    closed form through one symmetric eigendecomposition.
    """

    def __init__(self, d: int = 30, sigma: float = 1e-2, gamma: float = 0.1,
                 quadrature: str = "uniform", boundary: str = "one-sided"):
        if sigma <= 0 or gamma <= 0:
            raise ValueError("sigma and gamma must be positive")
        self.sigma, self.gamma, self.quadrature = float(sigma), float(gamma), quadrature
        self.boundary = boundary
        self.A0 = neumann_laplacian(d, boundary)
        self.weights = space_weights(d, quadrature)
        self.grid = np.linspace(0.0, 1.0, d)
        W = np.diag(self.weights)
        base = self.sigma * self.A0 + np.eye(d)
        super().__init__(A=lambda y: base - np.diag(y * y), B=lambda y: np.eye(d),
                         Q=lambda y: W, R=self.gamma * W, d=d, name="allencahn")
        self._base = base
        sw = np.sqrt(self.weights)
        self._sw = sw
        # symmetric similarity transform W^1/2 (sigma A0 + I) W^-1/2
        self._base_sym = (sw[:, None] * base) / sw[None, :]
        WA = self.weights[:, None] * self.A0
        self._fast = bool(np.allclose(WA, WA.T, rtol=0, atol=1e-12 * np.abs(WA).max()))

    def rhs(self, y, u):
        return self.sigma * (self.A0 @ y) + y - y ** 3 + u

    def riccati_batch(self, Y) -> np.ndarray:
        """P(y) for a batch of states, shape (N, d, d)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if not self._fast:
            return np.array([self.care(y).P for y in Y])
        Az = self._base_sym[None, :, :] - np.einsum("ni,ij->nij", Y * Y, np.eye(self.d))
        lam, V = np.linalg.eigh(Az)
        f = self.gamma * (lam + np.sqrt(lam ** 2 + 1.0 / self.gamma))
        X = np.einsum("nik,nk,njk->nij", V, f, V)
        sw = self._sw
        return sw[None, :, None] * X * sw[None, None, :]

    def care(self, y, tolerance: float = 1e-10) -> CareSolution:
        if not self._fast:
            return super().care(y, tolerance)
        P = self.riccati_batch(y)[0]
        res = float(np.linalg.norm(care_residual(self.A(y), self.B(y), self.Q(y), self.R, P)))
        return CareSolution(P=0.5 * (P + P.T), residual_norm=res)

    def value_data(self, Y):
        """V(y) ~ y^T P(y) y and grad V(y) ~ 2 P(y) y (dP/dy neglected)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        out_v = np.empty(len(Y))
        out_g = np.empty_like(Y)
        step = 4096
        for lo in range(0, len(Y), step):
            P = self.riccati_batch(Y[lo:lo + step])
            Py = np.einsum("nij,nj->ni", P, Y[lo:lo + step])
            out_v[lo:lo + step] = np.sum(Y[lo:lo + step] * Py, axis=1)
            out_g[lo:lo + step] = 2 * Py
        return out_v, out_g


def allen_cahn_model(d: int = 30, sigma: float = 1e-2, gamma: float = 0.1,
                     quadrature: str = "uniform", boundary: str = "one-sided") -> AllenCahnModel:
    return AllenCahnModel(d, sigma, gamma, quadrature, boundary)


class SDREValueFunction:
    """Value data ``y^T P(y) y`` of a semilinear model as a regression target."""

    def __init__(self, model: SemilinearModel, domain, name: Optional[str] = None):
        self.model = model
        self.dim = model.d
        self.domain = np.asarray(domain, dtype=float)
        self.name = name or model.name

    def value_and_grad(self, x):
        x, single = _batch(x, self.dim)
        if hasattr(self.model, "value_data"):
            v, g = self.model.value_data(x)
        else:
            v = np.empty(len(x))
            g = np.empty_like(x)
            for i, y in enumerate(x):
                P = self.model.care(y).P
                v[i] = y @ P @ y
                g[i] = 2 * P @ y
        return (v[0], g[0]) if single else (v, g)

    def value(self, x):
        return self.value_and_grad(x)[0]

    __call__ = value

    def grad(self, x):
        return self.value_and_grad(x)[1]


def fourier_ic(a, beta: float = 3.0, grid=None, d: int = 30):
    """sum_k (a_k / 2) cos(2 pi k x) k^-beta on the grid (default d nodes of [0,1])."""
    a = np.asarray(a, dtype=float).reshape(-1)
    x = np.linspace(0.0, 1.0, d) if grid is None else np.asarray(grid, dtype=float)
    k = np.arange(1, len(a) + 1)
    return np.cos(2 * np.pi * np.outer(x, k)) @ (0.5 * a * k ** (-float(beta)))


# the four test initial conditions
FOURIER_TEST_CASES = ([1, 0, 0, 0], [1, 1, 0, 0], [1, 1, 1, 0], [1, 1, 1, 1])


def halton_sequence(count: int, d: int) -> np.ndarray:
    from .kernels import halton_points
    return halton_points(count, d, _box(d, 0, 1))


def sample_points(sampler: str, count: int, domain, seed=0, beta: float = 3.0, modes: int = 4):
    """Points from ``uniform``, ``halton`` (both in the box) or ``fourier`` sampling."""
    domain = np.asarray(domain, dtype=float)
    d = domain.shape[0]
    if sampler == "uniform":
        rng = np.random.default_rng(seed)
        return domain[:, 0] + (domain[:, 1] - domain[:, 0]) * rng.random((count, d))
    if sampler == "halton":
        from .kernels import halton_points
        return halton_points(count, d, domain)
    if sampler == "fourier":
        rng = np.random.default_rng(seed)
        coef = rng.uniform(-1.0, 1.0, size=(count, modes))
        grid = np.linspace(0.0, 1.0, d)
        k = np.arange(1, modes + 1)
        basis = np.cos(2 * np.pi * np.outer(grid, k)) * (0.5 * k ** (-float(beta)))
        return coef @ basis.T
    raise ValueError(f"unknown sampler {sampler!r}")


def generate_dataset(problem, sampler: str, count: int, seed=0, with_grad: bool = True) -> Dataset:
    """Exact values (and gradients) of ``problem`` at sampled points.

    Points where a Riccati solve fails are skipped and replaced by fresh ones.
    """
    d = problem.dim
    if count == 0:
        return Dataset(np.empty((0, d)), np.empty(0), np.empty((0, d)) if with_grad else None)
    xs, vs, gs = [], [], []
    have, attempt = 0, 0
    while have < count:
        if attempt > 10:
            raise CareError(f"could not generate {count} valid samples")
        n_draw = count - have
        if sampler == "halton":
            pts = sample_points("halton", have + n_draw, problem.domain)[have:]
        else:
            pts = sample_points(sampler, n_draw, problem.domain, seed=(seed, attempt))
        try:
            v, g = problem.value_and_grad(pts)
            ok = np.isfinite(v)
        except CareError:
            v = np.empty(len(pts))
            g = np.empty_like(pts)
            ok = np.zeros(len(pts), dtype=bool)
            for i, p in enumerate(pts):
                try:
                    v[i], g[i] = problem.value_and_grad(p)
                    ok[i] = True
                except CareError as exc:
                    log.warning("skipping sample: %s", exc)
        xs.append(pts[ok])
        vs.append(np.asarray(v)[ok])
        gs.append(np.asarray(g)[ok])
        have += int(ok.sum())
        attempt += 1
    g = np.concatenate(gs) if with_grad else None
    return Dataset(np.concatenate(xs), np.concatenate(vs), g)


def parse_lambda(text: str):
    parts = [float(p) for p in text.replace(";", ",").split(",") if p.strip()]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated lambdas, got {text!r}")
    return tuple(parts)


def get_problem(preset: str, dim: Optional[int] = None, gamma: float = 0.1):
    """Problem object for a CLI preset name."""
    if preset in ("lowrank-a", "lowrank-b", "lowrank-c"):
        return lowrank_fn(preset[-1], dim or 16)
    if preset.startswith("regularity-"):
        return regularity_fn(parse_lambda(preset[len("regularity-"):]), dim or 16)
    if preset.startswith("academic"):
        tail = preset[len("academic"):].lstrip("-")
        return AcademicProblem(int(tail) if tail else (dim or 3))
    if preset == "allencahn":
        model = allen_cahn_model(dim or 30, gamma=gamma)
        return SDREValueFunction(model, _box(model.d, -1, 1), name="allencahn")
    raise ValueError(f"unknown preset {preset!r}")
