"""Tensor trains and functional tensor trains.

A ``TensorTrain`` is a list of 3-way cores ``(r_left, n, r_right)`` with
boundary ranks 1.  A ``FunctionalTT`` attaches one Legendre basis per mode,
so the train is the coefficient tensor of a multivariate polynomial.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .basis import BasisSpec

DENSE_LIMIT = 10**7
_CHUNK_ENTRIES = 2_000_000


class TensorTrain:
    """Chain of 3-way cores.  Treated as immutable once built."""

    def __init__(self, cores: Sequence[np.ndarray]):
        cores = [np.ascontiguousarray(np.asarray(c, dtype=float)) for c in cores]
        if not cores:
            raise ValueError("a tensor train needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 3 or min(c.shape) < 1:
                raise ValueError(f"core {k} has shape {c.shape}, expected 3-way")
            if not np.all(np.isfinite(c)):
                raise ValueError(f"core {k} has non-finite entries")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for k in range(len(cores) - 1):
            if cores[k].shape[2] != cores[k + 1].shape[0]:
                raise ValueError(f"bond {k} mismatch: {cores[k].shape} vs {cores[k + 1].shape}")
        self.cores = cores

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores[:-1])

    def copy(self) -> "TensorTrain":
        return TensorTrain([c.copy() for c in self.cores])

    def __repr__(self):
        return f"TensorTrain(d={self.d}, n={self.mode_sizes}, r={self.ranks})"

    @classmethod
    def random(cls, mode_sizes, ranks, rng=None) -> "TensorTrain":
        rng = np.random.default_rng(rng)
        full = (1, *ranks, 1)
        return cls([rng.standard_normal((full[k], n, full[k + 1])) for k, n in enumerate(mode_sizes)])

    @classmethod
    def rank_one(cls, vectors) -> "TensorTrain":
        return cls([np.asarray(v, dtype=float).reshape(1, -1, 1) for v in vectors])


@dataclass(frozen=True)
class FunctionalTT:
    train: TensorTrain
    bases: tuple[BasisSpec, ...]

    def __post_init__(self):
        bases = tuple(self.bases)
        object.__setattr__(self, "bases", bases)
        if len(bases) != self.train.d:
            raise ValueError(f"{len(bases)} bases for a train of order {self.train.d}")
        for k, (b, n) in enumerate(zip(bases, self.train.mode_sizes)):
            if b.degree_count != n:
                raise ValueError(f"mode {k}: basis has {b.degree_count} functions, core has {n}")

    @property
    def d(self) -> int:
        return self.train.d

    @property
    def domain(self) -> np.ndarray:
        return np.array([b.domain for b in self.bases])

    def __call__(self, x):
        return tt_eval(self, x)

    def grad(self, x):
        return tt_grad(self, x)

    @property
    def dofs(self) -> int:
        return tt_dofs(self.train)


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != d:
        raise ValueError(f"points have dimension {x.shape[-1]}, surrogate expects {d}")
    return x, single


def _mode_mats(ftt: FunctionalTT, x, k, deriv=False):
    """Core k contracted with the basis (or its derivative) at x[:, k]: (N, r, r')."""
    b = ftt.bases[k]
    psi = b.deriv(x[:, k]) if deriv else b(x[:, k])
    core = ftt.train.cores[k]
    r, n, s = core.shape
    return (psi @ core.transpose(1, 0, 2).reshape(n, r * s)).reshape(-1, r, s)


def _chunk_size(ftt):
    r = max((1, *ftt.train.ranks))
    return max(256, _CHUNK_ENTRIES // (r * r))


def tt_eval(ftt: FunctionalTT, x):
    """Evaluate the FTT at one point (shape (d,)) or a batch (N, d)."""
    x, single = _as_points(x, ftt.d)
    step = _chunk_size(ftt)
    out = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], step):
        xc = x[lo:lo + step]
        v = np.ones((xc.shape[0], 1))
        for k in range(ftt.d):
            v = np.einsum("pa,pab->pb", v, _mode_mats(ftt, xc, k))
        out[lo:lo + step] = v[:, 0]
    return out[0] if single else out


def tt_grad(ftt: FunctionalTT, x):
    """Gradient of the FTT from cached left and right partial contractions."""
    x, single = _as_points(x, ftt.d)
    step = max(64, _chunk_size(ftt) // (2 * ftt.d))
    if x.shape[0] > step:
        g = np.concatenate([tt_grad(ftt, x[lo:lo + step]) for lo in range(0, x.shape[0], step)])
        return g
    n_pts, d = x.shape
    mats = [_mode_mats(ftt, x, k) for k in range(d)]
    left = [np.ones((n_pts, 1))]
    for k in range(d - 1):
        left.append(np.einsum("pa,pab->pb", left[-1], mats[k]))
    right = np.ones((n_pts, 1))
    g = np.empty((n_pts, d))
    for k in range(d - 1, -1, -1):
        dm = _mode_mats(ftt, x, k, deriv=True)
        g[:, k] = np.einsum("pa,pab,pb->p", left[k], dm, right)
        right = np.einsum("pab,pb->pa", mats[k], right)
    return g[0] if single else g


def tt_to_dense(train: TensorTrain) -> np.ndarray:
    """Full coefficient tensor (test oracle only; size-guarded)."""
    if int(np.prod(train.mode_sizes, dtype=float)) > DENSE_LIMIT:
        raise MemoryError(f"dense size {np.prod(train.mode_sizes, dtype=float):.3g} exceeds {DENSE_LIMIT}")
    full = train.cores[0].reshape(train.mode_sizes[0], -1)
    for c in train.cores[1:]:
        r, n, s = c.shape
        full = (full.reshape(-1, r) @ c.reshape(r, n * s)).reshape(-1, s)
    return full.reshape(train.mode_sizes)


def tt_dofs(train: TensorTrain) -> int:
    return int(sum(c.size for c in train.cores))


def _left_qr(core):
    r, n, s = core.shape
    q, rr = np.linalg.qr(core.reshape(r * n, s))
    return q.reshape(r, n, -1), rr


def _right_qr(core):
    r, n, s = core.shape
    q, rr = np.linalg.qr(core.reshape(r, n * s).T)
    return q.T.reshape(-1, n, s), rr.T


def tt_orthogonalize(train: TensorTrain, pivot: int) -> TensorTrain:
    """Left-orthogonal cores before ``pivot``, right-orthogonal after it."""
    d = train.d
    if not 0 <= pivot < d:
        raise IndexError(f"pivot {pivot} out of range for order {d}")
    cores = [c.copy() for c in train.cores]
    for k in range(pivot):
        cores[k], rr = _left_qr(cores[k])
        cores[k + 1] = np.einsum("ab,bnc->anc", rr, cores[k + 1])
    for k in range(d - 1, pivot, -1):
        cores[k], ll = _right_qr(cores[k])
        cores[k - 1] = np.einsum("anb,bc->anc", cores[k - 1], ll)
    return TensorTrain(cores)


def _truncation_rank(s, delta):
    """Smallest rank whose discarded tail has Frobenius norm <= delta."""
    tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]  # tail[i] = ||s[i:]||
    keep = len(s)
    while keep > 1 and tail[keep - 1] <= delta:
        keep -= 1
    return keep


def tt_round(train: TensorTrain, tolerance: float) -> TensorTrain:
    """TT-SVD recompression to relative Frobenius accuracy ``tolerance``."""
    if not 0.0 <= tolerance < 1.0:
        raise ValueError("tolerance must lie in [0, 1)")
    d = train.d
    if d == 1:
        return train.copy()
    cores = list(tt_orthogonalize(train, d - 1).cores)
    norm = np.linalg.norm(cores[-1])
    delta = tolerance * norm / np.sqrt(d - 1)
    for k in range(d - 1, 0, -1):
        r, n, s = cores[k].shape
        u, sv, vt = np.linalg.svd(cores[k].reshape(r, n * s), full_matrices=False)
        if tolerance == 0.0:
            # only exact (round-off level) rank deficiency
            floor = np.finfo(float).eps * max(r, n * s) * (sv[0] if sv.size else 0.0)
            keep = max(1, int(np.sum(sv > floor)))
        else:
            keep = _truncation_rank(sv, delta)
        cores[k] = vt[:keep].reshape(keep, n, s)
        cores[k - 1] = np.einsum("anb,bc->anc", cores[k - 1], u[:, :keep] * sv[:keep])
    return TensorTrain(cores)


def tt_dot(a: TensorTrain, b: TensorTrain) -> float:
    """Frobenius inner product of two trains with equal mode sizes."""
    if a.mode_sizes != b.mode_sizes:
        raise ValueError("mode sizes differ")
    m = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        m = np.einsum("ab,anc,bnd->cd", m, ca, cb, optimize=True)
    return float(m[0, 0])


def tt_norm(train: TensorTrain) -> float:
    return float(np.linalg.norm(tt_orthogonalize(train, train.d - 1).cores[-1]))


def tt_add(a: TensorTrain, b: TensorTrain, beta: float = 1.0) -> TensorTrain:
    """Train for ``a + beta * b`` (ranks add)."""
    if a.mode_sizes != b.mode_sizes:
        raise ValueError("mode sizes differ")
    d = a.d
    if d == 1:
        return TensorTrain([a.cores[0] + beta * b.cores[0]])
    cores = []
    for k, (ca, cb) in enumerate(zip(a.cores, b.cores)):
        ra, n, sa = ca.shape
        rb, _, sb = cb.shape
        if k == 0:
            cores.append(np.concatenate([ca, beta * cb], axis=2))
        elif k == d - 1:
            cores.append(np.concatenate([ca, cb], axis=0))
        else:
            c = np.zeros((ra + rb, n, sa + sb))
            c[:ra, :, :sa] = ca
            c[ra:, :, sa:] = cb
            cores.append(c)
    return TensorTrain(cores)


def tt_distance(a: TensorTrain, b: TensorTrain) -> float:
    """Frobenius norm of ``a - b``."""
    return tt_norm(tt_add(a, b, -1.0))
