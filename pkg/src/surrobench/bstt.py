"""Block-sparse tensor trains with total-degree and locality constraints.

Every bond index belongs to a block labelled by the polynomial degree
accumulated so far.  Core slice ``m`` (Legendre degree m) may only connect a
left block of degree l to a right block of degree l + m, so the train
represents polynomials of total degree at most ``max_degree``.  With a
locality bound K the label also tracks how many modes ago the first
non-constant factor appeared, and transitions that would let the active
variables span more than K consecutive modes are removed.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from math import comb
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .basis import BasisSpec
from .data import Dataset, FitStats
from .metrics import err2
from .tt import FunctionalTT, TensorTrain

log = logging.getLogger(__name__)

CLOSED = -1
TERMINAL = ("end",)


@dataclass(frozen=True)
class DegreeProfile:
    max_degree: int
    locality: Optional[int] = None
    homogeneous: bool = False
    block_cap: Optional[int] = None

    def __post_init__(self):
        if self.max_degree < 0:
            raise ValueError("max_degree must be nonnegative")
        if self.locality is not None and self.locality < 1:
            raise ValueError("locality must be at least 1")
        if self.block_cap is not None and self.block_cap < 1:
            raise ValueError("block_cap must be at least 1")

    def check(self, bases):
        for k, b in enumerate(bases):
            if self.max_degree >= b.degree_count:
                raise ValueError(f"mode {k}: max_degree {self.max_degree} needs more than "
                                 f"{b.degree_count} basis functions")

    def step(self, label, m):
        """Label after multiplying by a degree-m factor, or None if forbidden."""
        deg, age = label
        new = deg + m
        if new > self.max_degree:
            return None
        K = self.locality
        if K is None:
            return (new, 0)
        if deg == 0:
            if m == 0:
                return (0, 0)
            return (new, 1) if 1 < K else (new, CLOSED)
        if age == CLOSED:
            return (deg, CLOSED) if m == 0 else None
        age += 1
        if age > K:
            return None
        return (new, age) if age < K else (new, CLOSED)

    def accepts(self, label) -> bool:
        return label[0] == self.max_degree if self.homogeneous else label[0] <= self.max_degree


@dataclass
class BlockPattern:
    """Bond labels, block sizes and allowed (left block, slice, right block) triples."""

    labels: list        # per bond 0..d: list of labels
    sizes: list         # per bond: list of block sizes
    transitions: list   # per core: list of (a, m, b) label indices
    mode_sizes: tuple
    profile: DegreeProfile

    @property
    def d(self) -> int:
        return len(self.mode_sizes)

    @property
    def ranks(self) -> tuple:
        return tuple(sum(s) for s in self.sizes[1:-1])

    def offsets(self, bond):
        return np.concatenate([[0], np.cumsum(self.sizes[bond])]).astype(int)

    def mask(self, k) -> np.ndarray:
        lo, ro = self.offsets(k), self.offsets(k + 1)
        out = np.zeros((lo[-1], self.mode_sizes[k], ro[-1]), dtype=bool)
        for a, m, b in self.transitions[k]:
            out[lo[a]:lo[a + 1], m, ro[b]:ro[b + 1]] = True
        return out

    def block_slices(self, k, m):
        """Allowed (row range, column range) pairs of slice m of core k."""
        lo, ro = self.offsets(k), self.offsets(k + 1)
        return [((lo[a], lo[a + 1]), (ro[b], ro[b + 1])) for a, mm, b in self.transitions[k] if mm == m]

    def free_parameters(self) -> int:
        return int(sum(self.mask(k).sum() for k in range(self.d)))

    def count_multi_indices(self) -> int:
        """Number of admissible basis multi-indices (paths through the pattern)."""
        ways = {0: 1}
        for k in range(self.d):
            nxt = {}
            for a, m, b in self.transitions[k]:
                if a in ways:
                    nxt[b] = nxt.get(b, 0) + ways[a]
            ways = nxt
        return int(sum(ways.values()))

    def admissible(self, multi_index) -> bool:
        label = (0, 0)
        for m in multi_index:
            label = self.profile.step(label, int(m))
            if label is None:
                return False
        return self.profile.accepts(label)


def block_structure(d: int, bases: Sequence[BasisSpec], profile: DegreeProfile) -> BlockPattern:
    """Labels and block sizes for a degree/locality profile.

    Block sizes are ``min(#prefix paths, #suffix paths)`` (optionally capped),
    which is the largest useful rank of each block.
    """
    if len(bases) != d:
        raise ValueError(f"{len(bases)} bases for dimension {d}")
    profile.check(bases)
    n = tuple(b.degree_count for b in bases)
    slices = [range(min(nk, profile.max_degree + 1)) for nk in n]
    # forward reachability and path counts
    fwd = [{(0, 0): 1}]
    for k in range(d):
        nxt = {}
        for lab, c in fwd[-1].items():
            for m in slices[k]:
                new = profile.step(lab, m)
                if new is None:
                    continue
                if k == d - 1:
                    if not profile.accepts(new):
                        continue
                    new = TERMINAL
                nxt[new] = nxt.get(new, 0) + c
        fwd.append(nxt)
    # backward path counts
    bwd = [None] * (d + 1)
    bwd[d] = {TERMINAL: 1} if TERMINAL in fwd[d] else {}
    for k in range(d - 1, -1, -1):
        cur = {}
        for lab in fwd[k]:
            total = 0
            for m in slices[k]:
                new = profile.step(lab, m)
                if new is None:
                    continue
                if k == d - 1:
                    if not profile.accepts(new):
                        continue
                    new = TERMINAL
                total += bwd[k + 1].get(new, 0)
            if total:
                cur[lab] = total
        bwd[k] = cur
    if not bwd[0]:
        raise ValueError("profile admits no multi-index")
    labels, sizes = [], []
    for k in range(d + 1):
        labs = sorted((lab for lab in fwd[k] if lab in bwd[k]), key=str)
        if k in (0, d):
            labs = [labs[0]]
        cap = profile.block_cap
        sz = [1 if k in (0, d) else min(fwd[k][lab], bwd[k][lab], cap or 10**9) for lab in labs]
        labels.append(labs)
        sizes.append(sz)
    index = [{lab: i for i, lab in enumerate(labs)} for labs in labels]
    transitions = []
    for k in range(d):
        tr = []
        for a, lab in enumerate(labels[k]):
            for m in slices[k]:
                new = profile.step(lab, m)
                if new is None:
                    continue
                if k == d - 1:
                    if not profile.accepts(new):
                        continue
                    new = TERMINAL
                if new in index[k + 1]:
                    tr.append((a, m, index[k + 1][new]))
        transitions.append(tr)
    return BlockPattern(labels, sizes, transitions, n, profile)


def monomial_count(d: int, g: int) -> int:
    """Dimension of polynomials of total degree <= g in d variables."""
    return comb(d + g, g)


def random_block_train(pattern: BlockPattern, rng=None) -> TensorTrain:
    rng = np.random.default_rng(rng)
    cores = []
    for k in range(pattern.d):
        mask = pattern.mask(k)
        fan_in = max(1, int(mask.sum(axis=(0, 1)).max()))
        c = rng.standard_normal(mask.shape) / np.sqrt(fan_in)
        cores.append(np.where(mask, c, 0.0))
    return TensorTrain(cores)


def _block_left_orth(core, pattern, k):
    """Left-orthogonalize per right block; returns (core, block-diagonal R)."""
    r, n, s = core.shape
    unf = core.reshape(r * n, s)
    mask = pattern.mask(k).reshape(r * n, s)
    ro = pattern.offsets(k + 1)
    q_out = np.zeros_like(unf)
    R = np.zeros((s, s))
    for b in range(len(ro) - 1):
        cols = slice(ro[b], ro[b + 1])
        rows = np.flatnonzero(mask[:, ro[b]])
        if rows.size == 0:
            continue
        q, rr = np.linalg.qr(unf[rows, cols])
        w = q.shape[1]
        q_out[rows, ro[b]:ro[b] + w] = q
        R[ro[b]:ro[b] + w, cols] = rr
    return q_out.reshape(r, n, s), R


def _block_right_orth(core, pattern, k):
    """Right-orthogonalize per left block; returns (core, block-diagonal L)."""
    r, n, s = core.shape
    unf = core.reshape(r, n * s)
    mask = pattern.mask(k).reshape(r, n * s)
    lo = pattern.offsets(k)
    q_out = np.zeros_like(unf)
    L = np.zeros((r, r))
    for a in range(len(lo) - 1):
        rows = slice(lo[a], lo[a + 1])
        cols = np.flatnonzero(mask[lo[a]])
        if cols.size == 0:
            continue
        q, rr = np.linalg.qr(unf[rows, cols].T)
        w = q.shape[1]
        q_out[lo[a]:lo[a] + w, cols] = q.T
        L[rows, lo[a]:lo[a] + w] = rr.T
    return q_out.reshape(r, n, s), L


def _local_solve(A, y, n_free):
    """Least squares by QR; ridge fallback when under-determined or singular."""
    if A.shape[0] >= n_free:
        q, r = np.linalg.qr(A)
        diag = np.abs(np.diag(r))
        if diag.size and diag.min() > 1e-13 * max(diag.max(), 1e-300):
            return sla.solve_triangular(r, q.T @ y), False
    G = A.T @ A
    mu = 1e-12 * max(np.trace(G) / max(n_free, 1), 1e-300)
    return np.linalg.solve(G + mu * np.eye(n_free), A.T @ y), True


def bs_als_fit(data: Dataset, bases: Sequence[BasisSpec], profile: DegreeProfile,
               stop_tol: float = 1e-11, max_iters: int = 50, seed=0, domain=None):
    """Block-sparse ALS on scattered data; returns (FunctionalTT, FitStats).

    A sweep updates cores left to right then right to left; each micro-step
    is an exact least-squares solve over the free entries of one core.
    Stops when the relative training residual improves by less than
    ``stop_tol`` over a sweep, or after ``max_iters`` sweeps.
    """
    t0 = time.perf_counter()
    bases = tuple(bases)
    d = len(bases)
    pattern = block_structure(d, bases, profile)
    x, y = data.x, data.y
    if x.shape[1] != d:
        raise ValueError("data dimension does not match bases")
    psi = [b(x[:, k]) for k, b in enumerate(bases)]
    largest = max(int(pattern.mask(k).sum()) for k in range(d))
    if len(y) < largest:
        log.warning("only %d samples for %d free entries in the largest core", len(y), largest)
    cores = list(random_block_train(pattern, seed).cores)
    masks = [pattern.mask(k) for k in range(d)]
    ynorm = float(np.linalg.norm(y))
    regularized = False
    history = []

    # start right-orthogonal so the first left-to-right pass is well conditioned
    for k in range(d - 1, 0, -1):
        cores[k], L = _block_right_orth(cores[k], pattern, k)
        cores[k - 1] = np.einsum("anb,bc->anc", cores[k - 1], L)

    def contract(k, v, right=False):
        m = np.einsum("pn,anb->pab", psi[k], cores[k])
        return np.einsum("pab,pb->pa", m, v) if right else np.einsum("pa,pab->pb", v, m)

    N = len(y)
    rights = [None] * (d + 1)
    rights[d] = np.ones((N, 1))
    for k in range(d - 1, 0, -1):
        rights[k] = contract(k, rights[k + 1], right=True)
    lefts = [None] * (d + 1)
    lefts[0] = np.ones((N, 1))

    def micro(k):
        nonlocal regularized
        a_i, m_i, b_i = np.nonzero(masks[k])
        A = lefts[k][:, a_i] * psi[k][:, m_i] * rights[k + 1][:, b_i]
        coef, reg = _local_solve(A, y, len(a_i))
        regularized |= reg
        c = np.zeros(masks[k].shape)
        c[a_i, m_i, b_i] = coef
        cores[k] = c
        res = y - A @ coef
        return float(np.linalg.norm(res))

    prev = np.inf
    sweeps = 0
    converged = False
    res = ynorm
    if ynorm == 0.0:
        cores = [np.zeros(m.shape) for m in masks]
        converged = True
    else:
        for it in range(max_iters):
            sweeps = it + 1
            for k in range(d - 1):
                res = micro(k)
                cores[k], R = _block_left_orth(cores[k], pattern, k)
                cores[k + 1] = np.einsum("ab,bnc->anc", R, cores[k + 1])
                lefts[k + 1] = contract(k, lefts[k])
            for k in range(d - 1, 0, -1):
                res = micro(k)
                cores[k], L = _block_right_orth(cores[k], pattern, k)
                cores[k - 1] = np.einsum("anb,bc->anc", cores[k - 1], L)
                rights[k] = contract(k, rights[k + 1], right=True)
            res = micro(0)
            rel = res / ynorm
            history.append(rel)
            if rel == 0.0 or (np.isfinite(prev) and prev - rel < stop_tol * max(prev, 1e-300)) \
                    or rel < stop_tol:
                converged = True
                break
            prev = rel
    train = TensorTrain([np.where(m, c, 0.0) for m, c in zip(masks, cores)])
    ftt = FunctionalTT(train, bases)
    cpu = time.perf_counter() - t0
    pred = ftt(x)
    stats = FitStats(err_train_2=err2(pred, y) if ynorm > 0 else float(np.linalg.norm(pred)),
                     dofs=pattern.free_parameters(), n_train_samples=N, cpu_train_s=cpu,
                     sweeps=sweeps, final_ranks=train.ranks, converged=converged,
                     regularized=regularized,
                     extra={"history": history, "tt_dofs": train.cores and sum(c.size for c in train.cores)})
    return ftt, stats
