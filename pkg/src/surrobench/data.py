"""Regression datasets and the fit statistics shared by all fitters."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class Dataset:
    """Sample points with target values and (optionally) target gradients."""

    x: np.ndarray
    y: np.ndarray
    grad: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.x.ndim != 2:
            self.x = self.x.reshape(len(self.y), -1)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.x.shape[0]} points but {self.y.shape[0]} values")
        if self.grad is not None:
            self.grad = np.asarray(self.grad, dtype=float).reshape(self.x.shape)

    def __len__(self):
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        g = None if self.grad is None else self.grad[idx]
        return Dataset(self.x[idx], self.y[idx], g)

    def split(self, fraction: float, rng=None) -> tuple["Dataset", "Dataset"]:
        """Random (train, holdout) split with ``fraction`` of points held out."""
        rng = np.random.default_rng(rng)
        perm = rng.permutation(len(self))
        n_hold = int(round(fraction * len(self)))
        return self.subset(perm[n_hold:]), self.subset(perm[:n_hold])


@dataclass
class FitStats:
    err_train_2: float = float("nan")
    dofs: int = 0
    n_train_samples: int = 0
    cpu_train_s: float = 0.0
    sweeps: int = 0
    final_ranks: tuple = ()
    converged: bool = True
    regularized: bool = False
    extra: dict = field(default_factory=dict)

    def report_fields(self) -> dict:
        return {
            "err_train_2": self.err_train_2,
            "dofs": self.dofs,
            "n_train_samples": self.n_train_samples,
            "cpu_train_s": self.cpu_train_s,
            "sweeps": self.sweeps,
            "final_ranks": "-".join(str(r) for r in self.final_ranks),
        }
