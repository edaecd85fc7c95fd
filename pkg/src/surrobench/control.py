"""Riccati-based feedback synthesis and closed-loop simulation.

Models are written in semilinear form ``y' = A(y) y + B(y) u`` with running
cost ``y^T Q(y) y + u^T R u``.  Feedback laws map a state to a control:

* ``SDRELaw`` freezes ``A, B, Q`` at the current state and solves the CARE,
* ``SurrogateLaw`` uses ``-1/2 R^-1 B(y)^T grad V(y)`` from a value surrogate,
* ``TwoBoxesLaw`` switches to the origin LQR gain inside ``|y| <= a_tb``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .errors import CareError, DomainError, InstabilityError

BLOWUP_NORM = 1e6


@dataclass
class CareSolution:
    P: np.ndarray
    residual_norm: float
    newton_steps: int = 0


def care_residual(A, B, Q, R, P) -> np.ndarray:
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q


def solve_care(A, B, Q, R, tolerance: float = 1e-10, max_newton: int = 20) -> CareSolution:
    """Stabilizing solution of ``A^T P + P A - P B R^-1 B^T P + Q = 0``.

    The stable invariant subspace of the Hamiltonian matrix is taken from an
    ordered real Schur form; the result is polished with Newton-Kleinman
    steps until the Frobenius residual is below ``tolerance`` (relative to
    ``max(1, |Q|_F)``) or stops improving.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    d = A.shape[0]
    G = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -G], [-Q, -A.T]])
    _, Z, sdim = sla.schur(H, output="real", sort="lhp")
    if sdim != d:
        raise CareError(f"Hamiltonian has {sdim} stable eigenvalues, need {d}; (A, B) not stabilizable?")
    U1, U2 = Z[:d, :d], Z[d:, :d]
    if np.linalg.cond(U1) > 1e12:
        raise CareError("stable subspace basis is ill-conditioned")
    P = np.linalg.solve(U1.T, U2.T).T
    P = 0.5 * (P + P.T)

    scale = max(1.0, float(np.linalg.norm(Q)))
    res = float(np.linalg.norm(care_residual(A, B, Q, R, P)))
    steps = 0
    while res > tolerance * scale and steps < max_newton:
        K = np.linalg.solve(R, B.T @ P)
        Ac = A - B @ K
        P_new = sla.solve_continuous_lyapunov(Ac.T, -(Q + K.T @ R @ K))
        P_new = 0.5 * (P_new + P_new.T)
        res_new = float(np.linalg.norm(care_residual(A, B, Q, R, P_new)))
        steps += 1
        if not np.isfinite(res_new) or res_new >= res:
            break
        P, res = P_new, res_new
    if np.linalg.eigvalsh(P).min() < -1e-10 * max(1.0, np.abs(P).max()):
        raise CareError("Riccati solution is not positive semidefinite")
    return CareSolution(P=P, residual_norm=res, newton_steps=steps)


class SemilinearModel:
    """State-dependent ``A(y), B(y), Q(y)`` and constant ``R``.

    ``care`` may be overridden by models with a cheaper exact Riccati solve;
    it must agree with ``solve_care`` on the frozen matrices.
    """

    def __init__(self, A: Callable, B: Callable, Q: Callable, R, d: int, m: Optional[int] = None,
                 name: str = "semilinear"):
        self._A, self._B, self._Q = A, B, Q
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.d = int(d)
        self.m = int(m if m is not None else self.R.shape[0])
        self.name = name

    def A(self, y):
        return np.asarray(self._A(np.asarray(y, dtype=float)), dtype=float)

    def B(self, y):
        return np.asarray(self._B(np.asarray(y, dtype=float)), dtype=float).reshape(self.d, self.m)

    def Q(self, y):
        return np.asarray(self._Q(np.asarray(y, dtype=float)), dtype=float)

    def rhs(self, y, u):
        return self.A(y) @ y + self.B(y) @ u

    def running_cost(self, y, u) -> float:
        return float(y @ self.Q(y) @ y + u @ self.R @ u)

    def care(self, y, tolerance: float = 1e-10) -> CareSolution:
        try:
            return solve_care(self.A(y), self.B(y), self.Q(y), self.R, tolerance)
        except CareError as exc:
            raise CareError(f"{exc} at state {np.array2string(np.asarray(y), precision=4)}",
                            state=np.asarray(y)) from exc

    def check(self, y, tol: float = 1e-10) -> None:
        """Raise if Q(y) is not symmetric PSD or R not symmetric PD."""
        Q = self.Q(y)
        if not np.allclose(Q, Q.T, atol=tol) or np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -tol:
            raise ValueError("Q(y) is not symmetric positive semidefinite")
        if not np.allclose(self.R, self.R.T, atol=tol) or np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("R is not symmetric positive definite")


class SDRELaw:
    """Frozen-state Riccati feedback ``-R^-1 B(y)^T P(y) y``.

    ``stride`` > 1 reuses P for that many consecutive calls (per-trajectory
    state; call ``reset`` before a new trajectory).
    """

    name = "sdre"

    def __init__(self, model: SemilinearModel, tolerance: float = 1e-10, stride: int = 1):
        self.model = model
        self.tolerance = tolerance
        self.stride = max(1, int(stride))
        self.reset()

    def reset(self):
        self._calls = 0
        self._P = None

    def riccati(self, y):
        if self._P is None or self._calls % self.stride == 0:
            self._P = self.model.care(y, self.tolerance).P
        self._calls += 1
        return self._P

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        P = self.riccati(y)
        return -np.linalg.solve(self.model.R, self.model.B(y).T @ (P @ y))


def sdre_feedback(model: SemilinearModel, y, tolerance: float = 1e-10):
    return SDRELaw(model, tolerance)(y)


def _check_box(surrogate, y):
    box = getattr(surrogate, "domain", None)
    if box is None:
        return
    box = np.asarray(box, dtype=float)
    if np.any(y < box[:, 0]) or np.any(y > box[:, 1]):
        raise DomainError("state left the surrogate training box", point=np.asarray(y))


class SurrogateLaw:
    """``-1/2 R^-1 B(y)^T grad V(y)`` from a value-function surrogate."""

    name = "surrogate"

    def __init__(self, model: SemilinearModel, surrogate):
        self.model = model
        self.surrogate = surrogate

    def reset(self):
        pass

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        _check_box(self.surrogate, y)
        g = np.asarray(self.surrogate.grad(y), dtype=float).reshape(-1)
        return -0.5 * np.linalg.solve(self.model.R, self.model.B(y).T @ g)


def surrogate_feedback(model: SemilinearModel, surrogate, y):
    return SurrogateLaw(model, surrogate)(y)


class TwoBoxesLaw:
    """Origin LQR gain for ``|y| <= a_tb``, surrogate gradient law outside."""

    name = "two-boxes"

    def __init__(self, model: SemilinearModel, surrogate, a_tb: float, P0=None):
        if a_tb <= 0:
            raise ValueError("a_tb must be positive")
        self.model = model
        self.surrogate = surrogate
        self.a_tb = float(a_tb)
        zero = np.zeros(model.d)
        self.P0 = model.care(zero).P if P0 is None else np.asarray(P0, dtype=float)
        self._inner = SurrogateLaw(model, surrogate)

    def reset(self):
        pass

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if np.linalg.norm(y) <= self.a_tb:
            return -np.linalg.solve(self.model.R, self.model.B(y).T @ (self.P0 @ y))
        return self._inner(y)


def two_boxes_feedback(model: SemilinearModel, law: TwoBoxesLaw, y):
    return law(y)


class ZeroLaw:
    name = "uncontrolled"

    def __init__(self, model: SemilinearModel):
        self.model = model

    def reset(self):
        pass

    def __call__(self, y):
        return np.zeros(self.model.m)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    running_cost: np.ndarray
    cumulative_cost: np.ndarray

    @property
    def total_cost(self) -> float:
        return float(self.cumulative_cost[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _cumtrapz(values, times):
    out = np.zeros_like(values)
    if len(values) > 1:
        out[1:] = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))
    return out


def integrate_closed_loop(model: SemilinearModel, law, x0, t_final: float, dt: float,
                          blowup: float = BLOWUP_NORM) -> Trajectory:
    """RK4 with the control held constant over each step.

    The running cost is sampled at every grid time and accumulated with the
    trapezoidal rule.  A last shorter step lands exactly on ``t_final``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if hasattr(law, "reset"):
        law.reset()
    n_full = int(math.floor(t_final / dt + 1e-9))
    times = dt * np.arange(n_full + 1, dtype=float)
    if t_final - times[-1] > 1e-9 * dt:
        times = np.append(times, float(t_final))
    else:
        times[-1] = float(t_final)
    y = np.array(x0, dtype=float)
    states = np.empty((len(times), model.d))
    controls = np.empty((len(times), model.m))
    f = model.rhs
    for i in range(len(times)):
        states[i] = y
        u = np.asarray(law(y), dtype=float).reshape(model.m)
        controls[i] = u
        if i == len(times) - 1:
            break
        h = times[i + 1] - times[i]
        k1 = f(y, u)
        k2 = f(y + 0.5 * h * k1, u)
        k3 = f(y + 0.5 * h * k2, u)
        k4 = f(y + h * k3, u)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > blowup:
            raise InstabilityError(f"{getattr(law, 'name', 'law')}: state norm exceeded {blowup:g} "
                                   f"at t={times[i + 1]:.4g}", time=float(times[i + 1]),
                                   law=getattr(law, "name", None))
    running = np.array([model.running_cost(states[i], controls[i]) for i in range(len(times))])
    return Trajectory(times, states, controls, running, _cumtrapz(running, times))


def trajectory_cost(traj: Trajectory) -> float:
    """Trapezoidal integral of the running cost samples."""
    if len(traj.times) == 0:
        raise ValueError("empty trajectory")
    return float(np.trapezoid(traj.running_cost, traj.times)) if hasattr(np, "trapezoid") \
        else float(np.trapz(traj.running_cost, traj.times))
