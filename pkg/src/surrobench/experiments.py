"""Experiment orchestration: one (preset, method) table cell per call."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec
from .bstt import DegreeProfile, bs_als_fit
from .control import (SDRELaw, SurrogateLaw, TwoBoxesLaw, integrate_closed_loop,
                      trajectory_cost)
from .cross import CrossConfig, OracleFunction, fit_gradient_cross
from .errors import (CareError, DomainError, FitError, InstabilityError, PivotError,
                     SingularityError)
from .kernels import KernelSpec, fit_kernel, select_shape
from .metrics import err2
from .mlp import MLPConfig, TrainConfig, train
from .problems import FOURIER_TEST_CASES, SDREValueFunction, fourier_ic, generate_dataset, get_problem
from .report import ExperimentReport

log = logging.getLogger(__name__)

METHODS = ("tt-cross", "bstt", "kernel", "nn")
CONTROLS = ("tt", "kernel-tb", "nn-tb")
TEST_SEED_OFFSET = 1_000_003
TEST_COUNT = 10_000


@dataclass
class Settings:
    """Every tunable of a run; ``None`` means the preset default."""

    dim: int = None
    seed: int = 0
    tol_stop: float = None
    gradient_weight: float = None
    nodes: int = None
    rank_cap: int = None
    max_sweeps: int = None
    degree: int = 2
    locality: int = None
    bstt_samples: int = 1900
    bstt_iters: int = 50
    shape: object = None
    family: str = None
    kernel_samples: int = None
    nn_samples: int = None
    epochs: int = 60
    hidden: tuple = (512, 512, 512, 512)
    activation: str = None
    a_tb: float = 0.2
    gamma: float = 0.1
    control: str = None
    t_final: float = 60.0
    dt: float = 1e-2
    test_count: int = TEST_COUNT
    traj_out: str = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, m: dict) -> "Settings":
        names = set(cls.__dataclass_fields__)
        unknown = set(m) - names
        if unknown:
            raise ValueError(f"unknown settings: {sorted(unknown)}")
        return cls(**m)


def _is_control(preset):
    return preset == "allencahn"


def _sampler(preset):
    return "fourier" if _is_control(preset) else "uniform"


def _bases(problem, n):
    return [BasisSpec(n, tuple(problem.domain[k])) for k in range(problem.dim)]


def _fit_tt(problem, preset, s: Settings):
    ac = _is_control(preset)
    cfg = CrossConfig(
        tol_stop=s.tol_stop or (1e-4 if ac else 1e-5),
        gradient_weight=0.0 if s.gradient_weight is None else s.gradient_weight,
        max_sweeps=s.max_sweeps or (20 if ac else 30),
        rank_cap=s.rank_cap or 20,
        seed=s.seed,
    )
    oracle = OracleFunction(value_and_grad=problem.value_and_grad)
    sur, stats = fit_gradient_cross(oracle, _bases(problem, s.nodes or (6 if ac else 7)), cfg)
    stats.extra = {"sweeps": stats.sweeps, "ranks": "-".join(map(str, stats.final_ranks)),
                   "converged": stats.converged, "n_evaluations": stats.extra["n_evaluations"],
                   "lambda": cfg.gradient_weight}
    return sur, stats


def _fit_bstt(problem, preset, s: Settings):
    data = generate_dataset(problem, _sampler(preset), s.bstt_samples, seed=s.seed, with_grad=False)
    prof = DegreeProfile(s.degree, s.locality)
    sur, stats = bs_als_fit(data, _bases(problem, s.nodes or s.degree + 1), prof,
                            max_iters=s.bstt_iters, seed=s.seed)
    stats.extra = {"sweeps": stats.sweeps, "ranks": "-".join(map(str, stats.final_ranks)),
                   "converged": stats.converged, "regularized": stats.regularized,
                   "tt_dofs": sur.dofs, "degree": s.degree, "locality": s.locality}
    return sur, stats


def _kernel_defaults(problem, preset, s):
    d = problem.dim
    if _is_control(preset):
        return s.family or "gaussian", s.kernel_samples or 5000, 1.0 / math.sqrt(d)
    count = 10000 if preset.startswith("academic") else 5000
    return s.family or "matern2", s.kernel_samples or count, 1.0 / (2 * math.sqrt(d))


def _fit_kernel(problem, preset, s: Settings):
    family, count, default_shape = _kernel_defaults(problem, preset, s)
    sampler = "fourier" if _is_control(preset) else "halton"
    data = generate_dataset(problem, sampler, count, seed=s.seed, with_grad=False)
    shape = s.shape
    val_err = None
    if shape == "select":
        d = problem.dim
        shape, val_err = select_shape(data, family, [1 / (c * math.sqrt(d)) for c in (2, 4, 8)], seed=s.seed)
    elif shape is None:
        shape = default_shape
    sur, stats = fit_kernel(data, KernelSpec(family, float(shape)), domain=problem.domain)
    stats.extra = {"shape": float(shape), "family": family, "jitter": stats.extra["jitter"]}
    if val_err is not None:
        stats.extra["validation_err_2"] = val_err
    return sur, stats


def _fit_nn(problem, preset, s: Settings):
    ac = _is_control(preset)
    sampler = "fourier" if ac else "halton"
    data = generate_dataset(problem, sampler, s.nn_samples or 5000, seed=s.seed, with_grad=False)
    act = s.activation or ("tanh" if ac else "relu")
    cfg = MLPConfig(problem.dim, tuple(s.hidden), act, seed=s.seed)
    sur, stats = train(data, cfg, TrainConfig(epochs=s.epochs, seed=s.seed))
    sur.domain = problem.domain
    hist = stats.extra["loss_history"]
    stats.extra = {"epochs": s.epochs, "activation": act, "loss_first": hist[0], "loss_last": hist[-1]}
    return sur, stats


FITTERS = {"tt-cross": _fit_tt, "bstt": _fit_bstt, "kernel": _fit_kernel, "nn": _fit_nn}


def feedback_law(model, surrogate, control: str, a_tb: float):
    if control.endswith("-tb"):
        return TwoBoxesLaw(model, surrogate, a_tb)
    return SurrogateLaw(model, surrogate)


def control_study(model, surrogate, control, s: Settings):
    """err_cost and final-state norms over the four Fourier initial conditions."""
    law = feedback_law(model, surrogate, control, s.a_tb)
    out = {}
    first = None
    for a in FOURIER_TEST_CASES:
        tag = "".join(str(v) for v in a)
        y0 = fourier_ic(a, d=model.d)
        ref = integrate_closed_loop(model, SDRELaw(model), y0, s.t_final, s.dt)
        traj = integrate_closed_loop(model, law, y0, s.t_final, s.dt)
        out[f"err_cost_{tag}"] = abs(trajectory_cost(ref) - trajectory_cost(traj))
        out[f"final_inf_{tag}"] = float(np.abs(traj.final_state).max())
        if first is None:
            first = traj
    return out, first


def run_experiment(preset: str, method: str, settings: Settings = None, **overrides) -> ExperimentReport:
    """Fit, test on fresh samples and (for control presets) run closed loops.

    Failures are recorded in ``extra['status']`` (``fit-failure`` or
    ``instability``) instead of being raised.
    """
    s = settings or Settings()
    if overrides:
        s = Settings.from_mapping({**s.__dict__, **overrides})
    if method not in FITTERS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    problem = get_problem(preset, s.dim, gamma=s.gamma)
    rep = ExperimentReport(method=method, problem=preset, dim=problem.dim)
    try:
        sur, stats = FITTERS[method](problem, preset, s)
    except (FitError, PivotError, CareError, SingularityError, np.linalg.LinAlgError) as exc:
        rep.extra = {"status": "fit-failure", "error": str(exc)}
        return rep
    rep.err_train_2 = stats.err_train_2
    rep.dofs = stats.dofs
    rep.n_train = stats.n_train_samples
    rep.cpu_train_s = stats.cpu_train_s
    rep.extra = dict(stats.extra)
    test = generate_dataset(problem, _sampler(preset), s.test_count, seed=s.seed + TEST_SEED_OFFSET,
                            with_grad=False)
    t0 = time.perf_counter()
    pred = sur(test.x)
    rep.cpu_test_s = time.perf_counter() - t0
    rep.err_test_2 = err2(pred, test.y)
    rep.extra["status"] = "ok"
    if _is_control(preset) and isinstance(problem, SDREValueFunction):
        control = s.control or {"tt-cross": "tt", "kernel": "kernel-tb", "nn": "nn-tb"}.get(method, "tt")
        try:
            res, traj = control_study(problem.model, sur, control, s)
            rep.extra.update(res)
            rep.extra["control"] = control
            if s.traj_out:
                from .report import dump_trajectory
                dump_trajectory(traj, s.traj_out)
        except (InstabilityError, DomainError) as exc:
            rep.extra.update({"status": "instability", "error": str(exc), "control": control})
    rep.extra["seed"] = s.seed
    return rep
