"""Error measures used in every experiment table."""
from __future__ import annotations

import numpy as np


def err2(predictions, targets) -> float:
    """Relative l2 error sqrt(sum |y - s|^2 / sum |y|^2)."""
    s = np.asarray(predictions, dtype=float).reshape(-1)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if s.shape != y.shape or y.size == 0:
        raise ValueError(f"need equal nonempty lengths, got {s.shape} and {y.shape}")
    denom = float(np.dot(y, y))
    if denom == 0.0:
        raise ValueError("relative error undefined for all-zero targets")
    return float(np.sqrt(np.dot(y - s, y - s) / denom))


def err_cost(model, law, x0, t_final: float = 60.0, dt: float = 1e-2, reference=None) -> float:
    """|cost_SDRE(x0) - cost_law(x0)| from trapezoidal closed-loop costs.

    ``reference`` overrides the SDRE law (any feedback law object).
    """
    from .control import SDRELaw, integrate_closed_loop, trajectory_cost

    ref = SDRELaw(model) if reference is None else reference
    c_ref = trajectory_cost(integrate_closed_loop(model, ref, x0, t_final, dt))
    c_law = trajectory_cost(integrate_closed_loop(model, law, x0, t_final, dt))
    return abs(c_ref - c_law)
