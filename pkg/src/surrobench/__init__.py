"""Surrogate models for high-dimensional regression and feedback control."""
from .basis import BasisSpec, QuadratureRule, eval_basis_derivative, eval_basis_vector, gauss_legendre_rule
from .bstt import BlockPattern, DegreeProfile, block_structure, bs_als_fit
from .control import (CareSolution, SDRELaw, SemilinearModel, SurrogateLaw, Trajectory, TwoBoxesLaw,
                      integrate_closed_loop, sdre_feedback, solve_care, surrogate_feedback,
                      trajectory_cost, two_boxes_feedback)
from .cross import CrossConfig, IndexSets, OracleFunction, fit_gradient_cross, local_ls_update, maxvol
from .data import Dataset, FitStats
from .kernels import KernelSpec, KernelSurrogate, fit_interpolant, halton_points, kernel_eval, predict, predict_grad
from .metrics import err2, err_cost
from .tt import (FunctionalTT, TensorTrain, tt_dofs, tt_eval, tt_grad, tt_orthogonalize, tt_round,
                 tt_to_dense)

__version__ = "0.1.0"
