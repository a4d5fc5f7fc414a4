"""Generalized analytic vectors on a grid: Cauchy-Green transform, Pascali
operator, integral-equation solver and Runge, Mergelyan and Carleman type
approximation."""

from .grid import Grid, GridFunction, Mask, sample, sup_norm, c1_norm_proxy, dbar_fd
from .expr import parse, evaluate, to_text, ParseError, EvalError
from .cauchy_green import CauchyGreenOperator, cg_apply, cg_apply_adjoint, cg_residual
from .operator import CoefficientField, dbar_B, dbar_B_adjoint, bilinear_pairing
from .solver import (
    PascaliSolver,
    ConvergenceError,
    right_inverse_dbar,
    correct_to_solution,
    build_formal_powers,
    runge_approximate,
    runge_fit,
    similarity_diagnostic,
)
from .geometry import (
    CompactDomain,
    JordanArc,
    AdmissibleSet,
    validate_admissible,
    make_cutoff,
    extend_smooth,
    arc_extend,
)

__version__ = "0.1.0"
