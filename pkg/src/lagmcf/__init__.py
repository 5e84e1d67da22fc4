"""Lagrangian mean curvature flow of graphs through the potential equation."""

from .grid import GridSpec, ScalarField, VectorField, SymMatField, Rank3Field, gradient, hessian, third_derivatives
from .geometry import lagrangian_angle, angle_via_logdet, graph_geometry, pinch_margin, sym_eigenvalues
from .flow import FlowState, VectorFlowState, StepControl, BlowupError, potential_step, vector_step, run
from .initdata import Preset, make_preset, mollify, mollifier_sequence, parabolic_rescale, lift_decompose
from .analysis import (
    DiagnosticsSeries,
    SolitonSpec,
    convergence_check,
    decay_report,
    diagnostics,
    preservation_report,
    soliton_residual,
    special_lagrangian_residual,
)

__version__ = "0.1.0"
