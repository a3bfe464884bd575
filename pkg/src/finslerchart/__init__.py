"""Chart-local computations for even-dimensional pseudo-Finsler metrics.

The package parses closed-form metric data on a slit tangent chart,
differentiates it exactly, builds the adapted frame of a nonlinear
connection with its almost hypercomplex structure, constructs the induced
families of Finsler connections along two independent routes, and verifies
every identity they are supposed to satisfy.
"""

from .calculus import ChartPoint, EvaluationDomainError, Jet2, delta_derivative, \
    eval_jet2, eval_scalar
from .connections import DEFAULT_TOLERANCES, FullConnectionCoeffs, PointData, \
    TorsionTensor, VerificationReport, VerticalConnectionCoeffs, build_D, build_Da, \
    coeffs_closed_form, koszul_solve, metricity_residual, point_data, torsion_Da, \
    verify_all, verify_points
from .expr import ExpressionError, FieldSet, LoadedConfig, Node, ValidationError, \
    differentiate, load_config, parse_expression, to_source, validate_fieldset
from .hypercomplex import HypercomplexTriple, build_triple, \
    check_projection_identities, preserves_splitting, quaternion_identities_hold
from .metric import DegenerateMetricError, HomogeneityReport, VerticalMetric, \
    check_homogeneity, check_signature, fundamental_tensor
from .nlconn import FrameBrackets, NonlinearConnection, canonical_connection, \
    connection_for, frame_brackets, project, user_connection

__version__ = "0.1.0"

__all__ = [
    "ChartPoint", "Jet2", "EvaluationDomainError", "eval_jet2", "eval_scalar",
    "delta_derivative",
    "Node", "ExpressionError", "ValidationError", "parse_expression", "to_source",
    "differentiate", "FieldSet", "validate_fieldset", "LoadedConfig", "load_config",
    "VerticalMetric", "HomogeneityReport", "DegenerateMetricError",
    "fundamental_tensor", "check_homogeneity", "check_signature",
    "NonlinearConnection", "FrameBrackets", "canonical_connection",
    "user_connection", "connection_for", "frame_brackets", "project",
    "HypercomplexTriple", "build_triple", "quaternion_identities_hold",
    "check_projection_identities", "preserves_splitting",
    "VerticalConnectionCoeffs", "FullConnectionCoeffs", "TorsionTensor",
    "PointData", "point_data", "coeffs_closed_form", "koszul_solve",
    "metricity_residual", "build_Da", "torsion_Da", "build_D",
    "VerificationReport", "DEFAULT_TOLERANCES", "verify_all", "verify_points",
    "__version__",
]
