"""Truncated polynomial chaos expansions with exact L2 error accounting."""

from .basis import (
    BasisSpec,
    GermSpec,
    Hermite,
    Jacobi,
    Legendre,
    basis_dimension,
    build_basis,
    eval_univariate,
    multi_indices,
)
from .errors import (
    AccuracyError,
    ArithmeticOverflowError,
    DegeneracyError,
    EvaluationError,
    InfeasibleError,
    NumericsWarning,
    PceuqError,
    QuadratureError,
    ResourceLimitError,
    SynthesisError,
    UnsupportedConfigError,
    ValidationError,
)
from .pce import (
    PceVector,
    PolynomialMap,
    TruncationError,
    augustin_bound,
    galerkin_compose,
    hermite_derivative_coeffs,
    moments,
    pce_constant,
    project,
    project_adaptive,
    square_map_errors,
    truncation_error_nonpoly,
    truncation_error_poly,
)
from .qp import (
    ActiveSet,
    KktPropagation,
    ProbePolicy,
    QpProblem,
    kkt_propagation,
    propagate,
    qp_truncation_error,
    solve_qp,
)
from .quadrature import (
    QuadraturePolicy,
    QuadratureRule,
    gauss_rule,
    inner_product,
    tensor_rule,
)
from .lti import (
    ConstraintLabel,
    LqrDesign,
    LtiSystem,
    MpcSpec,
    condense_mpc,
    demo_aircraft,
    demo_lqr,
    demo_mpc_spec,
    discretize,
    lqr_gain,
    mpc_constraint_labels,
    pce_trajectory_error,
    prediction_matrices,
    simulate,
    state_transition,
)

__version__ = "0.1.0"
