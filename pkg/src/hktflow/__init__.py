"""Parabolic flows of quaternionic Hessian type on flat tori.

Spectral discretization of d/dt phi = f(eigenvalues(Omega + Hess phi)) - h
for the concave symmetric operators f (log sigma_k, log Moore determinant,
Hessian quotients, averaged-eigenvalue), with admissibility tracking,
convergence diagnostics, and bit-exact checkpoint/resume.
"""

from .cones import (
    OperatorSpec,
    cone_contains,
    csub_margin,
    f_gradient,
    f_value,
    log_ma,
    log_quotient,
    log_sigma_k,
    n_minus_one_psh,
    sigma,
    t_map,
)
from .fields import (
    Mode,
    ModeSum,
    ScalarField,
    TorusGrid,
    crf_derivative,
    grad_sup_norm,
    manufacture_h,
    mean,
    osc,
    q_hessian,
    q_laplacian,
    sup_norm,
)
from .flow import (
    FlowProblem,
    FlowResult,
    FlowState,
    assemble_A,
    normalize,
    propose_dt,
    rhs,
    run,
    step,
)
from .quat import (
    HyperhermitianMatrix,
    complex_adjoint,
    eigenvalues,
    moore_det,
    quat_mul,
    real_hessian_comparison,
)

__version__ = "0.1.0"
