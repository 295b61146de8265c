"""Rank-structured solver for elliptic optimal control equations.

Assembles low-Kronecker-rank elliptic operators with separable variable
coefficients, solves the reduced control equation by truncated
preconditioned CG with spectrally equivalent low-rank preconditioners, and
ships the experiment harness that reproduces the iteration/rank/convergence
studies.
"""

from .cascadic import (
    CascadicResult,
    GridLadder,
    cascadic_solve,
    prolongate_1d,
    prolongate_lowrank,
    spline_resample,
)
from .kronop import (
    GridSpec,
    KroneckerOperator,
    SeparableCoefficient,
    apply_operator,
    apply_operator_squared,
    assemble_1d_lumped_mass,
    assemble_1d_stiffness,
    assemble_stiffness,
)
from .lowrank import (
    CanonicalTensor3,
    LowRankMatrix,
    axpy,
    from_dense,
    hadamard_scale,
    inner,
    norm,
    to_dense,
    truncate,
)
from .oracle import (
    DenseProblem,
    dense_assemble,
    dense_solve_control,
    dense_solve_state,
    estimate_condition,
    intergrid_ratio,
    materialize_operator,
)
from .pcg import (
    SolveConfig,
    SolveStats,
    pcg_solve,
    solve_control_modified,
    solve_control_primal,
    solve_state,
)
from .problems import (
    gaussian_rhs,
    load_coefficient,
    preset_coefficient,
    save_coefficient,
    test1_coefficient,
    test2_coefficient,
)
from .spectral import (
    AveragedData,
    DiagonalizedBasis,
    SpectralPreconditioner,
    apply_preconditioner,
    build_A1,
    build_A2,
    build_preconditioner,
    compute_averaged_data,
    diagonalize,
)

__version__ = "0.1.0"
