"""Coarse-to-fine cascadic multigrid around the truncated PCG solver.

The ladder uses n_L = 2^L - 1 interior points so consecutive grids nest.
Each level is solved once; its solution is carried to the next level by a
one-dimensional natural cubic spline applied column-wise to both factor
panels (rank is preserved), and reused as the initial guess.  There is no
coarse-grid correction.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .kronop import GridSpec, SeparableCoefficient, assemble_stiffness
from .lowrank import LowRankMatrix, truncate
from .pcg import SolveConfig, solve_control_modified, solve_control_primal


@dataclass(frozen=True)
class GridLadder:
    """Nested levels L_min..L_max with n_L = 2^L - 1 per dimension."""

    levels: tuple
    d: int = 2

    def __post_init__(self):
        if len(self.levels) == 0:
            raise ValueError("ladder needs at least one level")
        if list(self.levels) != list(range(self.levels[0],
                                           self.levels[0] + len(self.levels))):
            raise ValueError("levels must be consecutive integers")
        if self.levels[0] < 2:
            raise ValueError("coarsest level must be at least 2")

    @staticmethod
    def from_range(l_min, l_max, d=2):
        return GridLadder(tuple(range(l_min, l_max + 1)), d)

    @property
    def grids(self):
        return [GridSpec.from_level(level, self.d) for level in self.levels]


def spline_resample(values, n_to):
    """Natural cubic spline through (0, interior values, 0), resampled.

    values may be a vector of length n_from or an (n_from, r) panel; the
    spline is built and evaluated per column.  Interior nodes are i*h with
    h = 1/(n+1); the Dirichlet zeros at x=0 and x=1 are included as knots.
    """
    values = np.asarray(values, dtype=float)
    vec_in = values.ndim == 1
    panel = values[:, None] if vec_in else values
    n_from = panel.shape[0]
    x_from = np.concatenate([[0.0], np.arange(1, n_from + 1) / (n_from + 1), [1.0]])
    x_to = np.arange(1, n_to + 1) / (n_to + 1)
    padded = np.vstack([np.zeros(panel.shape[1]), panel,
                        np.zeros(panel.shape[1])])
    out = CubicSpline(x_from, padded, axis=0, bc_type="natural")(x_to)
    return out[:, 0] if vec_in else out


def prolongate_1d(v):
    """Cubic-spline prolongation onto the next nested grid (n -> 2n+1)."""
    v = np.asarray(v, dtype=float)
    return spline_resample(v, 2 * len(v) + 1)


def prolongate_lowrank(x: LowRankMatrix) -> LowRankMatrix:
    """Columnwise spline prolongation of both panels; rank unchanged."""
    n1, n2 = x.shape
    if x.rank == 0:
        return LowRankMatrix.zero(2 * n1 + 1, 2 * n2 + 1)
    return LowRankMatrix(
        spline_resample(x.left, 2 * n1 + 1),
        spline_resample(x.right, 2 * n2 + 1),
    )


@dataclass
class LevelResult:
    level: int
    grid: GridSpec
    solution: LowRankMatrix
    stats: object
    initial_guess_rank: int


@dataclass
class CascadicResult:
    levels: list = field(default_factory=list)
    accumulated_time: float = 0.0
    wall_time: float = 0.0

    @property
    def top(self):
        return self.levels[-1]


def cascadic_solve(
    coeff: SeparableCoefficient,
    ladder: GridLadder,
    cfg: SolveConfig,
    rhs_fn,
    formulation: str = "modified",
    generator: str = "averaged",
    precond_rank: int | None = None,
    guess_rank_cap: int | None = None,
) -> CascadicResult:
    """Solve the control equation on every ladder level, coarse to fine.

    rhs_fn(grid) must return the design F on that grid as a LowRankMatrix.
    The prolongated solution of the previous level seeds each solve; set
    guess_rank_cap to truncate that guess to a fixed rank first (off by
    default, matching the untruncated rank-propagation experiments).
    """
    solver = {"modified": solve_control_modified,
              "primal": solve_control_primal}[formulation]
    result = CascadicResult()
    t0 = time.perf_counter()
    guess = None
    for level, grid in zip(ladder.levels, ladder.grids):
        a_op = assemble_stiffness(coeff, grid, fd_normalize=True)
        f_rhs = rhs_fn(grid)
        if guess is not None and guess_rank_cap is not None:
            guess = truncate(guess, cfg.eps_trunc, rank_max=guess_rank_cap)
        x0 = guess if guess is not None else LowRankMatrix.zero(*grid.ns)
        u, stats = solver(
            a_op, coeff, grid, f_rhs, cfg,
            generator=generator, precond_rank=precond_rank, x0=x0,
        )
        result.accumulated_time += stats.total_time
        result.levels.append(LevelResult(level, grid, u, stats, x0.rank))
        guess = prolongate_lowrank(u)
    result.wall_time = time.perf_counter() - t0
    return result
