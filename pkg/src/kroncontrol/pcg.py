"""Truncated preconditioned conjugate gradients in low-rank format.

The iteration follows the classical PCG recurrences with a rank truncation
after every operator application and every vector update (sites labeled
S, X, R, Z, P in the per-step rank trace).  On top of it sit the two
reduced control-equation formulations: the polynomial system
(gamma*A^2 + I) u = A f solved directly, and the primal system
(gamma*A + A^{-1}) u = f whose matrix action embeds an inner solve with A.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .kronop import (
    GridSpec,
    KroneckerOperator,
    SeparableCoefficient,
    apply_operator,
    apply_operator_squared,
)
from .lowrank import LowRankMatrix, axpy, inner, norm, scale, truncate

GENERATOR_STYLES = ("laplacian", "averaged")

# Recompute R = B - matvec(X) from scratch this often to wash out the
# drift that repeated truncated updates accumulate.
_RESIDUAL_REFRESH = 25


@dataclass
class SolveConfig:
    """Tolerances and limits for the truncated PCG iteration."""

    eps_pcg: float = 1e-7
    eps_trunc: float = 1e-8
    c0: float = 0.1
    k_max: int = 200
    gamma: float = 1.0
    inner_eps: float | None = None  # embedded-solve tolerance; 0.1*eps_pcg

    def __post_init__(self):
        if not (0.01 <= self.c0 <= 0.1):
            raise ValueError("coupling constant c0 must lie in [0.01, 0.1]")
        if not (0.0 < self.eps_trunc <= self.c0 * self.eps_pcg * (1 + 1e-12)):
            raise ValueError(
                "need 0 < eps_trunc <= c0 * eps_pcg "
                f"(got {self.eps_trunc} vs {self.c0 * self.eps_pcg})"
            )
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.inner_eps is None:
            self.inner_eps = 0.1 * self.eps_pcg


@dataclass
class SolveStats:
    """Per-iteration record of a truncated PCG run."""

    iterations: int = 0
    residuals: list = field(default_factory=list)
    rank_trace: list = field(default_factory=list)  # (iter, site, rank)
    iter_times: list = field(default_factory=list)
    total_time: float = 0.0
    converged: bool = False
    messages: list = field(default_factory=list)
    inner_iterations: int = 0
    restarts: int = 0
    initial_guess_rank: int = 0
    solution_rank: int = 0
    accumulated_time: float | None = None

    @property
    def final_residual(self):
        return self.residuals[-1] if self.residuals else np.inf


def pcg_solve(matvec, precond, rhs: LowRankMatrix, x0: LowRankMatrix,
              cfg: SolveConfig):
    """Truncated PCG for matvec(X) = rhs, preconditioned by precond.

    Stops when ||R||_F / ||rhs||_F <= eps_pcg.  A non-positive <P, S>
    (conjugacy destroyed by truncation) triggers one automatic restart with
    eps_trunc/10; hitting k_max returns the best iterate seen, flagged in
    stats.messages.
    """
    rhs_norm = norm(rhs)
    if rhs_norm == 0.0:
        raise ValueError("right-hand side is zero")
    stats = SolveStats(initial_guess_rank=x0.rank)
    eps = cfg.eps_trunc
    t_start = time.perf_counter()

    for attempt in range(2):
        x = x0
        r = truncate(axpy(-1.0, matvec(x), rhs), eps) if x.rank else rhs
        z = truncate(precond(r), eps)
        stats.rank_trace.append((0, "Z", z.rank))
        p = z
        stats.rank_trace.append((0, "P", p.rank))
        rz = inner(r, z)
        best = (np.inf, x)
        failed = False
        for k in range(cfg.k_max):
            t_iter = time.perf_counter()
            s = truncate(matvec(p), eps)
            stats.rank_trace.append((k + 1, "S", s.rank))
            ps = inner(p, s)
            if ps <= 0.0:
                if attempt == 0:
                    eps = cfg.eps_trunc / 10.0
                    stats.restarts += 1
                    stats.messages.append(
                        f"<P,S> = {ps:.3e} <= 0 at iteration {k + 1}; "
                        f"restarting with eps_trunc = {eps:.1e}"
                    )
                else:
                    stats.messages.append(
                        f"<P,S> = {ps:.3e} <= 0 after restart; giving up"
                    )
                failed = True
                break
            alpha = rz / ps
            x = truncate(axpy(alpha, p, x), eps)
            stats.rank_trace.append((k + 1, "X", x.rank))
            if (k + 1) % _RESIDUAL_REFRESH == 0:
                r = truncate(axpy(-1.0, matvec(x), rhs), eps)
            else:
                r = truncate(axpy(-alpha, s, r), eps)
            stats.rank_trace.append((k + 1, "R", r.rank))
            rel = norm(r) / rhs_norm
            stats.residuals.append(rel)
            stats.iter_times.append(time.perf_counter() - t_iter)
            stats.iterations = k + 1
            if rel < best[0]:
                best = (rel, x)
            if rel <= cfg.eps_pcg:
                stats.converged = True
                break
            z = truncate(precond(r), eps)
            stats.rank_trace.append((k + 1, "Z", z.rank))
            rz_next = inner(r, z)
            beta = rz_next / rz
            rz = rz_next
            p = truncate(axpy(beta, p, z), eps)
            stats.rank_trace.append((k + 1, "P", p.rank))
        if stats.converged or not failed:
            break
        # restart resets the per-attempt record but keeps messages/counters
        stats.residuals.clear()
        stats.rank_trace.clear()
        stats.iter_times.clear()
        stats.iterations = 0

    if not stats.converged:
        if best[0] < np.inf:
            x = best[1]
        stats.messages.append(
            f"not converged after {stats.iterations} iterations "
            f"(best relative residual {best[0]:.3e})"
        )
    stats.total_time = time.perf_counter() - t_start
    stats.solution_rank = x.rank
    return x, stats


def _build_control_preconditioner(coeff, grid, cfg, kind,
                                  generator="averaged", precond_rank=None):
    if generator not in GENERATOR_STYLES:
        raise ValueError(f"unknown generator style {generator!r}")
    avg = spectral.compute_averaged_data(coeff, grid)
    gen = (spectral.build_A1(grid, avg) if generator == "laplacian"
           else spectral.build_A2(grid, coeff, avg))
    basis = spectral.diagonalize(gen)
    rank = precond_rank or spectral.DEFAULT_MULTIPLIER_RANK
    return spectral.build_preconditioner(
        basis, kind, gamma=cfg.gamma, rank=rank
    )


def solve_control_modified(
    a_op: KroneckerOperator,
    coeff: SeparableCoefficient,
    grid: GridSpec,
    f_rhs: LowRankMatrix,
    cfg: SolveConfig,
    generator: str = "averaged",
    precond_rank: int | None = None,
    x0: LowRankMatrix | None = None,
):
    """Solve (gamma*A^2 + I) u = A f by truncated PCG.

    generator="averaged" preconditions with the variable-coefficient
    averaged operator (the S2 style), "laplacian" with the anisotropic
    Laplacian (S1 style).
    """
    eps = cfg.eps_trunc
    rhs = apply_operator(a_op, f_rhs, eps)

    def matvec(x):
        ax2 = apply_operator_squared(a_op, x, eps)
        return truncate(axpy(1.0, x, scale(cfg.gamma, ax2)), eps)

    precond = _build_control_preconditioner(
        coeff, grid, cfg, "modified", generator, precond_rank
    )
    x0 = x0 if x0 is not None else LowRankMatrix.zero(*rhs.shape)
    u, stats = pcg_solve(
        matvec, lambda r: spectral.apply_preconditioner(precond, r), rhs, x0, cfg
    )
    return u, stats


def solve_control_primal(
    a_op: KroneckerOperator,
    coeff: SeparableCoefficient,
    grid: GridSpec,
    f_rhs: LowRankMatrix,
    cfg: SolveConfig,
    generator: str = "averaged",
    precond_rank: int | None = None,
    x0: LowRankMatrix | None = None,
):
    """Solve (gamma*A + A^{-1}) u = f with an embedded inner solve for A^{-1}.

    The outer preconditioner inverts gamma*G + G^{-1} of the generator (the
    B1/B2 styles); each matrix action solves A y = x by an inner truncated
    PCG with the reciprocal preconditioner at cfg.inner_eps.
    """
    eps = cfg.eps_trunc
    rank = precond_rank or spectral.DEFAULT_MULTIPLIER_RANK
    outer = _build_control_preconditioner(
        coeff, grid, cfg, "primal", generator, precond_rank
    )
    inner_pc = spectral.build_preconditioner(
        outer.basis, "reciprocal", gamma=cfg.gamma, rank=rank
    )
    inner_cfg = SolveConfig(
        eps_pcg=cfg.inner_eps,
        eps_trunc=min(cfg.eps_trunc, cfg.c0 * cfg.inner_eps),
        c0=cfg.c0,
        k_max=cfg.k_max,
        gamma=cfg.gamma,
    )
    inner_counter = [0]

    def inverse_apply(x):
        y, inner_stats = pcg_solve(
            lambda v: apply_operator(a_op, v, inner_cfg.eps_trunc),
            lambda r: spectral.apply_preconditioner(inner_pc, r),
            x,
            LowRankMatrix.zero(*x.shape),
            inner_cfg,
        )
        inner_counter[0] += inner_stats.iterations
        if not inner_stats.converged:
            raise RuntimeError(
                "embedded solve for A y = u did not converge: "
                + "; ".join(inner_stats.messages)
            )
        return y

    def matvec(x):
        ax = apply_operator(a_op, x, eps)
        return truncate(axpy(cfg.gamma, ax, inverse_apply(x)), eps)

    x0 = x0 if x0 is not None else LowRankMatrix.zero(*f_rhs.shape)
    u, stats = pcg_solve(
        matvec, lambda r: spectral.apply_preconditioner(outer, r), f_rhs, x0, cfg
    )
    stats.inner_iterations = inner_counter[0]
    return u, stats


def solve_state(
    a_op: KroneckerOperator,
    coeff: SeparableCoefficient,
    grid: GridSpec,
    u: LowRankMatrix,
    cfg: SolveConfig,
    generator: str = "averaged",
    precond_rank: int | None = None,
):
    """Recover the optimal state y from A y = u."""
    if u.rank == 0:
        return u, SolveStats(converged=True)
    precond = _build_control_preconditioner(
        coeff, grid, cfg, "reciprocal", generator, precond_rank
    )
    return pcg_solve(
        lambda v: apply_operator(a_op, v, cfg.eps_trunc),
        lambda r: spectral.apply_preconditioner(precond, r),
        u,
        LowRankMatrix.zero(*u.shape),
        cfg,
    )
