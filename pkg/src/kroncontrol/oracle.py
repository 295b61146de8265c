"""Dense and sparse reference implementations for verification.

Everything here re-derives results along an independent path: entrywise 1D
assembly loops, explicit Kronecker expansion into sparse matrices, direct
factorized solves, Lanczos condition estimates, and the intergrid
discretization-rate estimator.  Used by the test suite and the CLI's
--dense-oracle cross checks; grids are capped because these paths scale
with the full number of unknowns.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cascadic import spline_resample
from .kronop import GridSpec, KroneckerOperator, SeparableCoefficient
from .lowrank import LowRankMatrix, axpy, norm as lr_norm

SPARSE_UNKNOWN_CAP = 1_000_000
DENSE_UNKNOWN_CAP = 10_000


@dataclass
class DenseProblem:
    """Sparse system matrix with an optional dense right-hand side."""

    matrix: sp.csr_matrix
    rhs: np.ndarray | None
    ns: tuple

    @property
    def n_unknowns(self):
        return self.matrix.shape[0]


def ravel_index(multi, ns):
    """Big-endian long index: last dimension varies fastest."""
    return int(np.ravel_multi_index(multi, ns, order="C"))


def unravel_index(i, ns):
    return tuple(int(v) for v in np.unravel_index(i, ns, order="C"))


def _gauss2():
    g1 = 0.5 - 0.5 / np.sqrt(3.0)
    return g1, 1.0 - g1


def _stiffness_1d_entrywise(f, n, h):
    """Scalar-loop 1D stiffness (FD scaled), independent of kronop."""
    mat = np.zeros((n, n))
    for i in range(1, n + 2):  # elements [x_{i-1}, x_i]
        a_mid = float(f(np.array([(i - 0.5) * h]))[0])
        # element stiffness a_mid/h * [[1,-1],[-1,1]] on nodes i-1, i
        for (p, q, sign) in ((i - 1, i - 1, 1.0), (i, i, 1.0),
                             (i - 1, i, -1.0), (i, i - 1, -1.0)):
            if 1 <= p <= n and 1 <= q <= n:
                mat[p - 1, q - 1] += sign * a_mid / h
    return mat / h  # FD scaling of the stiffness slot


def _lumped_mass_1d_entrywise(f, n, h):
    """Scalar-loop lumped mass: full row sums of int a psi_i psi_j."""
    g1, g2 = _gauss2()
    d = np.zeros(n)
    for i in range(1, n + 1):
        total = 0.0
        for elem, rising in ((i - 1, True), (i, False)):
            x0 = elem * h
            for g in (g1, g2):
                x = x0 + g * h
                a = float(f(np.array([x]))[0])
                phi_i = g if rising else 1.0 - g
                total += 0.5 * h * a * phi_i  # sum_j psi_j == 1 on the element
        d[i - 1] = total
    return d


def dense_assemble(
    coeff: SeparableCoefficient, grid: GridSpec, rhs=None, fd_normalize=True
) -> DenseProblem:
    """Assemble the full operator by explicit Kronecker expansion.

    The 1D matrices are recomputed with scalar loops, so this path is
    independent of the factorized assembly in kronop.
    """
    if grid.total_points > SPARSE_UNKNOWN_CAP:
        raise ValueError("grid exceeds the sparse assembly cap")
    d = grid.d
    mat = None
    for k in range(coeff.rank):
        for ell in range(d):
            blocks = []
            for m in range(d):
                n, h = grid.ns[m], grid.hs[m]
                if m == ell:
                    blocks.append(sp.csr_matrix(
                        _stiffness_1d_entrywise(coeff.factors[k][m], n, h)))
                else:
                    dm = _lumped_mass_1d_entrywise(coeff.factors[k][m], n, h)
                    if fd_normalize:
                        dm = dm / h
                    blocks.append(sp.diags(dm).tocsr())
            term = blocks[0]
            for b in blocks[1:]:
                term = sp.kron(term, b, format="csr")
            mat = term if mat is None else mat + term
    rhs_vec = None
    if rhs is not None:
        rhs_vec = np.asarray(rhs, dtype=float).reshape(-1)
    return DenseProblem(mat.tocsr(), rhs_vec, grid.ns)


def materialize_operator(op: KroneckerOperator) -> sp.csr_matrix:
    """Sparse Kronecker expansion of an assembled operator."""
    if int(np.prod(op.ns)) > SPARSE_UNKNOWN_CAP:
        raise ValueError("grid exceeds the sparse assembly cap")
    mat = None
    for term in op.terms:
        block = sp.csr_matrix(term[0].to_dense())
        for f in term[1:]:
            block = sp.kron(block, sp.csr_matrix(f.to_dense()), format="csr")
        mat = block if mat is None else mat + block
    return mat.tocsr()


def dense_solve_control(problem: DenseProblem, gamma, formulation="modified"):
    """Direct solve of the control equation; returns u on the grid.

    modified: sparse factorization of (gamma*A^2 + I) applied to A f.
    primal:   dense (gamma*A + A^{-1}) built with an explicit inverse, so the
              two formulations are genuinely independent arithmetic paths.
    """
    if problem.rhs is None:
        raise ValueError("problem has no right-hand side")
    a = problem.matrix
    f = problem.rhs
    if formulation == "modified":
        system = (gamma * (a @ a) + sp.identity(a.shape[0], format="csr")).tocsc()
        u = spla.splu(system).solve(a @ f)
    elif formulation == "primal":
        if a.shape[0] > DENSE_UNKNOWN_CAP:
            raise ValueError("primal dense path exceeds the dense cap")
        ad = a.toarray()
        system = gamma * ad + np.linalg.inv(ad)
        u = np.linalg.solve(system, f)
    else:
        raise ValueError(f"unknown formulation {formulation!r}")
    return u.reshape(problem.ns)


def dense_solve_state(problem: DenseProblem, u):
    """Direct solve of A y = u."""
    vec = np.asarray(u, dtype=float).reshape(-1)
    y = spla.splu(problem.matrix.tocsc()).solve(vec)
    return y.reshape(problem.ns)


def estimate_condition(op_closure, dim, iters=50, seed=0):
    """Lanczos extreme-eigenvalue estimate of a symmetric PD operator.

    op_closure maps a dense vector of length dim to a dense vector.  Full
    reorthogonalization is used, so ~50 iterations give the extreme
    eigenvalues to well under the 5% slack the verification tests allow.
    """
    rng = np.random.default_rng(seed)
    iters = min(iters, dim)
    q = rng.standard_normal(dim)
    q /= np.linalg.norm(q)
    basis = [q]
    alphas, betas = [], []
    for j in range(iters):
        w = np.asarray(op_closure(basis[j]), dtype=float)
        alpha = float(basis[j] @ w)
        w = w - alpha * basis[j]
        if j > 0:
            w = w - betas[-1] * basis[j - 1]
        # full reorthogonalization
        for b in basis:
            w = w - (b @ w) * b
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        if beta < 1e-300 or j == iters - 1:
            break
        betas.append(beta)
        basis.append(w / beta)
    t = np.diag(alphas)
    if betas:
        m = len(alphas)
        t = t + np.diag(betas[: m - 1], 1) + np.diag(betas[: m - 1], -1)
    eigs = np.linalg.eigvalsh(t)
    lo, hi = float(eigs[0]), float(eigs[-1])
    if lo <= 0:
        raise RuntimeError(f"Lanczos produced a non-positive estimate {lo}")
    return hi / lo


def intergrid_ratio(u_2h: LowRankMatrix, u_h: LowRankMatrix,
                    u_h2: LowRankMatrix) -> float:
    """Intergrid error ratio ||u_2h - u_h|| / ||u_h - u_h/2|| on the h grid.

    Both outer solutions are resampled onto u_h's grid by the cubic spline
    used for prolongation (on nested grids the fine-to-middle resampling
    reduces to injection).  The ratio estimates 2^alpha for an O(h^alpha)
    discretization.
    """
    n_mid = u_h.shape
    coarse = LowRankMatrix(
        spline_resample(u_2h.left, n_mid[0]),
        spline_resample(u_2h.right, n_mid[1]),
    )
    fine = LowRankMatrix(
        spline_resample(u_h2.left, n_mid[0]),
        spline_resample(u_h2.right, n_mid[1]),
    )
    num = lr_norm(axpy(-1.0, u_h, coarse))
    den = lr_norm(axpy(-1.0, fine, u_h))
    if den == 0.0:
        raise ValueError("consecutive solutions coincide; ratio undefined")
    return num / den
