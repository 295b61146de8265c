"""Assembly and application of Kronecker-structured elliptic operators.

The diffusion coefficient is a rank-R sum of separable positive factors.
Each coefficient term contributes d Kronecker products per the usual
tensor-product FE structure: a 1D stiffness factor in one slot and lumped
mass diagonals in the others.  With FD normalization the whole operator is
scaled by h^{-d} (each mass diagonal divided by h), so a unit coefficient
reproduces the classical finite-difference Laplacian exactly.

Application to low-rank grid functions never forms the dense operator: each
term maps factor panels through its small per-dimension matrices and the
results are concatenated, giving output rank (#terms) * (input rank) before
truncation.
"""

from dataclasses import dataclass, field

import numpy as np

from .lowrank import CanonicalTensor3, LowRankMatrix, truncate

# Two-point Gauss nodes on the reference element [0, 1].
_GAUSS2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


@dataclass(frozen=True)
class TriDiag:
    """Symmetric tridiagonal factor: diagonal and off-diagonal bands."""

    diag: np.ndarray  # (n,)
    off: np.ndarray   # (n-1,)

    @property
    def n(self):
        return len(self.diag)

    def matmul(self, panel):
        out = self.diag[:, None] * panel
        if self.n > 1:
            out[:-1] += self.off[:, None] * panel[1:]
            out[1:] += self.off[:, None] * panel[:-1]
        return out

    def to_dense(self):
        return (
            np.diag(self.diag)
            + np.diag(self.off, 1)
            + np.diag(self.off, -1)
        )

    def scaled(self, c):
        return TriDiag(c * self.diag, c * self.off)


@dataclass(frozen=True)
class DiagFactor:
    """Diagonal factor."""

    values: np.ndarray

    @property
    def n(self):
        return len(self.values)

    def matmul(self, panel):
        return self.values[:, None] * panel

    def to_dense(self):
        return np.diag(self.values)

    def scaled(self, c):
        return DiagFactor(c * self.values)


def identity_factor(n):
    return DiagFactor(np.ones(n))


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid of interior points on (0,1)^d, Dirichlet."""

    ns: tuple

    def __post_init__(self):
        if not all(n >= 1 for n in self.ns):
            raise ValueError("interior point counts must be >= 1")

    @property
    def d(self):
        return len(self.ns)

    @property
    def hs(self):
        return tuple(1.0 / (n + 1) for n in self.ns)

    @property
    def total_points(self):
        return int(np.prod(self.ns))

    def nodes(self, axis):
        n = self.ns[axis]
        return np.arange(1, n + 1) * self.hs[axis]

    @staticmethod
    def square(n, d=2):
        return GridSpec((n,) * d)

    @staticmethod
    def from_level(level, d=2):
        return GridSpec.square(2**level - 1, d)


@dataclass(frozen=True)
class SeparableCoefficient:
    """Rank-R separable diffusion coefficient a(x) = sum_k prod_l a_l^k(x_l).

    factors[k][l] is a vectorized evaluator of the k-th term's univariate
    factor in dimension l on [0, 1]; every factor must be strictly positive.
    """

    d: int
    factors: tuple  # R entries, each a tuple of d callables

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if len(self.factors) == 0:
            raise ValueError("coefficient needs at least one separable term")
        for term in self.factors:
            if len(term) != self.d:
                raise ValueError("every term needs one factor per dimension")

    @property
    def rank(self):
        return len(self.factors)

    def validate_positive(self, samples=512):
        x = np.linspace(0.0, 1.0, samples)
        for k, term in enumerate(self.factors):
            for ell, f in enumerate(term):
                vals = np.asarray(f(x), dtype=float)
                if not np.all(vals > 0.0):
                    bad = x[int(np.argmin(vals))]
                    raise ValueError(
                        f"coefficient factor (term {k}, dim {ell}) is not "
                        f"strictly positive near x={bad:.4f}"
                    )


@dataclass(frozen=True)
class KroneckerOperator:
    """Sum of Kronecker products of small symmetric per-dimension factors."""

    terms: tuple  # each term: tuple of d factors (TriDiag or DiagFactor)
    ns: tuple = field(default=None)

    def __post_init__(self):
        if len(self.terms) == 0:
            raise ValueError("operator needs at least one term")
        sizes = tuple(f.n for f in self.terms[0])
        for term in self.terms:
            if tuple(f.n for f in term) != sizes:
                raise ValueError("all terms must share per-dimension sizes")
        if self.ns is None:
            object.__setattr__(self, "ns", sizes)
        elif tuple(self.ns) != sizes:
            raise ValueError("declared grid sizes disagree with the factors")

    @property
    def d(self):
        return len(self.ns)

    @property
    def kron_rank(self):
        return len(self.terms)


def _eval_factor(fn, x):
    vals = np.asarray(fn(x), dtype=float)
    if vals.shape != x.shape:
        vals = np.broadcast_to(vals, x.shape).astype(float)
    return vals


def assemble_1d_stiffness(coeff_factor, n, h) -> TriDiag:
    """SPD Dirichlet stiffness factor with FD (1/h^2) scaling.

    diag_i = (a_{i-1/2} + a_{i+1/2})/h^2 and off_i = -a_{i+1/2}/h^2 where
    a_{i+1/2} samples the coefficient at element midpoints (i+1/2)h,
    i = 0..n, including the boundary half cells.
    """
    mid = (np.arange(n + 1) + 0.5) * h
    a = _eval_factor(coeff_factor, mid)
    if not np.all(a > 0.0):
        bad = mid[int(np.argmin(a))]
        raise ValueError(f"non-positive coefficient sample at x={bad:.4f}")
    diag = (a[:-1] + a[1:]) / h**2
    off = -a[1:-1] / h**2
    return TriDiag(diag, off)


def assemble_1d_lumped_mass(coeff_factor, n, h) -> np.ndarray:
    """Row sums of the weighted tridiagonal mass matrix, by 2-point Gauss.

    d_i = s_{i,i-1} + s_{i,i} + s_{i,i+1} with s_{mu,nu} = int a psi_mu psi_nu
    integrated elementwise by two-point Gauss quadrature.  The couplings to
    the eliminated boundary hat functions are kept in the row sums, so a
    constant coefficient gives d_i = a*h exactly for every i (otherwise the
    constant-coefficient operator would not reduce to the FD Laplacian).
    """
    g1, g2 = _GAUSS2
    nodes = np.arange(n + 1) * h  # left endpoints of the n+1 elements
    x1 = nodes + g1 * h
    x2 = nodes + g2 * h
    a1 = _eval_factor(coeff_factor, x1)
    a2 = _eval_factor(coeff_factor, x2)
    if not (np.all(a1 > 0.0) and np.all(a2 > 0.0)):
        both = np.concatenate([a1, a2])
        xs = np.concatenate([x1, x2])
        bad = xs[int(np.argmin(both))]
        raise ValueError(f"non-positive coefficient sample at x={bad:.4f}")
    # per element j: rising hat t, falling hat (1-t)
    off = 0.5 * h * (a1 * g1 * (1 - g1) + a2 * g2 * (1 - g2))      # psi_j psi_{j+1}
    diag_rise = 0.5 * h * (a1 * g1**2 + a2 * g2**2)                # psi_{j+1}^2
    diag_fall = 0.5 * h * (a1 * (1 - g1) ** 2 + a2 * (1 - g2) ** 2)  # psi_j^2
    # interior node i sees element i-1 (rising) and element i (falling)
    return off[:-1] + diag_rise[:-1] + diag_fall[1:] + off[1:]


def assemble_stiffness(
    coeff: SeparableCoefficient, grid: GridSpec, fd_normalize=True
) -> KroneckerOperator:
    """Kronecker rank-(d*R) stiffness operator for a separable coefficient.

    Term (k, l) carries the 1D stiffness of factor a_l^k in slot l and the
    lumped mass diagonals of the other factors elsewhere.  With fd_normalize
    each mass diagonal is divided by h, which together with the 1/h^2 in the
    stiffness factors realizes the h^{-d} FD scaling.
    """
    if coeff.d != grid.d:
        raise ValueError("coefficient and grid dimensions differ")
    d = grid.d
    stiff = [
        [assemble_1d_stiffness(coeff.factors[k][m], grid.ns[m], grid.hs[m])
         for m in range(d)]
        for k in range(coeff.rank)
    ]
    mass = [
        [assemble_1d_lumped_mass(coeff.factors[k][m], grid.ns[m], grid.hs[m])
         for m in range(d)]
        for k in range(coeff.rank)
    ]
    terms = []
    for k in range(coeff.rank):
        for ell in range(d):
            factors = []
            for m in range(d):
                if m == ell:
                    factors.append(stiff[k][m])
                else:
                    dm = mass[k][m]
                    if fd_normalize:
                        dm = dm / grid.hs[m]
                    factors.append(DiagFactor(dm))
            terms.append(tuple(factors))
    return KroneckerOperator(tuple(terms), grid.ns)


def laplacian_factor(n, h, weight=1.0) -> TriDiag:
    """FD Dirichlet Laplacian factor weight * (1/h^2) tridiag(-1, 2, -1)."""
    return TriDiag(
        np.full(n, 2.0 * weight / h**2), np.full(n - 1, -weight / h**2)
    )


def apply_operator(op: KroneckerOperator, x, eps=None):
    """Factorized operator application; truncate afterwards if eps is given.

    Output rank is (#terms) * rank(x) before truncation.  Truncation is only
    available for 2D input.
    """
    if isinstance(x, LowRankMatrix):
        if op.d != 2 or op.ns != x.shape:
            raise ValueError(f"operator grid {op.ns} does not match {x.shape}")
        if x.rank == 0:
            return x
        lefts = [term[0].matmul(x.left) for term in op.terms]
        rights = [term[1].matmul(x.right) for term in op.terms]
        out = LowRankMatrix(np.hstack(lefts), np.hstack(rights))
        if eps is not None:
            out = truncate(out, eps)
        return out
    if isinstance(x, CanonicalTensor3):
        if op.d != 3 or op.ns != x.shape:
            raise ValueError(f"operator grid {op.ns} does not match {x.shape}")
        if eps is not None:
            raise ValueError("rank truncation is not supported for 3D tensors")
        if x.rank == 0:
            return x
        panels = tuple(
            np.hstack([term[ell].matmul(x.factors[ell]) for term in op.terms])
            for ell in range(3)
        )
        return CanonicalTensor3(panels)
    raise TypeError(f"unsupported operand type {type(x).__name__}")


def apply_operator_squared(op: KroneckerOperator, x: LowRankMatrix, eps):
    """A(Ax) by the Horner scheme with truncation between the two products."""
    if not isinstance(x, LowRankMatrix):
        raise TypeError("squared application is 2D only")
    return apply_operator(op, apply_operator(op, x, eps), eps)
