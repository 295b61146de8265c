"""Factored low-rank representation of grid functions.

A function on an n1 x n2 tensor grid is stored as a pair of factor panels
``(left, right)`` whose represented value is ``left @ right.T``.  Rank zero
(empty panels) is the canonical zero function.  All operations here are pure:
they never mutate their inputs, so values can be shared freely between
threads.

3D grid functions are supported in canonical form (three factor panels with
a common column count) for operator application only; there is no 3D
truncation.
"""

from dataclasses import dataclass

import numpy as np

# Materialization guard for to_dense/from_dense (oracle bridge only).
DENSE_ENTRY_CAP = 10_000_000


@dataclass(frozen=True)
class LowRankMatrix:
    """Grid function left @ right.T with factor panels of equal rank."""

    left: np.ndarray   # (n1, r)
    right: np.ndarray  # (n2, r)

    def __post_init__(self):
        if self.left.ndim != 2 or self.right.ndim != 2:
            raise ValueError("factor panels must be 2-d arrays")
        if self.left.shape[1] != self.right.shape[1]:
            raise ValueError(
                f"panel ranks differ: {self.left.shape[1]} vs {self.right.shape[1]}"
            )

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[0])

    @property
    def rank(self):
        return self.left.shape[1]

    @staticmethod
    def zero(n1, n2):
        return LowRankMatrix(np.zeros((n1, 0)), np.zeros((n2, 0)))

    @staticmethod
    def from_rank_one(u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return LowRankMatrix(u.reshape(-1, 1), v.reshape(-1, 1))


@dataclass(frozen=True)
class CanonicalTensor3:
    """Sum of r rank-one terms u1_j x u2_j x u3_j on an n1 x n2 x n3 grid."""

    factors: tuple  # three (n_l, r) panels

    def __post_init__(self):
        if len(self.factors) != 3:
            raise ValueError("need exactly three factor panels")
        ranks = {f.shape[1] for f in self.factors}
        if len(ranks) > 1:
            raise ValueError(f"panel ranks differ: {ranks}")

    @property
    def shape(self):
        return tuple(f.shape[0] for f in self.factors)

    @property
    def rank(self):
        return self.factors[0].shape[1]

    def to_dense(self):
        n1, n2, n3 = self.shape
        if n1 * n2 * n3 > DENSE_ENTRY_CAP:
            raise ValueError("grid too large to materialize")
        if self.rank == 0:
            return np.zeros(self.shape)
        return np.einsum("ir,jr,kr->ijk", *self.factors)


def _check_same_shape(x, y):
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")


def truncate(x: LowRankMatrix, eps_rel: float, rank_max=None) -> LowRankMatrix:
    """Recompress x to minimal rank with relative Frobenius error <= eps_rel.

    Both panels are QR-orthogonalized, the small core is SVD-ed and trailing
    singular values are dropped while their tail mass stays below
    eps_rel * ||x||_F.  Singular values are folded into the left panel, so the
    result has orthogonal left columns and orthonormal right columns.
    """
    if eps_rel <= 0:
        raise ValueError("eps_rel must be positive")
    n1, n2 = x.shape
    if x.rank == 0:
        return x
    ql, rl = np.linalg.qr(x.left)
    qr_, rr = np.linalg.qr(x.right)
    u, s, vt = np.linalg.svd(rl @ rr.T)
    # singular values below the representational roundoff of the factored
    # form are numerically zero (exact cancellations leave such residue)
    gross = np.linalg.norm(rl) * np.linalg.norm(rr)
    floor = max(n1, n2) * np.finfo(float).eps * gross
    total = np.sqrt((s[s > floor] ** 2).sum())
    if total == 0.0:
        return LowRankMatrix.zero(n1, n2)
    # smallest k whose discarded tail obeys the relative bound
    tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]  # tail[k] = ||s[k:]||
    threshold = max(eps_rel * total, floor)
    keep = int(np.searchsorted(tail[::-1], threshold, side="right"))
    keep = len(s) - keep
    if rank_max is not None:
        keep = min(keep, rank_max)
    if keep == 0:
        return LowRankMatrix.zero(n1, n2)
    return LowRankMatrix(ql @ (u[:, :keep] * s[:keep]), qr_ @ vt[:keep].T)


def axpy(alpha: float, x: LowRankMatrix, y: LowRankMatrix) -> LowRankMatrix:
    """alpha*x + y by panel concatenation; exact, rank r_x + r_y."""
    _check_same_shape(x, y)
    if x.rank == 0:
        return y
    if y.rank == 0 and alpha == 1.0:
        return x
    return LowRankMatrix(
        np.hstack([alpha * x.left, y.left]), np.hstack([x.right, y.right])
    )


def scale(alpha: float, x: LowRankMatrix) -> LowRankMatrix:
    return LowRankMatrix(alpha * x.left, x.right)


def inner(x: LowRankMatrix, y: LowRankMatrix) -> float:
    """Frobenius inner product from factor Gram matrices (never densifies)."""
    _check_same_shape(x, y)
    if x.rank == 0 or y.rank == 0:
        return 0.0
    return float(np.trace((x.left.T @ y.left) @ (y.right.T @ x.right)))


def norm(x: LowRankMatrix) -> float:
    return np.sqrt(max(inner(x, x), 0.0))


def hadamard_scale(x: LowRankMatrix, u, v) -> LowRankMatrix:
    """diag(u) @ x @ diag(v); rank unchanged."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n1, n2 = x.shape
    if u.shape != (n1,) or v.shape != (n2,):
        raise ValueError("scaling vector lengths do not match the grid")
    if x.rank == 0:
        return x
    return LowRankMatrix(u[:, None] * x.left, v[:, None] * x.right)


def to_dense(x: LowRankMatrix) -> np.ndarray:
    n1, n2 = x.shape
    if n1 * n2 > DENSE_ENTRY_CAP:
        raise ValueError("grid too large to materialize")
    if x.rank == 0:
        return np.zeros((n1, n2))
    return x.left @ x.right.T


def from_dense(m: np.ndarray, eps_rel: float) -> LowRankMatrix:
    """Compress a dense matrix by full SVD to relative tolerance eps_rel."""
    m = np.asarray(m, dtype=float)
    if m.size > DENSE_ENTRY_CAP:
        raise ValueError("matrix too large to compress densely")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    total = np.sqrt((s**2).sum())
    if total == 0.0:
        return LowRankMatrix.zero(*m.shape)
    tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
    keep = len(s) - int(np.searchsorted(tail[::-1], eps_rel * total, side="right"))
    if keep == 0:
        return LowRankMatrix.zero(*m.shape)
    return LowRankMatrix(u[:, :keep] * s[:keep], vt[:keep].T)
