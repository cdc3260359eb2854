"""Proper orthogonal decomposition by the method of snapshots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from . import store

__all__ = [
    "SnapshotSet",
    "ReducedBasis",
    "RankError",
    "apply_inner",
    "correlation_matrix",
    "snapshot_eigen",
    "pod_basis",
    "project",
    "lift",
    "save_basis",
    "load_basis",
]

# full eigendecomposition up to this size, index-subset solver beyond (the
# subset solver is unreliable for eigenvalues near the round-off floor)
_FULL_EIGH_LIMIT = 6000


class RankError(ValueError):
    """More modes were requested than the snapshots numerically support."""

    def __init__(self, message, rank):
        super().__init__(message)
        self.rank = rank


def apply_inner(inner, x):
    """Apply the inner-product operator (sparse/dense matrix or weights)."""
    if inner is None:
        return x
    if sp.issparse(inner) or np.ndim(inner) == 2:
        return inner @ x
    w = np.asarray(inner)
    return w * x if x.ndim == 1 else w[:, None] * x


@dataclass(eq=False)
class SnapshotSet:
    """Snapshots stored row-wise, tagged with (time index, parameter index).

    ``inner`` is the inner-product operator: the mass matrix for finite
    element coefficient vectors, or a vector of quadrature weights when the
    snapshots are sampled at quadrature points (``space`` is then ``None``).
    """

    values: np.ndarray
    tags: np.ndarray
    params: np.ndarray
    inner: object = None
    times: np.ndarray | None = None
    initial: np.ndarray | None = None
    space: object = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.tags = np.asarray(self.tags, dtype=np.int64).reshape(-1, 2)
        self.params = np.asarray(self.params, dtype=float)
        if self.params.ndim == 1:
            self.params = self.params[:, None]
        if self.values.shape[0] < 1:
            raise ValueError("snapshot set is empty")
        if self.tags.shape[0] != self.values.shape[0]:
            raise ValueError("one (i, j) tag per snapshot required")

    @property
    def K(self):
        return self.values.shape[0]

    @property
    def size(self):
        return self.values.shape[1]

    def index(self, i, j):
        """Row of the snapshot with time index ``i`` and parameter index ``j``."""
        hit = np.flatnonzero((self.tags[:, 0] == i) & (self.tags[:, 1] == j))
        if hit.size == 0:
            raise KeyError((i, j))
        return int(hit[0])

    def with_initial(self):
        """The same set with the initial fields prepended as time index 0.

        Rows stay parameter-major.
        """
        if self.initial is None:
            raise ValueError("snapshot set carries no initial fields")
        rows, tags = [], []
        for j in range(self.params.shape[0]):
            mine = np.flatnonzero(self.tags[:, 1] == j)
            if np.any(self.tags[mine, 0] == 0):
                raise ValueError(f"parameter {j} already has a time-0 snapshot")
            rows += [self.initial[j][None, :], self.values[mine]]
            tags += [np.array([[0, j]]), self.tags[mine]]
        out = SnapshotSet(np.vstack(rows), np.vstack(tags), self.params, self.inner, self.times, self.initial, self.space)
        return out

    def quadrature_values(self):
        """Snapshot values at the quadrature points, one row per snapshot."""
        if self.space is None:
            return self.values
        return self.space.eval_quad(self.values.T).T


def correlation_matrix(snapshots):
    """``C[k, k'] = (zeta_k, zeta_k') / K`` for a SnapshotSet or raw rows."""
    if isinstance(snapshots, SnapshotSet):
        X, inner = snapshots.values, snapshots.inner
    else:
        X, inner = snapshots
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("snapshots must all have the same length")
    C = X @ apply_inner(inner, X.T) / X.shape[0]
    return 0.5 * (C + C.T)


def _fix_signs(a):
    """Make the first significant entry of every column positive."""
    for n in range(a.shape[1]):
        col = a[:, n]
        big = np.flatnonzero(np.abs(col) > 1e-8 * np.abs(col).max())
        if big.size and col[big[0]] < 0:
            a[:, n] = -col
    return a


def snapshot_eigen(C, n_modes=None):
    """Eigenpairs of a correlation matrix in decreasing order.

    Returns ``(eigenvalues, vectors, total)`` where ``total`` is the trace,
    so energy ratios are available even when only a subset was computed.
    """
    K = C.shape[0]
    total = float(np.trace(C))
    if n_modes is None or K <= _FULL_EIGH_LIMIT or n_modes >= K:
        lam, a = la.eigh(C)
    else:
        lam, a = la.eigh(C, subset_by_index=[K - n_modes, K - 1])
    lam, a = lam[::-1], a[:, ::-1]
    if lam.size and lam[0] > 0:
        lam = np.where(lam < 0, 0.0, lam)
    return lam, _fix_signs(np.ascontiguousarray(a)), total


@dataclass(eq=False)
class ReducedBasis:
    """POD basis; columns of ``vectors`` are orthonormal in ``inner``."""

    vectors: np.ndarray
    eigenvalues: np.ndarray
    coefficients: np.ndarray
    total_energy: float
    rank: int
    inner: object = field(default=None, repr=False)

    @property
    def N(self):
        return self.vectors.shape[1]

    @property
    def energy(self):
        """Fraction of snapshot energy captured by the retained modes."""
        return float(np.sum(self.eigenvalues[: self.N]) / self.total_energy) if self.total_energy > 0 else 1.0

    def truncate(self, N):
        if N > self.N:
            raise RankError(f"basis has only {self.N} modes, {N} requested", self.N)
        return ReducedBasis(self.vectors[:, :N], self.eigenvalues, self.coefficients[:, :N], self.total_energy, self.rank, self.inner)


def _orthonormalize(vectors, inner):
    G = vectors.T @ apply_inner(inner, vectors)
    if np.max(np.abs(G - np.eye(G.shape[0]))) < 1e-12:
        return vectors
    L = np.linalg.cholesky(0.5 * (G + G.T))
    return la.solve_triangular(L, vectors.T, lower=True).T


def pod_basis(snapshots: SnapshotSet, N=None, energy_tol=None, rank_tol=1e-14):
    """POD basis from the K x K correlation eigenproblem.

    Exactly one of ``N`` (number of modes) or ``energy_tol`` (largest
    admissible tail-energy ratio) may be given; with neither, all modes up
    to the numerical rank (``lambda_n > rank_tol * lambda_1``) are kept.
    """
    if N is not None and energy_tol is not None:
        raise ValueError("give N or energy_tol, not both")
    X = snapshots.values
    C = correlation_matrix(snapshots)
    want = N if (N is not None and energy_tol is None) else None
    lam, a, total = snapshot_eigen(C, want)
    rank = int(np.sum(lam > rank_tol * lam[0])) if lam[0] > 0 else 0
    if energy_tol is not None:
        tail = (total - np.cumsum(lam)) / total
        N = int(np.argmax(tail <= energy_tol)) + 1 if np.any(tail <= energy_tol) else rank
        N = min(N, rank)
    elif N is None:
        N = rank
    if N > rank:
        raise RankError(f"requested N={N} exceeds numerical rank {rank}", rank)
    if N < 1:
        raise RankError("snapshot set has numerical rank 0", rank)
    a_N = a[:, :N]
    vectors = (X.T @ a_N) / np.sqrt(X.shape[0] * lam[:N])
    vectors = _orthonormalize(vectors, snapshots.inner)
    return ReducedBasis(vectors, lam, a_N, total, rank, snapshots.inner)


def project(basis: ReducedBasis, u):
    """Reduced coefficients ``Phi^T W u`` of one field or of columns."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != basis.vectors.shape[0]:
        raise ValueError(f"field length {u.shape[0]} does not match basis length {basis.vectors.shape[0]}")
    return basis.vectors.T @ apply_inner(basis.inner, u)


def lift(basis: ReducedBasis, coeffs):
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] != basis.N:
        raise ValueError(f"expected {basis.N} reduced coefficients, got {coeffs.shape[0]}")
    return basis.vectors @ coeffs


def save_basis(directory, basis: ReducedBasis):
    """Persist the basis vectors and spectrum; the inner product is not stored."""
    arrays = {"vectors": basis.vectors, "eigenvalues": basis.eigenvalues, "coefficients": basis.coefficients}
    store.save_bundle(directory, arrays, {"kind": "pod_basis", "rank": basis.rank, "total_energy": basis.total_energy})


def load_basis(directory, inner=None) -> ReducedBasis:
    arrays, man = store.load_bundle(directory)
    if man.get("kind") != "pod_basis":
        raise store.ContainerError(f"{directory} does not hold a POD basis")
    return ReducedBasis(arrays["vectors"], arrays["eigenvalues"], arrays["coefficients"], man["total_energy"], man["rank"], inner)
