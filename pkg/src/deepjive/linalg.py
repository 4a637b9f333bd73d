"""PCA, truncated SVD and principal angles on p x n data matrices.

Convention throughout: rows are variables, columns are samples, so a data
matrix is (p, n) and a score matrix is (rank, n).  SVD and QR come from
numpy's LAPACK bindings; this module fixes conventions (centering, sign,
truncation) on top of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PCAResult:
    loadings: np.ndarray        # (p, rank), orthonormal columns
    scores: np.ndarray          # (rank, n)
    singular_values: np.ndarray  # (rank,)
    mean: np.ndarray            # (p,), zeros when center=False
    explained_variance_ratio: np.ndarray  # (rank,), fractions of total

    def reconstruct(self) -> np.ndarray:
        return self.loadings @ self.scores + self.mean[:, None]


def _fix_signs(loadings: np.ndarray, scores: np.ndarray):
    # Deterministic orientation: the largest-magnitude loading entry of
    # each component is made positive.
    for j in range(loadings.shape[1]):
        col = loadings[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            loadings[:, j] = -col
            scores[j, :] = -scores[j, :]
    return loadings, scores


def pca(X: np.ndarray, rank: int, center: bool = True) -> PCAResult:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("pca expects a 2-D (variables x samples) matrix")
    p, n = X.shape
    if not 1 <= rank <= min(p, n):
        raise ValueError(f"rank must be in [1, {min(p, n)}], got {rank}")
    mean = X.mean(axis=1) if center else np.zeros(p)
    Xc = X - mean[:, None]
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    loadings = U[:, :rank].copy()
    scores = (s[:rank, None] * Vt[:rank, :]).copy()
    loadings, scores = _fix_signs(loadings, scores)
    total = float(np.sum(s ** 2))
    ratio = (s[:rank] ** 2 / total) if total > 0 else np.zeros(rank)
    return PCAResult(loadings, scores, s[:rank].copy(), mean, ratio)


def svd_singular_values(X: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(X, dtype=np.float64), compute_uv=False)


def truncated_svd(X: np.ndarray, rank: int) -> np.ndarray:
    """Best rank-``rank`` approximation in Frobenius norm."""
    X = np.asarray(X, dtype=np.float64)
    if rank == 0:
        return np.zeros_like(X)
    if not 0 <= rank <= min(X.shape):
        raise ValueError(f"rank must be in [0, {min(X.shape)}], got {rank}")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    return (U[:, :rank] * s[:rank]) @ Vt[:rank, :]


def principal_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Angles (radians, ascending) between the column spans of A and B.

    Each input must have full column rank; columns are orthonormalized
    internally, so any bases for the two subspaces give the same answer.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise ValueError("principal_angles expects matrices with equal row count")
    angles_count = min(A.shape[1], B.shape[1])
    qs = []
    for M in (A, B):
        Q, R = np.linalg.qr(M)
        diag = np.abs(np.diag(R))
        if np.any(diag < 1e-10 * max(1.0, diag.max(initial=0.0))):
            raise ValueError("input matrix is column rank deficient")
        qs.append(Q)
    s = np.linalg.svd(qs[0].T @ qs[1], compute_uv=False)
    s = np.clip(s[:angles_count], -1.0, 1.0)
    return np.sort(np.arccos(s))
