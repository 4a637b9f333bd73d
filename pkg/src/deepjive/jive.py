"""Classical JIVE: joint and individual variation via alternating SVDs.

Each data block X_k (p_k variables x n shared samples) is split as
X_k = J_k + S_k + R_k where the stacked joint parts share one rank-r_J
row space, each individual part has rank r_k with rows orthogonal to the
joint row space, and R_k is residual.  The fit alternates a truncated SVD
of the stacked joint estimate with per-block truncated SVDs of the
individual estimates projected off the joint row space, until the total
explained energy stabilizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import _fix_signs, truncated_svd


@dataclass
class Decomposition:
    joint: list[np.ndarray]             # J_k on centered scale, (p_k, n)
    individual: list[np.ndarray]        # S_k, (p_k, n)
    residual: list[np.ndarray]          # X_k centered - J_k - S_k
    means: list[np.ndarray]             # per-variable means removed, (p_k,)
    joint_loadings: list[np.ndarray]    # (p_k, r_J) blocks of stacked U
    joint_scores: np.ndarray            # (r_J, n), shared across blocks
    individual_loadings: list[np.ndarray]  # (p_k, r_k)
    individual_scores: list[np.ndarray]    # (r_k, n)
    converged: bool
    n_iter: int
    history: list[float] = field(default_factory=list)


def _scores_and_loadings(M: np.ndarray, rank: int):
    if rank == 0:
        return np.zeros((M.shape[0], 0)), np.zeros((0, M.shape[1]))
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    loadings = U[:, :rank].copy()
    scores = (s[:rank, None] * Vt[:rank, :]).copy()
    return _fix_signs(loadings, scores)


def jive_fit(blocks: list[np.ndarray], joint_rank: int,
             individual_ranks: list[int], tol: float = 1e-8,
             max_iter: int = 500, center: bool = True) -> Decomposition:
    blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
    if len(blocks) < 2:
        raise ValueError("jive_fit needs at least two data blocks")
    n = blocks[0].shape[1]
    if any(b.ndim != 2 or b.shape[1] != n for b in blocks):
        raise ValueError("all blocks must be 2-D with the same sample count")
    if len(individual_ranks) != len(blocks):
        raise ValueError("one individual rank per block is required")
    sizes = [b.shape[0] for b in blocks]
    if not 0 <= joint_rank <= min(sum(sizes), n):
        raise ValueError(f"joint rank {joint_rank} infeasible for these blocks")
    for p_k, r_k in zip(sizes, individual_ranks):
        if not 0 <= r_k <= min(p_k, n):
            raise ValueError(f"individual rank {r_k} infeasible for a {p_k}-row block")

    if center:
        means = [b.mean(axis=1) for b in blocks]
    else:
        means = [np.zeros(p_k) for p_k in sizes]
    Xc = [b - m[:, None] for b, m in zip(blocks, means)]
    splits = np.cumsum(sizes)[:-1]

    S = [np.zeros_like(b) for b in Xc]
    J_blocks = [np.zeros_like(b) for b in Xc]
    prev_energy = 0.0
    converged = False
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        stacked = np.vstack([x - s_k for x, s_k in zip(Xc, S)])
        if joint_rank > 0:
            U, sv, Vt = np.linalg.svd(stacked, full_matrices=False)
            J = (U[:, :joint_rank] * sv[:joint_rank]) @ Vt[:joint_rank, :]
            V_J = Vt[:joint_rank, :].T    # (n, r_J) row-space basis
            proj_perp = np.eye(n) - V_J @ V_J.T
        else:
            J = np.zeros_like(stacked)
            proj_perp = np.eye(n)
        J_blocks = np.vsplit(J, splits)
        # Individual structure lives in the orthogonal complement of the
        # joint row space, which keeps the two parts identifiable.
        S = [
            truncated_svd((x - j) @ proj_perp, r_k)
            for x, j, r_k in zip(Xc, J_blocks, individual_ranks)
        ]
        energy = float(
            np.sum(J ** 2) + sum(np.sum(s_k ** 2) for s_k in S)
        )
        history.append(energy)
        if abs(energy - prev_energy) <= tol * max(1.0, abs(prev_energy)):
            converged = True
            break
        prev_energy = energy

    stacked_J = np.vstack(J_blocks)
    U_J, joint_scores = _scores_and_loadings(stacked_J, joint_rank)
    joint_loadings = np.vsplit(U_J, splits) if joint_rank >= 0 else []
    indiv_loadings = []
    indiv_scores = []
    for s_k, r_k in zip(S, individual_ranks):
        L, sc = _scores_and_loadings(s_k, r_k)
        indiv_loadings.append(L)
        indiv_scores.append(sc)
    residual = [x - j - s_k for x, j, s_k in zip(Xc, J_blocks, S)]
    return Decomposition(
        joint=list(J_blocks),
        individual=list(S),
        residual=residual,
        means=means,
        joint_loadings=list(joint_loadings),
        joint_scores=joint_scores,
        individual_loadings=indiv_loadings,
        individual_scores=indiv_scores,
        converged=converged,
        n_iter=it,
        history=history,
    )
