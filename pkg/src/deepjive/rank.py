"""Latent-width selection via plain autoencoders and a random-matrix null.

Per modality: fit a single-latent-space autoencoder with r_max units,
PCA its latent matrix, and pick the smallest rank whose truncation error
(or error drop, in derivative mode) falls below a threshold.  The joint
rank then comes from the singular values of the row-standardized,
concatenated score matrices, compared against the largest singular value
of simulated matrices whose rows are resampled from the real rows'
empirical values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .layers import Dense, Sequential
from .linalg import pca, svd_singular_values, truncated_svd
from .networks import _build_decoder, _build_encoder_trunk
from .optim import SGD, Adam
from .tensor import Tensor, mse, no_grad


@dataclass
class PlainAEResult:
    encoder: Sequential
    decoder: Sequential
    train_latents: np.ndarray   # (r_max, n_train)
    test_latents: np.ndarray    # (r_max, n_test)
    train_error: float
    test_error: float
    history: list = field(default_factory=list)


@dataclass
class RankChoice:
    rank: int
    curve: np.ndarray           # curve[r] = error of rank-r truncation
    threshold: float
    mode: str
    crossed: bool               # False when the threshold was never met


@dataclass
class JointRankResult:
    rank: int
    singular_values: np.ndarray
    null_maxima: np.ndarray
    quantile: float
    confidence: float
    n_sims: int


@dataclass
class RankReport:
    modalities: list            # RankChoice per modality
    joint: JointRankResult


def fit_plain_autoencoder(X: np.ndarray, r_max: int, split, config,
                          conv_stack=None, seed: int = 0) -> PlainAEResult:
    """Single-latent-space autoencoder with the same layer stack.

    ``X`` is sample-first ((n, p) or (n, C, H, W)); ``split`` carries the
    train/test index arrays shared by every modality.  Latent matrices
    are returned for both splits in (r_max, n) orientation.
    """
    X = np.asarray(X, dtype=np.float64)
    input_shape = X.shape[1:]
    n_train = len(split.train)
    if not 1 <= r_max <= min(int(np.prod(input_shape)), n_train):
        raise ValueError(f"r_max={r_max} out of range for this modality")
    stack = list(conv_stack) if conv_stack else []
    rng = np.random.default_rng(seed)
    trunk, flat = _build_encoder_trunk(input_shape, stack, rng)
    encoder = Sequential(list(trunk.layers) + [Dense(flat, r_max, rng)])
    decoder = _build_decoder(r_max, input_shape, stack, rng)

    params = list(encoder.parameters().values()) + list(decoder.parameters().values())
    opt = Adam(params, config.lr) if config.optimizer == "adam" else SGD(params, config.lr)
    shuffle = np.random.default_rng(config.seed)
    train_X = X[split.train]
    history = []
    for _ in range(config.epochs):
        perm = shuffle.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xb = Tensor(np.ascontiguousarray(train_X[idx]))
            loss = mse(xb, decoder(encoder(xb)))
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / n_train)

    def latents_and_error(idx):
        chunks, err, count = [], 0.0, 0
        with no_grad():
            for start in range(0, len(idx), 256):
                xb = Tensor(np.ascontiguousarray(X[idx[start : start + 256]]))
                z = encoder(xb)
                err += mse(xb, decoder(z)).item() * xb.data.shape[0]
                count += xb.data.shape[0]
                chunks.append(z.data.T.copy())
        return np.concatenate(chunks, axis=1), err / max(count, 1)

    train_lat, train_err = latents_and_error(split.train)
    test_lat, test_err = latents_and_error(split.test)
    return PlainAEResult(encoder, decoder, train_lat, test_lat,
                         train_err, test_err, history)


def choose_total_rank(latents: np.ndarray, threshold: float | None = None,
                      mode: str = "curve") -> RankChoice:
    """Error curve over PCA truncations of an (r_max, n) latent matrix.

    ``curve`` mode picks the smallest rank whose truncation error is
    below the threshold (default: 5% of the rank-0 error); ``derivative``
    mode picks the smallest rank after which the error drop is below the
    threshold.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2:
        raise ValueError("latents must be (r_max, n)")
    if mode not in ("curve", "derivative"):
        raise ValueError("mode must be 'curve' or 'derivative'")
    r_max = latents.shape[0]
    mean = latents.mean(axis=1, keepdims=True)
    centered = latents - mean
    curve = np.empty(r_max + 1)
    for r in range(r_max + 1):
        approx = truncated_svd(centered, r)
        curve[r] = float(np.mean((centered - approx) ** 2))
    if threshold is None:
        threshold = 0.05 * curve[0] if curve[0] > 0 else 0.0
    crossed = True
    if mode == "curve":
        below = np.nonzero(curve < threshold)[0]
        rank = int(below[0]) if below.size else r_max
        crossed = below.size > 0
    else:
        drops = curve[:-1] - curve[1:]   # drops[r] = gain of component r+1
        small = np.nonzero(drops < threshold)[0]
        rank = int(small[0]) if small.size else r_max
        crossed = small.size > 0
    return RankChoice(rank, curve, float(threshold), mode, crossed)


def _standardize_rows(M: np.ndarray) -> np.ndarray:
    mean = M.mean(axis=1, keepdims=True)
    std = M.std(axis=1, keepdims=True)
    std = np.where(std < 1e-12, 1.0, std)
    return (M - mean) / std


def select_joint_rank(score_matrices: list[np.ndarray], n_sims: int = 100,
                      confidence: float = 0.95, seed: int = 0) -> JointRankResult:
    """Joint rank from concatenated scores against a resampled null.

    Rows are standardized so no modality dominates, stacked, and the
    stack's singular values compared with the per-simulation maxima of
    matrices whose every row is an independent resample (with
    replacement) of the corresponding real row.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in score_matrices]
    if not mats:
        raise ValueError("need at least one score matrix")
    n = mats[0].shape[1]
    if any(m.ndim != 2 or m.shape[1] != n for m in mats):
        raise ValueError("score matrices must share the sample count")
    if n_sims < 10:
        raise ValueError("n_sims < 10 gives a meaningless null quantile")
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    stacked = _standardize_rows(np.vstack(mats))
    sv = svd_singular_values(stacked)
    rng = np.random.default_rng(seed)
    maxima = np.empty(n_sims)
    for i in range(n_sims):
        null = np.empty_like(stacked)
        for r in range(stacked.shape[0]):
            null[r] = rng.choice(stacked[r], size=n, replace=True)
        maxima[i] = svd_singular_values(null)[0]
    maxima.sort()
    quantile = float(np.quantile(maxima, confidence))
    rank = int(np.sum(sv > quantile))
    return JointRankResult(rank, sv, maxima, quantile, confidence, n_sims)


def build_rank_report(latent_matrices: list[np.ndarray],
                      ranks: list[RankChoice] | None = None,
                      threshold: float | None = None, mode: str = "curve",
                      n_sims: int = 100, confidence: float = 0.95,
                      seed: int = 0) -> RankReport:
    """Full per-modality + joint rank selection from latent matrices."""
    if ranks is None:
        ranks = [choose_total_rank(m, threshold, mode) for m in latent_matrices]
    scores = []
    for m, choice in zip(latent_matrices, ranks):
        r = max(choice.rank, 1)
        res = pca(m, rank=min(r, min(m.shape)), center=True)
        scores.append(res.scores)
    joint = select_joint_rank(scores, n_sims=n_sims, confidence=confidence,
                              seed=seed)
    return RankReport(list(ranks), joint)


def write_rank_report_csv(out_dir, report: RankReport):
    """Three CSV tables: error curves, singular values, null maxima."""
    from pathlib import Path

    out = Path(out_dir)
    with open(out / "rank_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["modality", "rank", "error", "chosen", "threshold", "crossed"])
        for k, choice in enumerate(report.modalities):
            for r, err in enumerate(choice.curve):
                w.writerow([k, r, format(err, ".17g"), choice.rank,
                            format(choice.threshold, ".17g"), int(choice.crossed)])
    with open(out / "rank_singular_values.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "singular_value", "above_null", "quantile",
                    "confidence", "chosen_joint_rank"])
        for i, s in enumerate(report.joint.singular_values):
            w.writerow([i, format(s, ".17g"), int(s > report.joint.quantile),
                        format(report.joint.quantile, ".17g"),
                        format(report.joint.confidence, ".17g"),
                        report.joint.rank])
    with open(out / "rank_null_maxima.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sim", "max_singular_value"])
        for i, s in enumerate(report.joint.null_maxima):
            w.writerow([i, format(s, ".17g")])
