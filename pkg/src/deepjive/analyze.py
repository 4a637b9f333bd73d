"""Evaluation instruments: identity error, dependence, recovery scores,
a from-scratch linear classifier, and latent-perturbation maps.

Score-like inputs use the (rank, n) orientation; images keep their data
orientation.  The classifier is multinomial logistic regression trained
by full-batch gradient descent on standardized features: the claims it
supports are relative (depth trends, feature-group comparisons), which a
linear model tests without extra machinery.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .networks import DeepJiveNetwork, LatentBundle
from .tensor import Tensor, no_grad


# -- identity ------------------------------------------------------------

def joint_identity_error(latents) -> tuple[float, bool]:
    """Mean pairwise mse between joint latent blocks, plus a merged flag.

    Accepts a LatentBundle or a list of (r, n) arrays.  Merged bundles
    report exactly 0.0 with the flag set.
    """
    if isinstance(latents, LatentBundle):
        if latents.merged:
            return 0.0, True
        blocks = [t.data.T for t in latents.joint]
    else:
        blocks = [np.asarray(b, dtype=np.float64) for b in latents]
    if len(blocks) < 2:
        raise ValueError("need at least two joint blocks")
    vals = []
    for k in range(len(blocks)):
        for j in range(k + 1, len(blocks)):
            d = blocks[k] - blocks[j]
            vals.append(float(np.mean(d * d)))
    return float(np.mean(vals)), False


# -- dependence ----------------------------------------------------------

@dataclass
class DependenceReport:
    correlations: np.ndarray   # (r_J, r_S), nan where undefined
    slopes: np.ndarray         # (r_J, r_S), individual regressed on joint
    undefined: np.ndarray      # bool mask of degenerate pairs
    max_abs_correlation: float


def joint_individual_dependence(lam_j: np.ndarray,
                                lam_s: np.ndarray) -> DependenceReport:
    """Pearson correlation and least-squares slope for every
    (joint-dim, individual-dim) pair of (rank, n) score matrices."""
    lam_j = np.asarray(lam_j, dtype=np.float64)
    lam_s = np.asarray(lam_s, dtype=np.float64)
    if lam_j.ndim != 2 or lam_s.ndim != 2 or lam_j.shape[1] != lam_s.shape[1]:
        raise ValueError("score matrices must be (rank, n) with equal n")
    n = lam_j.shape[1]
    if n < 3:
        raise ValueError("need at least 3 samples")
    jc = lam_j - lam_j.mean(axis=1, keepdims=True)
    sc = lam_s - lam_s.mean(axis=1, keepdims=True)
    var_j = np.mean(jc ** 2, axis=1)
    var_s = np.mean(sc ** 2, axis=1)
    cov = jc @ sc.T / n                      # (r_J, r_S)
    undefined = (var_j[:, None] < 1e-24) | (var_s[None, :] < 1e-24)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.sqrt(var_j[:, None] * var_s[None, :])
        slope = cov / var_j[:, None]
    corr = np.where(undefined, np.nan, corr)
    slope = np.where(var_j[:, None] < 1e-24, np.nan, slope)
    defined = ~np.isnan(corr)
    max_abs = float(np.max(np.abs(corr[defined]))) if defined.any() else float("nan")
    return DependenceReport(corr, slope, undefined, max_abs)


# -- recovery ------------------------------------------------------------

@dataclass
class RecoveryScore:
    raw_error: float        # ||est - truth||_F / ||truth||_F
    rescaled_error: float   # same after the optimal scalar on est
    correlation: float      # Pearson over flattened entries
    scale: float            # the optimal scalar


def recovery_score(estimate: np.ndarray, truth: np.ndarray) -> RecoveryScore:
    est = np.asarray(estimate, dtype=np.float64).ravel()
    tru = np.asarray(truth, dtype=np.float64).ravel()
    if est.shape != tru.shape:
        raise ValueError("estimate and truth must have the same shape")
    t_norm = float(np.linalg.norm(tru))
    if t_norm == 0.0:
        raise ValueError("truth has zero norm")
    raw = float(np.linalg.norm(est - tru)) / t_norm
    ee = float(est @ est)
    scale = float(est @ tru) / ee if ee > 0 else 0.0
    rescaled = float(np.linalg.norm(scale * est - tru)) / t_norm
    ec = est - est.mean()
    tc = tru - tru.mean()
    denom = float(np.linalg.norm(ec)) * float(np.linalg.norm(tc))
    corr = float(ec @ tc) / denom if denom > 0 else float("nan")
    return RecoveryScore(raw, rescaled, corr, scale)


# -- classifier ----------------------------------------------------------

@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray     # rows true, columns predicted
    group: str
    classes: np.ndarray | None = None
    n_train: int = 0
    n_test: int = 0


def confusion_metrics(confusion: np.ndarray):
    """Accuracy plus macro precision/recall/F1 from a confusion matrix.
    Empty denominators contribute 0 to the macro averages."""
    confusion = np.asarray(confusion, dtype=np.float64)
    total = confusion.sum()
    acc = float(np.trace(confusion) / total) if total > 0 else 0.0
    diag = np.diag(confusion)
    col = confusion.sum(axis=0)
    row = confusion.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(col > 0, diag / col, 0.0)
        rec = np.where(row > 0, diag / row, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    return acc, float(prec.mean()), float(rec.mean()), float(f1.mean())


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_linear_classifier(features: np.ndarray, labels, seed: int = 0,
                          split=None, train_frac: float = 0.75,
                          group: str = "all", lr: float = 0.5,
                          iters: int = 400) -> MetricsReport:
    """Multinomial logistic regression on (d, n) features.

    Trains on one split by full-batch gradient descent (zero init, so the
    seed only drives the split when none is supplied) and reports macro
    metrics on the other.
    """
    X = np.asarray(features, dtype=np.float64).T    # (n, d)
    y = np.asarray(labels)
    n = X.shape[0]
    if y.shape[0] != n:
        raise ValueError("feature/label sample counts differ")
    if split is None:
        rng = np.random.default_rng(seed)
        perm = rng.permutation(n)
        n_train = int(round(train_frac * n))
        train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    else:
        train_idx, test_idx = np.asarray(split.train), np.asarray(split.test)
    classes = np.unique(y)
    if len(np.unique(y[train_idx])) < 2 or len(np.unique(y[test_idx])) < 2:
        raise ValueError("both splits must contain at least 2 classes")
    class_index = {c: i for i, c in enumerate(classes)}
    yt = np.array([class_index[c] for c in y[train_idx]])
    ye = np.array([class_index[c] for c in y[test_idx]])

    mu = X[train_idx].mean(axis=0)
    sd = X[train_idx].std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    Xt = (X[train_idx] - mu) / sd
    Xe = (X[test_idx] - mu) / sd

    C = len(classes)
    W = np.zeros((Xt.shape[1], C))
    b = np.zeros(C)
    onehot = np.zeros((len(yt), C))
    onehot[np.arange(len(yt)), yt] = 1.0
    m = len(yt)
    for _ in range(iters):
        probs = _softmax(Xt @ W + b)
        err = (probs - onehot) / m
        W -= lr * (Xt.T @ err)
        b -= lr * err.sum(axis=0)

    pred = np.argmax(Xe @ W + b, axis=1)
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (ye, pred), 1)
    acc, prec, rec, f1 = confusion_metrics(confusion)
    return MetricsReport(acc, prec, rec, f1, confusion, group,
                         classes=classes, n_train=m, n_test=len(ye))


def write_metrics_csv(path, reports: list[MetricsReport]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "accuracy", "precision", "recall", "f1",
                    "n_train", "n_test"])
        for r in reports:
            w.writerow([r.group] + [format(v, ".17g") for v in
                                    (r.accuracy, r.precision, r.recall, r.f1)]
                       + [r.n_train, r.n_test])


# -- perturbation maps ---------------------------------------------------

@dataclass
class PerturbationMap:
    diff: np.ndarray     # decoded (mu+sigma) minus decoded (mu-sigma)
    mask: np.ndarray     # |diff| strictly above the median nonzero |diff|
    masked: np.ndarray   # diff with sub-median entries zeroed
    zero_std: bool


def latent_perturbation_map(net: DeepJiveNetwork, sample, modality: int,
                            component: int, dataset_std: float,
                            branch: str = "joint") -> PerturbationMap:
    """Decode a single sample's latent at component = mu +/- sigma and
    difference the two images; mu is the sample's own latent value.

    ``dataset_std`` is the component's standard deviation over the whole
    dataset; a zero value short-circuits to an all-zero flagged map.
    """
    if branch not in ("joint", "individual"):
        raise ValueError("branch must be 'joint' or 'individual'")
    xs = [x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
          for x in sample]
    if any(x.data.shape[0] != 1 for x in xs):
        raise ValueError("sample must be a batch of exactly one")
    mod = net.modalities[modality]
    decoder = mod.joint_dec if branch == "joint" else mod.indiv_dec
    if decoder is None:
        raise ValueError(f"modality {modality} has no {branch} branch")
    with no_grad():
        bundle = net.encode(xs)
        z = (bundle.joint if branch == "joint" else bundle.individual)[modality]
        width = z.data.shape[1]
        if not 0 <= component < width:
            raise ValueError(f"component {component} out of range [0,{width})")
        if dataset_std == 0.0:
            shape = decoder(z).data.shape[1:]
            zero = np.zeros(shape)
            return PerturbationMap(zero, np.zeros(shape, dtype=bool),
                                   zero.copy(), True)
        z_plus = z.data.copy()
        z_minus = z.data.copy()
        z_plus[0, component] += dataset_std
        z_minus[0, component] -= dataset_std
        img_plus = decoder(Tensor(z_plus)).data[0]
        img_minus = decoder(Tensor(z_minus)).data[0]
    diff = img_plus - img_minus
    magnitude = np.abs(diff)
    nonzero = magnitude[magnitude > 0]
    if nonzero.size == 0:
        mask = np.zeros(diff.shape, dtype=bool)
    else:
        mask = magnitude > np.median(nonzero)
    return PerturbationMap(diff, mask, np.where(mask, diff, 0.0), False)


def write_pgm(path, image: np.ndarray):
    """Binary PGM with full-range rescaling; constant images go to 0."""
    img = np.asarray(image, dtype=np.float64)
    img = img.reshape(img.shape[-2], img.shape[-1])
    lo, hi = img.min(), img.max()
    scaled = (
        np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo) * 255.0
    )
    data = np.round(scaled).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())
