"""Synthetic multimodal datasets with retained ground truth.

All generators are pure functions of their seed.  Data blocks are stored
sample-first ((n, p) flat, (n, 1, H, W) images) to match the network
side; linear-algebra code transposes at its own boundary.  Ground truth
keeps the noise-free joint and individual parts in the same orientation
so recovery scores can compare directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .containers import load_container, save_container
from .idx import read_idx, write_idx

BETA_VALUES = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])


@dataclass
class TrainTestSplit:
    train: np.ndarray
    test: np.ndarray


@dataclass
class SyntheticGroundTruth:
    joint: list            # noise-free J_k per modality, data orientation
    individual: list       # S_k
    noise: list            # eps_k (zeros for the noise-free 2D recipes)
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    templates: np.ndarray | None = None   # digit loadings (10, 1, H, W)
    patterns: list | None = None          # per modality (2, 1, H, W)
    gamma_offset: float = 0.0


@dataclass
class MultimodalDataset:
    modalities: list
    split: TrainTestSplit
    seed: int
    labels: np.ndarray | None = None

    def __post_init__(self):
        n = self.modalities[0].shape[0]
        if any(m.shape[0] != n for m in self.modalities):
            raise ValueError("modalities disagree on sample count")
        joined = np.sort(np.concatenate([self.split.train, self.split.test]))
        if not np.array_equal(joined, np.arange(n)):
            raise ValueError("split indices must partition the sample range")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels length does not match sample count")

    @property
    def K(self) -> int:
        return len(self.modalities)

    @property
    def n(self) -> int:
        return self.modalities[0].shape[0]

    def train_arrays(self):
        return [m[self.split.train] for m in self.modalities]

    def test_arrays(self):
        return [m[self.split.test] for m in self.modalities]

    def train_labels(self):
        return None if self.labels is None else self.labels[self.split.train]

    def test_labels(self):
        return None if self.labels is None else self.labels[self.split.test]


def _make_split(rng: np.random.Generator, n: int, train_frac: float) -> TrainTestSplit:
    n_train = int(round(train_frac * n))
    if not 0 < n_train < n:
        raise ValueError(f"train fraction {train_frac} leaves an empty split")
    perm = rng.permutation(n)
    return TrainTestSplit(np.sort(perm[:n_train]), np.sort(perm[n_train:]))


# -- 1D recipe -----------------------------------------------------------

def _draws_1d(n: int, p: int, seed: int):
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(-2.0, 2.0, size=n)
    beta = rng.choice(BETA_VALUES, size=(n, 2))
    eps = rng.uniform(-0.5, 0.5, size=(2, n, p))
    return rng, alpha, beta, eps


def gen_1d(n: int = 100, p: int = 100, seed: int = 0,
           train_frac: float = 0.9):
    """Two flat blocks: a shared half-active factor plus a per-modality
    5-level constant and uniform noise.

    Entry (i, j) of block k is alpha_i * [j in the first half] + beta_ik
    + eps_ijk with alpha ~ U[-2, 2] per sample, beta uniform on
    {-2,-1,0,1,2}, eps ~ U[-0.5, 0.5].
    """
    rng, alpha, beta, eps = _draws_1d(n, p, seed)
    mask = (np.arange(p) < p // 2).astype(np.float64)
    joint = alpha[:, None] * mask[None, :]
    blocks, joints, indivs, noises = [], [], [], []
    for k in range(2):
        indiv = np.repeat(beta[:, k][:, None], p, axis=1)
        blocks.append(joint + indiv + eps[k])
        joints.append(joint.copy())
        indivs.append(indiv)
        noises.append(eps[k])
    split = _make_split(rng, n, train_frac)
    dataset = MultimodalDataset(blocks, split, seed)
    truth = SyntheticGroundTruth(joints, indivs, noises, alpha=alpha, beta=beta)
    return dataset, truth


def gen_offset_1d(gamma_offset: float, n: int = 100, p: int = 100,
                  seed: int = 0, train_frac: float = 0.9):
    """Same emitted data as ``gen_1d`` under the same seed, but with the
    ground truth shifted: the joint part absorbs +gamma_offset on every
    entry and each individual part gives it back.  Demonstrates that the
    additive split is identified only up to such exchanges.
    """
    dataset, truth = gen_1d(n=n, p=p, seed=seed, train_frac=train_frac)
    truth.joint = [j + gamma_offset for j in truth.joint]
    truth.individual = [s - gamma_offset for s in truth.individual]
    truth.gamma_offset = float(gamma_offset)
    return dataset, truth


# -- digit corpus --------------------------------------------------------

def load_mnist(images_path, labels_path):
    """IDX image/label pair -> images scaled to [0,1] plus int labels."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise ValueError(f"{images_path}: expected 3-D image tensor, "
                         f"got shape {images.shape}")
    if labels.ndim != 1:
        raise ValueError(f"{labels_path}: expected 1-D label vector")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}"
        )
    scale = 255.0 if np.issubdtype(images.dtype, np.integer) else 1.0
    return images.astype(np.float64) / scale, labels.astype(np.int64)


@lru_cache(maxsize=1)
def _upsampled_digits():
    # 8x8 handwritten-digit scans bilinearly upsampled to the 28x28
    # extent the 2D recipes expect.
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    raw = load_digits()
    images = np.stack([
        zoom(img.astype(np.float64), 3.5, order=1) for img in raw.images
    ])
    images = np.clip(images / 16.0, 0.0, 1.0)
    return images, raw.target.astype(np.int64)


def make_digit_corpus(n: int, seed: int = 0):
    """Desk-scale 28x28 digit corpus: n images resampled with
    replacement from the upsampled base scans."""
    base_images, base_labels = _upsampled_digits()
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(base_images), size=n)
    return base_images[idx].copy(), base_labels[idx].copy()


def write_digit_corpus(out_dir, images: np.ndarray, labels: np.ndarray):
    """Quantize to bytes and write the standard IDX file pair."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    img_u8 = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    write_idx(out / "images-idx3-ubyte", img_u8)
    write_idx(out / "labels-idx1-ubyte", labels.astype(np.uint8))
    return out / "images-idx3-ubyte", out / "labels-idx1-ubyte"


# -- 2D recipes ----------------------------------------------------------

def builtin_patterns() -> list:
    """Four fixed 28x28 patterns in [0,1]: horizontal stripes, vertical
    stripes, and two opposed diagonal gradients."""
    idx = np.arange(28)
    bands = ((idx // 4) % 2).astype(np.float64)
    horiz = np.repeat(bands[:, None], 28, axis=1)
    vert = np.repeat(bands[None, :], 28, axis=0)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    diag = (ii + jj) / 54.0
    anti = (ii - jj + 27) / 54.0
    return [horiz, vert, diag, anti]


def _digit_templates(images: np.ndarray, labels: np.ndarray) -> np.ndarray:
    templates = np.empty((10,) + images.shape[1:])
    for d in range(10):
        hits = np.nonzero(labels == d)[0]
        if hits.size == 0:
            raise ValueError(f"corpus has no image of digit {d}")
        templates[d] = images[hits[0]]
    return templates


def gen_overlaid(mnist, n: int, seed: int = 0, train_frac: float = 6 / 7):
    """Overlaid pair: one scaled digit template (shared score and index)
    plus two weighted fixed patterns per modality.

    Per sample: x_k = 0.5 * a * template[digit] + 0.5 * (b_k1 * p_k1 +
    b_k2 * p_k2), all coefficients U[0,1], digit uniform on 0..9.
    Noise-free, so the retained joint/individual parts sum to the data
    exactly.
    """
    images, labels = mnist
    templates = _digit_templates(images, labels)
    rng = np.random.default_rng(seed)
    digit = rng.integers(0, 10, size=n)
    avalue = rng.uniform(0.0, 1.0, size=n)
    beta = rng.uniform(0.0, 1.0, size=(n, 2, 2))
    pats = builtin_patterns()
    joint = 0.5 * avalue[:, None, None] * templates[digit]
    blocks, joints, indivs, pattern_sets = [], [], [], []
    for k in range(2):
        p1, p2 = pats[2 * k], pats[2 * k + 1]
        indiv = 0.5 * (
            beta[:, k, 0][:, None, None] * p1 + beta[:, k, 1][:, None, None] * p2
        )
        blocks.append((joint + indiv)[:, None, :, :])
        joints.append(joint[:, None, :, :].copy())
        indivs.append(indiv[:, None, :, :])
        pattern_sets.append(np.stack([p1, p2])[:, None, :, :])
    split = _make_split(rng, n, train_frac)
    alpha = np.zeros((n, 10))
    alpha[np.arange(n), digit] = avalue
    dataset = MultimodalDataset(blocks, split, seed, labels=digit.copy())
    truth = SyntheticGroundTruth(
        joints, indivs, [np.zeros_like(b) for b in blocks],
        alpha=alpha, beta=beta,
        templates=templates[:, None, :, :].copy(), patterns=pattern_sets,
    )
    return dataset, truth, digit.copy()


def gen_paired(mnist, seed: int = 0, train_frac: float = 6 / 7):
    """Pair every image with a different image of the same digit.

    The partner assignment is a within-class derangement drawn by
    rejection, so no image ever faces itself and both sides range over
    the whole corpus.
    """
    images, labels = mnist
    m = images.shape[0]
    rng = np.random.default_rng(seed)
    partner = np.empty(m, dtype=np.int64)
    for d in range(10):
        members = np.nonzero(labels == d)[0]
        if members.size == 0:
            continue
        if members.size < 2:
            raise ValueError(f"digit class {d} has fewer than 2 images")
        while True:
            perm = rng.permutation(members.size)
            if not np.any(perm == np.arange(members.size)):
                break
        partner[members] = members[perm]
    top = images[:, None, :, :].astype(np.float64)
    bottom = images[partner][:, None, :, :].astype(np.float64)
    split = _make_split(rng, m, train_frac)
    dataset = MultimodalDataset([top, bottom], split, seed,
                                labels=labels.copy())
    return dataset, labels.copy()


# -- persistence ---------------------------------------------------------

def _truth_arrays(truth: SyntheticGroundTruth, K: int) -> dict:
    arrays = {}
    for k in range(K):
        arrays[f"truth_joint{k}"] = truth.joint[k]
        arrays[f"truth_indiv{k}"] = truth.individual[k]
        arrays[f"truth_noise{k}"] = truth.noise[k]
    if truth.alpha is not None:
        arrays["truth_alpha"] = np.asarray(truth.alpha, dtype=np.float64)
    if truth.beta is not None:
        arrays["truth_beta"] = np.asarray(truth.beta, dtype=np.float64)
    if truth.templates is not None:
        arrays["truth_templates"] = truth.templates
    if truth.patterns is not None:
        for k, pats in enumerate(truth.patterns):
            arrays[f"truth_patterns{k}"] = pats
    return arrays


def _truth_from_arrays(arrays: dict, K: int, meta: dict) -> SyntheticGroundTruth:
    return SyntheticGroundTruth(
        joint=[arrays[f"truth_joint{k}"] for k in range(K)],
        individual=[arrays[f"truth_indiv{k}"] for k in range(K)],
        noise=[arrays[f"truth_noise{k}"] for k in range(K)],
        alpha=arrays.get("truth_alpha"),
        beta=arrays.get("truth_beta"),
        templates=arrays.get("truth_templates"),
        patterns=(
            [arrays[f"truth_patterns{k}"] for k in range(K)]
            if "truth_patterns0" in arrays
            else None
        ),
        gamma_offset=float(meta.get("gamma_offset", 0.0)),
    )


def save_dataset(path, dataset: MultimodalDataset,
                 truth: SyntheticGroundTruth | None = None):
    arrays = {f"mod{k}": m for k, m in enumerate(dataset.modalities)}
    arrays["split_train"] = dataset.split.train.astype(np.float64)
    arrays["split_test"] = dataset.split.test.astype(np.float64)
    if dataset.labels is not None:
        arrays["labels"] = dataset.labels.astype(np.float64)
    meta = {
        "kind": "dataset",
        "seed": int(dataset.seed),
        "K": dataset.K,
        "has_labels": dataset.labels is not None,
        "has_truth": truth is not None,
    }
    if truth is not None:
        arrays.update(_truth_arrays(truth, dataset.K))
        meta["gamma_offset"] = float(truth.gamma_offset)
    save_container(path, arrays, meta)


def load_dataset(path):
    arrays, meta = load_container(path)
    if meta.get("kind") != "dataset":
        raise ValueError(f"{path}: container is not a dataset")
    K = int(meta["K"])
    split = TrainTestSplit(
        arrays["split_train"].astype(np.int64),
        arrays["split_test"].astype(np.int64),
    )
    labels = (
        arrays["labels"].astype(np.int64) if meta.get("has_labels") else None
    )
    dataset = MultimodalDataset(
        [arrays[f"mod{k}"] for k in range(K)], split,
        seed=int(meta.get("seed", 0)), labels=labels,
    )
    truth = None
    if meta.get("has_truth"):
        truth = _truth_from_arrays(arrays, K, meta)
    return dataset, truth


def save_ground_truth(path, truth: SyntheticGroundTruth):
    K = len(truth.joint)
    meta = {"kind": "ground-truth", "K": K,
            "gamma_offset": float(truth.gamma_offset)}
    save_container(path, _truth_arrays(truth, K), meta)


def load_ground_truth(path) -> SyntheticGroundTruth:
    arrays, meta = load_container(path)
    if meta.get("kind") != "ground-truth":
        raise ValueError(f"{path}: container is not a ground-truth sidecar")
    return _truth_from_arrays(arrays, int(meta["K"]), meta)
