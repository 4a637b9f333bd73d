"""Losses, the orthogonality mechanism, and the training loop.

Three architectural losses realize the identity constraint: ``explicit``
adds pairwise joint-latent error terms, ``exchange`` decodes every
modality from every other modality's joint latent (K^2 reconstruction
terms), and ``merged`` shares one joint latent by construction.

Orthogonality is adversarial: per batch, each regression network f^R_k
takes one gradient step toward predicting the individual latents from
the joint latent (main network frozen), then the main network takes one
step on the architectural loss plus gamma times the magnitude of the
frozen f^R_k predictions.  All norm terms are per-element means, so
gamma's effective scale does not drift with modality size.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

from .networks import DeepJiveNetwork, ForwardResult, LatentBundle
from .optim import SGD, Adam, Optimizer
from .tensor import NonFiniteError, Tensor, mse, no_grad

OPTIMIZERS = {"sgd": SGD, "adam": Adam}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    regression_lr: float | None = None   # defaults to 10x the main rate
    gamma: float = 0.01
    orthogonality: bool = True
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {sorted(OPTIMIZERS)}")
        if self.regression_lr is None:
            self.regression_lr = 10.0 * self.lr
        # The adversary has to outpace the encoders it audits.
        if self.orthogonality and self.regression_lr <= self.lr:
            raise ValueError("regression_lr must exceed lr when orthogonality is on")


@dataclass
class HistoryRow:
    epoch: int
    loss_arch: float
    loss_ortho: float
    loss_regression: float
    joint_identity: float


def make_optimizer(kind: str, params, lr: float) -> Optimizer:
    try:
        cls = OPTIMIZERS[kind]
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}") from None
    return cls(params, lr)


# -- architectural losses ------------------------------------------------

def _as_tensors(batch) -> list[Tensor]:
    return [x if isinstance(x, Tensor) else Tensor(np.asarray(x, float)) for x in batch]


def _arch_from_bundle(net: DeepJiveNetwork, xs, bundle: LatentBundle) -> Tensor:
    variant = net.spec.variant
    if variant == "exchange":
        spart = [
            mod.indiv_dec(bundle.individual[k]) if mod.indiv_dec is not None else None
            for k, mod in enumerate(net.modalities)
        ]
        total = None
        for k, mod in enumerate(net.modalities):
            for j in range(net.spec.K):
                x_hat = mod.joint_dec(bundle.joint[j])
                if spart[k] is not None:
                    x_hat = x_hat + spart[k]
                term = mse(xs[k], x_hat)
                total = term if total is None else total + term
        return total
    fwd = net.decode(bundle)
    total = None
    for x, x_hat in zip(xs, fwd.recon):
        term = mse(x, x_hat)
        total = term if total is None else total + term
    if variant == "explicit":
        for k in range(net.spec.K):
            for j in range(k + 1, net.spec.K):
                total = total + mse(bundle.joint[k], bundle.joint[j])
    return total


def _guard_variant(net, expected):
    if net.spec.variant != expected:
        raise ValueError(
            f"loss_{expected} requires a {expected}-variant network, "
            f"got {net.spec.variant!r}"
        )


def loss_explicit(net: DeepJiveNetwork, batch) -> Tensor:
    """Reconstruction error plus pairwise joint-latent disagreement."""
    _guard_variant(net, "explicit")
    xs = _as_tensors(batch)
    return _arch_from_bundle(net, xs, net.encode(xs))


def loss_exchange(net: DeepJiveNetwork, batch) -> Tensor:
    """K^2 reconstructions, each decoding a foreign joint latent."""
    _guard_variant(net, "exchange")
    xs = _as_tensors(batch)
    return _arch_from_bundle(net, xs, net.encode(xs))


def loss_merged(net: DeepJiveNetwork, batch) -> Tensor:
    """Reconstruction error with the single shared joint latent."""
    _guard_variant(net, "merged")
    xs = _as_tensors(batch)
    return _arch_from_bundle(net, xs, net.encode(xs))


def arch_loss(net: DeepJiveNetwork, batch) -> Tensor:
    xs = _as_tensors(batch)
    return _arch_from_bundle(net, xs, net.encode(xs))


# -- orthogonality -------------------------------------------------------

def _ortho_from_bundle(net: DeepJiveNetwork, bundle: LatentBundle):
    """L_ortho with f^R frozen, plus the residualized individual latents."""
    total = None
    residual = []
    for k, mod in enumerate(net.modalities):
        if mod.reg is None:
            residual.append(None)
            continue
        pred = mod.reg.apply_frozen(bundle.joint[k])
        term = (pred * pred).mean()
        total = term if total is None else total + term
        residual.append(bundle.individual[k] - pred)
    if total is None:
        total = Tensor(np.zeros(()))
    bundle.residual_individual = residual
    return total, residual


def ortho_penalty(net: DeepJiveNetwork, batch, bundle: LatentBundle | None = None):
    """Magnitude of the frozen regression networks' predictions.

    Gradients reach the encoders through the joint latents but never the
    regression weights.  Also returns the residualized individual latents
    (prediction subtracted), which inherit the same batch orientation.
    """
    if bundle is None:
        xs = _as_tensors(batch)
        bundle = net.encode(xs)
    return _ortho_from_bundle(net, bundle)


def regression_losses(net: DeepJiveNetwork, bundle: LatentBundle) -> list[Tensor]:
    """Per-modality mse(Lambda_S, f^R(Lambda_J)) with latents detached."""
    losses = []
    for k, mod in enumerate(net.modalities):
        if mod.reg is None:
            losses.append(None)
            continue
        lam_j = Tensor(bundle.joint[k].data)
        lam_s = Tensor(bundle.individual[k].data)
        losses.append(mse(lam_s, mod.reg(lam_j)))
    return losses


def regression_step(net: DeepJiveNetwork, batch, regression_lr: float | None = None,
                    optimizer: Optimizer | None = None) -> list[float]:
    """One adversary update; main-network parameters see no gradient.

    Pass a persistent optimizer to keep stateful rules (Adam) coherent
    across calls; otherwise a single plain SGD step at ``regression_lr``
    is taken.
    """
    if optimizer is None:
        if regression_lr is None:
            raise ValueError("provide regression_lr or an optimizer")
        optimizer = SGD(net.regression_parameters(), regression_lr)
    with no_grad():
        xs = _as_tensors(batch)
        bundle = net.encode(xs)
    return _regression_update(net, bundle, optimizer)


def _regression_update(net, bundle, optimizer) -> list[float]:
    losses = regression_losses(net, bundle)
    live = [t for t in losses if t is not None]
    if not live:
        return [0.0] * net.spec.K
    total = live[0]
    for t in live[1:]:
        total = total + t
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return [0.0 if t is None else t.item() for t in losses]


def total_loss(net: DeepJiveNetwork, batch, gamma: float) -> Tensor:
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    xs = _as_tensors(batch)
    bundle = net.encode(xs)
    arch = _arch_from_bundle(net, xs, bundle)
    if gamma == 0:
        return arch
    lo, _ = _ortho_from_bundle(net, bundle)
    return arch + gamma * lo


# -- training loop -------------------------------------------------------

def _joint_identity(bundle: LatentBundle) -> float:
    if bundle.merged:
        return 0.0
    K = len(bundle.joint)
    vals = []
    for k in range(K):
        for j in range(k + 1, K):
            d = bundle.joint[k].data - bundle.joint[j].data
            vals.append(float(np.mean(d * d)))
    return float(np.mean(vals)) if vals else 0.0


def _dataset_arrays(dataset) -> list[np.ndarray]:
    if hasattr(dataset, "modalities"):
        arrays = dataset.modalities
    else:
        arrays = list(dataset)
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    if not arrays or arrays[0].shape[0] == 0:
        raise ValueError("dataset is empty")
    n = arrays[0].shape[0]
    if any(a.shape[0] != n for a in arrays):
        raise ValueError("modalities disagree on sample count")
    return arrays


def train(net: DeepJiveNetwork, dataset, config: TrainConfig):
    """Fit in place; returns (net, per-epoch history).

    Per batch: one adversary step on the regression networks, then one
    main step on arch + gamma * ortho with the adversary frozen.  The
    shuffle order is fully determined by ``config.seed``.
    """
    arrays = _dataset_arrays(dataset)
    n = arrays[0].shape[0]
    shapes = tuple(a.shape[1:] for a in arrays)
    expected = tuple(tuple(s) for s in net.spec.input_shapes)
    if tuple(tuple(s) for s in shapes) != expected:
        raise ValueError(f"dataset shapes {shapes} do not match spec {expected}")

    use_ortho = config.orthogonality and any(
        mod.reg is not None for mod in net.modalities
    )
    opt_main = make_optimizer(config.optimizer, net.main_parameters(), config.lr)
    opt_reg = (
        make_optimizer(config.optimizer, net.regression_parameters(),
                       config.regression_lr)
        if use_ortho
        else None
    )
    rng = np.random.default_rng(config.seed)
    history: list[HistoryRow] = []
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        sums = np.zeros(4)
        seen = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xs = [Tensor(np.ascontiguousarray(a[idx])) for a in arrays]
            b = len(idx)
            try:
                bundle = net.encode(xs)
                if use_ortho:
                    reg_vals = _regression_update(net, bundle, opt_reg)
                else:
                    reg_vals = [0.0] * net.spec.K
                arch = _arch_from_bundle(net, xs, bundle)
                if use_ortho and config.gamma > 0:
                    lo, _ = _ortho_from_bundle(net, bundle)
                    loss = arch + config.gamma * lo
                else:
                    lo = None
                    loss = arch
                opt_main.zero_grad()
                loss.backward()
                opt_main.step()
            except NonFiniteError as exc:
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch starting {start} "
                    f"(lr={config.lr}, gamma={config.gamma}): {exc}"
                ) from exc
            sums += b * np.array([
                arch.item(),
                lo.item() if lo is not None else 0.0,
                float(np.sum(reg_vals)),
                _joint_identity(bundle),
            ])
            seen += b
        means = sums / seen
        history.append(HistoryRow(epoch, means[0], means[1], means[2], means[3]))
    return net, history


def write_history_csv(path, history: list[HistoryRow]):
    cols = [f.name for f in fields(HistoryRow)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in history:
            writer.writerow(
                [row.epoch]
                + [format(getattr(row, c), ".17g") for c in cols[1:]]
            )


# -- batched inference helpers ------------------------------------------

def encode_dataset(net: DeepJiveNetwork, dataset, batch_size: int = 256) -> dict:
    """Latent matrices for a whole dataset, (rank, n) orientation.

    Returns joint, individual and residualized-individual score lists;
    the residual subtracts the current regression prediction (zero where
    no regression network exists).
    """
    arrays = _dataset_arrays(dataset)
    n = arrays[0].shape[0]
    K = net.spec.K
    joint_chunks = [[] for _ in range(K)]
    indiv_chunks = [[] for _ in range(K)]
    resid_chunks = [[] for _ in range(K)]
    with no_grad():
        for start in range(0, n, batch_size):
            xs = [Tensor(np.ascontiguousarray(a[start : start + batch_size]))
                  for a in arrays]
            bundle = net.encode(xs)
            _ortho_from_bundle(net, bundle)
            for k in range(K):
                joint_chunks[k].append(bundle.joint_scores(k))
                indiv_chunks[k].append(bundle.individual_scores(k))
                resid_chunks[k].append(bundle.residual_scores(k))
    return {
        "joint": [np.concatenate(c, axis=1) for c in joint_chunks],
        "individual": [np.concatenate(c, axis=1) for c in indiv_chunks],
        "residual": [np.concatenate(c, axis=1) for c in resid_chunks],
    }


def reconstruct_dataset(net: DeepJiveNetwork, dataset,
                        batch_size: int = 256) -> ForwardResult:
    """Full-dataset reconstructions as stacked numpy arrays."""
    arrays = _dataset_arrays(dataset)
    n = arrays[0].shape[0]
    K = net.spec.K
    recon = [[] for _ in range(K)]
    jpart = [[] for _ in range(K)]
    spart = [[] for _ in range(K)]
    with no_grad():
        for start in range(0, n, batch_size):
            xs = [Tensor(np.ascontiguousarray(a[start : start + batch_size]))
                  for a in arrays]
            fwd = net.forward(xs)
            for k in range(K):
                recon[k].append(fwd.recon[k].data)
                jpart[k].append(fwd.joint_part[k].data)
                spart[k].append(fwd.indiv_part[k].data)
    cat = lambda chunks: [np.concatenate(c, axis=0) for c in chunks]
    return ForwardResult(None, cat(recon), cat(jpart), cat(spart))
