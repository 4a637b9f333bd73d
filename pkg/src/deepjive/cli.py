"""Command-line experiment runner.

Subcommands: gen-data, train, rank-select, evaluate, show-config.  All
artifacts land in the config's output directory; every command is a
deterministic function of its config, so reruns overwrite files with
identical bytes.  CSV floats carry 17 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analyze import (
    MetricsReport,
    fit_linear_classifier,
    joint_individual_dependence,
    latent_perturbation_map,
    recovery_score,
    write_metrics_csv,
    write_pgm,
)
from .config import ExperimentConfig, load_config, resolve_network_spec
from .containers import ContainerError, save_container
from .datagen import (
    gen_1d,
    gen_offset_1d,
    gen_overlaid,
    gen_paired,
    load_dataset,
    load_mnist,
    save_dataset,
    save_ground_truth,
)
from .idx import IdxError
from .networks import build_network, load_checkpoint, save_checkpoint
from .rank import build_rank_report, fit_plain_autoencoder, write_rank_report_csv
from .training import (
    TrainingDiverged,
    encode_dataset,
    reconstruct_dataset,
    train,
    write_history_csv,
)

_FMT = ".17g"


def _g(x) -> str:
    return format(float(x), _FMT)


# -- corpus lookup -------------------------------------------------------

_IDX_CANDIDATES = [
    ("images-idx3-ubyte", "labels-idx1-ubyte"),
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
]


def _load_corpus(cfg: ExperimentConfig):
    root = cfg.data.mnist_dir or os.environ.get("DEEPJIVE_MNIST_DIR")
    if not root:
        raise FileNotFoundError(
            "no digit corpus configured: set data.mnist_dir in the config or "
            "the DEEPJIVE_MNIST_DIR environment variable "
            "(scripts/make_desk_corpus.py writes a desk-scale corpus)"
        )
    root = Path(root)
    for img_name, lab_name in _IDX_CANDIDATES:
        img, lab = root / img_name, root / lab_name
        if img.exists() and lab.exists():
            return load_mnist(img, lab)
    raise FileNotFoundError(
        f"no IDX image/label pair found under {root} "
        f"(looked for {[c[0] for c in _IDX_CANDIDATES]})"
    )


# -- commands ------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig) -> int:
    cfg = cfg.resolved()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = None
    if cfg.experiment == "synthetic-1d":
        gen = gen_offset_1d if cfg.data.gamma_offset != 0.0 else gen_1d
        if cfg.data.gamma_offset != 0.0:
            dataset, truth = gen(cfg.data.gamma_offset, n=cfg.data.n,
                                 p=cfg.data.p, seed=cfg.seed,
                                 train_frac=cfg.data.train_frac)
        else:
            dataset, truth = gen(n=cfg.data.n, p=cfg.data.p, seed=cfg.seed,
                                 train_frac=cfg.data.train_frac)
    elif cfg.experiment == "mnist-overlaid":
        corpus = _load_corpus(cfg)
        dataset, truth, _labels = gen_overlaid(
            corpus, cfg.data.n, seed=cfg.seed, train_frac=cfg.data.train_frac
        )
    elif cfg.experiment == "mnist-paired":
        corpus = _load_corpus(cfg)
        dataset, _labels = gen_paired(
            corpus, seed=cfg.seed, train_frac=cfg.data.train_frac
        )
    else:
        raise ValueError("gen-data supports the three named experiments only")
    save_dataset(out / "dataset.djc", dataset)
    if truth is not None:
        save_ground_truth(out / "ground_truth.djc", truth)
    shapes = [tuple(m.shape) for m in dataset.modalities]
    print(f"wrote {out / 'dataset.djc'}: blocks {shapes}, "
          f"split {len(dataset.split.train)}:{len(dataset.split.test)}")
    if truth is not None:
        print(f"wrote {out / 'ground_truth.djc'}")
    return 0


def _load_run_dataset(cfg: ExperimentConfig):
    path = Path(cfg.out) / "dataset.djc"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run gen-data first")
    return load_dataset(path)


def cmd_train(cfg: ExperimentConfig) -> int:
    cfg = cfg.resolved()
    out = Path(cfg.out)
    dataset, _truth = _load_run_dataset(cfg)
    spec = resolve_network_spec(
        cfg, input_shapes=[m.shape[1:] for m in dataset.modalities]
    )
    net = build_network(spec, seed=cfg.train.seed)
    net, history = train(net, dataset.train_arrays(), cfg.train)
    save_checkpoint(net, out / "checkpoint.djc",
                    extra_meta={"experiment": cfg.experiment})
    write_history_csv(out / "history.csv", history)
    latents = encode_dataset(net, dataset.test_arrays())
    arrays = {}
    for k in range(spec.K):
        arrays[f"joint{k}"] = latents["joint"][k]
        arrays[f"indiv{k}"] = latents["individual"][k]
        arrays[f"resid{k}"] = latents["residual"][k]
    save_container(out / "latents.djc", arrays,
                   {"kind": "latents", "split": "test"})
    final = history[-1]
    print(f"wrote {out / 'checkpoint.djc'}, history.csv, latents.djc "
          f"(final arch loss {final.loss_arch:.6g})")
    return 0


def cmd_rank_select(cfg: ExperimentConfig) -> int:
    cfg = cfg.resolved()
    out = Path(cfg.out)
    dataset, _truth = _load_run_dataset(cfg)
    spec = resolve_network_spec(
        cfg, input_shapes=[m.shape[1:] for m in dataset.modalities]
    )
    latent_mats = []
    for k, block in enumerate(dataset.modalities):
        result = fit_plain_autoencoder(
            block, cfg.rank.r_max, dataset.split, cfg.train,
            conv_stack=spec.conv_stacks[k], seed=cfg.train.seed + k,
        )
        latent_mats.append(result.train_latents)
    report = build_rank_report(
        latent_mats, threshold=cfg.rank.threshold, mode=cfg.rank.mode,
        n_sims=cfg.rank.n_sims, confidence=cfg.rank.confidence, seed=cfg.seed,
    )
    write_rank_report_csv(out, report)
    per_block = [choice.rank for choice in report.modalities]
    print(f"chosen ranks: per-block {per_block}, joint {report.joint.rank} "
          f"(null quantile {report.joint.quantile:.6g})")
    return 0


def _scatter_features(train_lat, test_lat, split, n):
    feats = np.zeros((train_lat.shape[0], n))
    feats[:, split.train] = train_lat
    feats[:, split.test] = test_lat
    return feats


def cmd_evaluate(cfg: ExperimentConfig, checkpoint: str | None,
                 n_maps: int) -> int:
    cfg = cfg.resolved()
    out = Path(cfg.out)
    dataset, truth = _load_run_dataset(cfg)
    truth_path = out / "ground_truth.djc"
    if truth is None and truth_path.exists():
        from .datagen import load_ground_truth
        truth = load_ground_truth(truth_path)
    ckpt_path = Path(checkpoint) if checkpoint else out / "checkpoint.djc"
    if not ckpt_path.exists():
        raise FileNotFoundError(f"{ckpt_path} not found; run train first")
    net, _meta = load_checkpoint(ckpt_path)
    shapes = [tuple(m.shape[1:]) for m in dataset.modalities]
    expected = [tuple(s) for s in net.spec.input_shapes]
    if shapes != expected:
        raise ValueError(
            f"checkpoint expects blocks {expected} but dataset has {shapes}"
        )
    latents = encode_dataset(net, dataset.modalities)
    K = net.spec.K

    # Dependence of individual on joint latents, held-out columns only.
    test_cols = dataset.split.test
    with open(out / "dependence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["modality", "joint_dim", "indiv_dim", "correlation",
                    "slope", "max_abs_correlation"])
        for k in range(K):
            lam_s = latents["individual"][k][:, test_cols]
            if lam_s.shape[0] == 0:
                continue
            dep = joint_individual_dependence(
                latents["joint"][k][:, test_cols], lam_s
            )
            for a in range(dep.correlations.shape[0]):
                for b in range(dep.correlations.shape[1]):
                    w.writerow([k, a, b, _g(dep.correlations[a, b]),
                                _g(dep.slopes[a, b]),
                                _g(dep.max_abs_correlation)])

    # Classifier feature groups, when the dataset is labeled.
    if dataset.labels is not None:
        if net.spec.variant == "merged":
            joint_feats = latents["joint"][0]
        else:
            joint_feats = np.vstack(latents["joint"])
        indiv_blocks = [m for m in latents["residual"] if m.shape[0] > 0]
        reports: list[MetricsReport] = []
        groups = [("joint-only", joint_feats)]
        if indiv_blocks:
            indiv_feats = np.vstack(indiv_blocks)
            groups += [("individual-only", indiv_feats),
                       ("all", np.vstack([joint_feats, indiv_feats]))]
        else:
            groups += [("all", joint_feats)]
        for tag, feats in groups:
            reports.append(
                fit_linear_classifier(feats, dataset.labels, seed=cfg.seed,
                                      split=dataset.split, group=tag)
            )
        baseline_blocks = []
        for k, block in enumerate(dataset.modalities):
            r_total = net.spec.joint_rank + net.spec.individual_ranks[k]
            result = fit_plain_autoencoder(
                block, r_total, dataset.split, cfg.train,
                conv_stack=net.spec.conv_stacks[k], seed=cfg.train.seed + k,
            )
            baseline_blocks.append(
                _scatter_features(result.train_latents, result.test_latents,
                                  dataset.split, dataset.n)
            )
        reports.append(
            fit_linear_classifier(np.vstack(baseline_blocks), dataset.labels,
                                  seed=cfg.seed, split=dataset.split,
                                  group="baseline")
        )
        write_metrics_csv(out / "metrics.csv", reports)

    # Recovery against retained ground truth.
    if truth is not None:
        parts = reconstruct_dataset(net, dataset.modalities)
        with open(out / "recovery.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["modality", "part", "raw_error", "rescaled_error",
                        "correlation"])
            for k in range(K):
                rows = [
                    ("joint", parts.joint_part[k], truth.joint[k]),
                    ("individual", parts.indiv_part[k], truth.individual[k]),
                    ("full", parts.recon[k], dataset.modalities[k]),
                ]
                for tag, est, ref in rows:
                    score = recovery_score(est, ref)
                    w.writerow([k, tag, _g(score.raw_error),
                                _g(score.rescaled_error),
                                _g(score.correlation)])

    if n_maps > 0:
        maps_dir = out / "maps"
        maps_dir.mkdir(exist_ok=True)
        sample = [m[dataset.split.test[:1]] for m in dataset.modalities]
        stds = latents["joint"][0].std(axis=1)
        for comp in range(min(n_maps, net.spec.joint_rank)):
            pmap = latent_perturbation_map(
                net, sample, modality=0, component=comp,
                dataset_std=float(stds[comp]), branch="joint",
            )
            write_pgm(maps_dir / f"joint_m0_c{comp}.pgm", pmap.masked)

    print(f"evaluation artifacts written to {out}")
    return 0


def cmd_show_config(cfg: ExperimentConfig) -> int:
    print(cfg.resolved().to_json())
    return 0


# -- argument plumbing ---------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepjive",
        description="Joint/individual variation experiments with paired "
                    "autoencoders",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen-data", "generate a dataset container (+ ground-truth sidecar)"),
        ("train", "train a network on the generated dataset"),
        ("rank-select", "run the rank-selection procedure"),
        ("evaluate", "metrics, dependence, recovery and difference maps"),
        ("show-config", "print the fully resolved configuration"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH",
                       help="JSON config file (defaults apply when absent)")
        p.add_argument("--seed", type=int, metavar="N",
                       help="override both the data and training seeds")
        p.add_argument("--variant", choices=("explicit", "exchange", "merged"),
                       help="override the network variant")
        p.add_argument("--ortho", choices=("on", "off"),
                       help="toggle the orthogonality penalty")
        p.add_argument("--out", metavar="DIR", help="override the output dir")
        if name == "evaluate":
            p.add_argument("--checkpoint", metavar="PATH",
                           help="checkpoint to evaluate (default: <out>/checkpoint.djc)")
            p.add_argument("--maps", type=int, default=0, metavar="N",
                           help="write difference maps for the first N joint components")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if args.variant is not None:
        cfg.network.variant = args.variant
        if cfg.network.custom_spec is not None:
            cfg.network.custom_spec["variant"] = args.variant
    if args.ortho is not None:
        cfg.train = replace(cfg.train, orthogonality=(args.ortho == "on"))
    if args.out is not None:
        cfg.out = args.out
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "rank-select":
            return cmd_rank_select(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint, args.maps)
        if args.command == "show-config":
            return cmd_show_config(cfg)
        raise ValueError(f"unknown command {args.command!r}")
    except (ValueError, OSError, ContainerError, IdxError,
            TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
