"""Experiment configuration: one JSON document, strict keys, full defaults.

The file mirrors this dataclass tree; unknown keys anywhere are rejected
so typos fail loudly.  ``resolved()`` fills the per-experiment defaults
(sample counts, split fractions, rank-search width) and is what
``show-config`` prints.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .networks import NetworkSpec, spec_1d, spec_overlaid, spec_paired
from .training import TrainConfig

EXPERIMENTS = ("synthetic-1d", "mnist-overlaid", "mnist-paired", "custom")


@dataclass
class DataConfig:
    n: int | None = None             # samples; None = experiment default
    p: int = 100                     # variables per 1D block
    train_frac: float | None = None  # None = experiment default
    mnist_dir: str | None = None     # overrides DEEPJIVE_MNIST_DIR
    gamma_offset: float = 0.0        # 1D ground-truth shift


@dataclass
class NetworkConfig:
    variant: str = "explicit"
    n_conv: int = 2
    joint_rank: int | None = None
    individual_ranks: list | None = None
    shared_trunk: bool | None = None
    custom_spec: dict | None = None  # full NetworkSpec JSON, custom only


@dataclass
class RankConfig:
    r_max: int | None = None
    threshold: float | None = None
    mode: str = "curve"
    n_sims: int = 100
    confidence: float = 0.95


@dataclass
class ExperimentConfig:
    experiment: str = "synthetic-1d"
    seed: int = 0                    # data seed
    out: str = "runs/out"
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rank: RankConfig = field(default_factory=RankConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(
                f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}"
            )

    def resolved(self) -> "ExperimentConfig":
        data = replace(self.data)
        rank = replace(self.rank)
        if data.n is None:
            data.n = {"synthetic-1d": 100, "mnist-overlaid": 9000}.get(
                self.experiment, 0
            )
        if data.train_frac is None:
            data.train_frac = 0.9 if self.experiment == "synthetic-1d" else 8 / 9
        if rank.r_max is None:
            rank.r_max = 4 if self.experiment == "synthetic-1d" else 16
        return replace(self, data=data, rank=rank)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _parse_section(obj, cls, section):
    if not isinstance(obj, dict):
        raise ValueError(f"config section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(
            f"unknown keys in {section!r}: {sorted(unknown)} "
            f"(known: {sorted(known)})"
        )
    return cls(**obj)


def config_from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ValueError("config root must be a JSON object")
    known = {"experiment", "seed", "out", "data", "network", "train", "rank"}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"unknown top-level keys: {sorted(unknown)}")
    return ExperimentConfig(
        experiment=obj.get("experiment", "synthetic-1d"),
        seed=int(obj.get("seed", 0)),
        out=str(obj.get("out", "runs/out")),
        data=_parse_section(obj.get("data", {}), DataConfig, "data"),
        network=_parse_section(obj.get("network", {}), NetworkConfig, "network"),
        train=_parse_section(obj.get("train", {}), TrainConfig, "train"),
        rank=_parse_section(obj.get("rank", {}), RankConfig, "rank"),
    )


def load_config(path) -> ExperimentConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    return config_from_dict(obj)


def resolve_network_spec(cfg: ExperimentConfig,
                         input_shapes=None) -> NetworkSpec:
    """NetworkSpec for the experiment, with overrides applied.

    For the 1D experiment the block widths come from the dataset when
    given (``input_shapes``), falling back to ``data.p``.
    """
    net = cfg.network
    if cfg.experiment == "synthetic-1d":
        if input_shapes is not None:
            p = (input_shapes[0][0], input_shapes[1][0])
        else:
            p = (cfg.data.p, cfg.data.p)
        spec = spec_1d(p=p, variant=net.variant)
    elif cfg.experiment == "mnist-overlaid":
        spec = spec_overlaid(n_conv=net.n_conv, variant=net.variant)
    elif cfg.experiment == "mnist-paired":
        spec = spec_paired(n_conv=net.n_conv, variant=net.variant)
    else:
        if net.custom_spec is None:
            raise ValueError("custom experiment requires network.custom_spec")
        spec = NetworkSpec.from_json(net.custom_spec)
    if net.joint_rank is not None:
        spec.joint_rank = int(net.joint_rank)
    if net.individual_ranks is not None:
        spec.individual_ranks = [int(r) for r in net.individual_ranks]
    if net.shared_trunk is not None:
        spec.shared_trunk = bool(net.shared_trunk)
    return spec
