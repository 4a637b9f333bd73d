"""DeepJIVE network structure: paired joint/individual autoencoders.

A network holds, per modality, a joint encoder, an individual encoder,
and a decoder for each branch; reconstructions are the sum of the two
decoded branches.  The ``merged`` variant adds one dense head that maps
the concatenated per-modality joint pre-latents to a single shared joint
latent.  Each modality with a non-empty individual branch also carries a
small regression network (a single dense layer) used by the
orthogonality penalty.

Shapes are batch-first everywhere inside the graph: flat modalities are
(B, p), image modalities (B, C, H, W).  Latent matrices are exposed to
callers in the (rank, n) orientation used by the linear-algebra side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .containers import load_container, save_container
from .layers import (
    Conv2d,
    ConvTranspose2d,
    Dense,
    Flatten,
    Layer,
    ReLU,
    Sequential,
    Unflatten,
)
from .tensor import Tensor, concat, conv2d_output_shape

VARIANTS = ("explicit", "exchange", "merged")


@dataclass(frozen=True)
class ConvSpec:
    kernels: int
    kernel_size: tuple = (3, 3)
    stride: tuple = (1, 1)


@dataclass
class NetworkSpec:
    input_shapes: list            # per modality: (p,) or (C, H, W)
    conv_stacks: list             # per modality: list[ConvSpec], [] = linear
    joint_rank: int
    individual_ranks: list
    variant: str = "explicit"
    shared_trunk: bool = False

    @property
    def K(self) -> int:
        return len(self.input_shapes)

    def __post_init__(self):
        self.input_shapes = [tuple(s) for s in self.input_shapes]
        self.conv_stacks = [
            [c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in stack]
            for stack in self.conv_stacks
        ]
        self.individual_ranks = list(self.individual_ranks)
        if self.K < 2:
            raise ValueError("DeepJIVE needs at least two modalities")
        if len(self.conv_stacks) != self.K or len(self.individual_ranks) != self.K:
            raise ValueError("per-modality fields must all have length K")
        if self.joint_rank < 1:
            raise ValueError("joint rank must be >= 1")
        if any(r < 0 for r in self.individual_ranks):
            raise ValueError("individual ranks must be >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        for shape, stack in zip(self.input_shapes, self.conv_stacks):
            if len(shape) not in (1, 3):
                raise ValueError(f"input shape {shape} must be (p,) or (C,H,W)")
            if stack and len(shape) != 3:
                raise ValueError("conv layers require a (C,H,W) input shape")

    def to_json(self) -> dict:
        return {
            "input_shapes": [list(s) for s in self.input_shapes],
            "conv_stacks": [
                [
                    {
                        "kernels": c.kernels,
                        "kernel_size": list(c.kernel_size),
                        "stride": list(c.stride),
                    }
                    for c in stack
                ]
                for stack in self.conv_stacks
            ],
            "joint_rank": self.joint_rank,
            "individual_ranks": list(self.individual_ranks),
            "variant": self.variant,
            "shared_trunk": self.shared_trunk,
        }

    @staticmethod
    def from_json(obj: dict) -> "NetworkSpec":
        return NetworkSpec(
            input_shapes=[tuple(s) for s in obj["input_shapes"]],
            conv_stacks=[
                [
                    ConvSpec(
                        kernels=int(c["kernels"]),
                        kernel_size=tuple(c["kernel_size"]),
                        stride=tuple(c["stride"]),
                    )
                    for c in stack
                ]
                for stack in obj["conv_stacks"]
            ],
            joint_rank=int(obj["joint_rank"]),
            individual_ranks=[int(r) for r in obj["individual_ranks"]],
            variant=obj["variant"],
            shared_trunk=bool(obj["shared_trunk"]),
        )


def spec_1d(p: tuple = (100, 100), variant: str = "explicit") -> NetworkSpec:
    """Two flat 100-variable modalities, single linear layers, ranks 1/1/1."""
    return NetworkSpec(
        input_shapes=[(p[0],), (p[1],)],
        conv_stacks=[[], []],
        joint_rank=1,
        individual_ranks=[1, 1],
        variant=variant,
    )


def spec_overlaid(n_conv: int = 2, variant: str = "merged") -> NetworkSpec:
    """28x28 image pair; up to five 44-kernel 3x3 stride-1 ReLU conv layers."""
    if not 0 <= n_conv <= 5:
        raise ValueError("overlaid preset supports 0..5 conv layers")
    stack = [ConvSpec(44, (3, 3), (1, 1)) for _ in range(n_conv)]
    return NetworkSpec(
        input_shapes=[(1, 28, 28), (1, 28, 28)],
        conv_stacks=[list(stack), list(stack)],
        joint_rank=10,
        individual_ranks=[2, 2],
        variant=variant,
    )


def spec_paired(n_conv: int = 2, variant: str = "merged") -> NetworkSpec:
    """28x28 image pair; shared trunk of 16 then 32 stride-2 conv layers."""
    if not 0 <= n_conv <= 2:
        raise ValueError("paired preset supports 0..2 conv layers")
    kernels = [16, 32][:n_conv]
    stack = [ConvSpec(c, (3, 3), (2, 2)) for c in kernels]
    return NetworkSpec(
        input_shapes=[(1, 28, 28), (1, 28, 28)],
        conv_stacks=[list(stack), list(stack)],
        joint_rank=10,
        individual_ranks=[26, 26],
        variant=variant,
        shared_trunk=True,
    )


def _conv_shape_chain(input_shape, stack):
    """Spatial/channel shapes before each conv layer and after the last."""
    shapes = [tuple(input_shape)]
    for cs in stack:
        c, h, w = shapes[-1]
        ho, wo = conv2d_output_shape((h, w), cs.kernel_size, cs.stride, (0, 0))
        shapes.append((cs.kernels, ho, wo))
    return shapes


def _build_encoder_trunk(input_shape, stack, rng) -> tuple[Sequential, int]:
    layers: list[Layer] = []
    shapes = _conv_shape_chain(input_shape, stack) if stack else [input_shape]
    for cs, shape in zip(stack, shapes):
        layers.append(Conv2d(shape[0], cs.kernels, cs.kernel_size, cs.stride, rng))
        layers.append(ReLU())
    layers.append(Flatten())
    return Sequential(layers), int(np.prod(shapes[-1]))


def _build_decoder(rank, input_shape, stack, rng) -> Sequential:
    """Mirror of trunk+head: dense up to the feature volume, then
    transposed convolutions back to the input extent.  Final layer is
    linear so outputs cover the reals."""
    shapes = _conv_shape_chain(input_shape, stack) if stack else [input_shape]
    flat = int(np.prod(shapes[-1]))
    layers: list[Layer] = [Dense(rank, flat, rng)]
    if not stack:
        if len(input_shape) == 3:
            layers.append(Unflatten(input_shape))
        return Sequential(layers)
    layers.append(ReLU())
    layers.append(Unflatten(shapes[-1]))
    for i in range(len(stack) - 1, -1, -1):
        cs = stack[i]
        c_in, h_in, w_in = shapes[i + 1]
        c_out, h_out, w_out = shapes[i]
        kh, kw = cs.kernel_size
        sh, sw = cs.stride
        oh = h_out - ((h_in - 1) * sh + kh)
        ow = w_out - ((w_in - 1) * sw + kw)
        if not (0 <= oh < sh and 0 <= ow < sw):
            raise ValueError(
                f"conv layer {i} is not invertible by a stride-matched "
                f"transposed convolution (needs output padding {(oh, ow)})"
            )
        layers.append(
            ConvTranspose2d(
                c_in, c_out, cs.kernel_size, cs.stride, rng,
                output_padding=(oh, ow),
            )
        )
        if i > 0:
            layers.append(ReLU())
    return Sequential(layers)


class _Modality:
    """One modality's encoders, decoders and regression head."""

    def __init__(self, input_shape, stack, joint_rank, indiv_rank,
                 shared_trunk, rng):
        self.input_shape = tuple(input_shape)
        self.indiv_rank = indiv_rank
        self.joint_trunk, self.flat_dim = _build_encoder_trunk(input_shape, stack, rng)
        self.joint_head = Dense(self.flat_dim, joint_rank, rng)
        if shared_trunk:
            self.indiv_trunk = self.joint_trunk
        else:
            self.indiv_trunk, _ = _build_encoder_trunk(input_shape, stack, rng)
        self.shared = shared_trunk
        self.indiv_head = (
            Dense(self.flat_dim, indiv_rank, rng) if indiv_rank > 0 else None
        )
        self.joint_dec = _build_decoder(joint_rank, input_shape, stack, rng)
        self.indiv_dec = (
            _build_decoder(indiv_rank, input_shape, stack, rng)
            if indiv_rank > 0
            else None
        )
        self.reg = Dense(joint_rank, indiv_rank, rng) if indiv_rank > 0 else None

    def named_layers(self):
        if self.shared:
            parts = [("trunk", self.joint_trunk)]
        else:
            parts = [("jtrunk", self.joint_trunk), ("strunk", self.indiv_trunk)]
        parts.append(("jhead", self.joint_head))
        if self.indiv_head is not None:
            parts.append(("shead", self.indiv_head))
        parts.append(("jdec", self.joint_dec))
        if self.indiv_dec is not None:
            parts.append(("sdec", self.indiv_dec))
        return parts


@dataclass
class LatentBundle:
    """Latent matrices from one encoder pass.

    Tensors are batch-first (B, rank); the ``*_scores`` accessors return
    (rank, n) copies.  For the merged variant every modality index maps
    to the one shared joint latent tensor.
    """

    joint: list          # K tensors (same object K times when merged)
    individual: list     # K entries, None where the branch is absent
    merged: bool
    residual_individual: list | None = None  # set by the ortho penalty

    def joint_scores(self, k: int) -> np.ndarray:
        return self.joint[k].data.T.copy()

    def individual_scores(self, k: int) -> np.ndarray:
        t = self.individual[k]
        if t is None:
            return np.zeros((0, self.joint[k].data.shape[0]))
        return t.data.T.copy()

    def residual_scores(self, k: int) -> np.ndarray:
        t = (self.residual_individual or [None] * len(self.joint))[k]
        if t is None:
            return self.individual_scores(k)
        return t.data.T.copy()


@dataclass
class ForwardResult:
    latents: LatentBundle
    recon: list           # X_hat_k
    joint_part: list      # J_hat_k
    indiv_part: list      # S_hat_k (zero tensor where branch absent)


class DeepJiveNetwork:
    def __init__(self, spec: NetworkSpec, modalities: list[_Modality],
                 merge_head: Dense | None):
        self.spec = spec
        self.modalities = modalities
        self.merge_head = merge_head

    # -- parameter access ------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for k, mod in enumerate(self.modalities):
            for prefix, layer in mod.named_layers():
                for name, p in layer.parameters().items():
                    params[f"m{k}.{prefix}.{name}"] = p
        if self.merge_head is not None:
            for name, p in self.merge_head.parameters().items():
                params[f"merge.{name}"] = p
        for k, mod in enumerate(self.modalities):
            if mod.reg is not None:
                for name, p in mod.reg.parameters().items():
                    params[f"m{k}.reg.{name}"] = p
        return params

    def main_parameters(self) -> list[Tensor]:
        return [p for n, p in self.parameters().items() if ".reg." not in n]

    def regression_parameters(self) -> list[Tensor]:
        return [p for n, p in self.parameters().items() if ".reg." in n]

    # -- forward ---------------------------------------------------------
    def _check_batch(self, xs):
        if len(xs) != self.spec.K:
            raise ValueError(f"expected {self.spec.K} modalities, got {len(xs)}")
        b = xs[0].data.shape[0]
        for k, (x, shape) in enumerate(zip(xs, self.spec.input_shapes)):
            if x.data.shape != (b,) + shape:
                raise ValueError(
                    f"modality {k}: batch shape {x.data.shape} does not match "
                    f"({b},)+{shape}"
                )

    def encode(self, xs: list[Tensor]) -> LatentBundle:
        self._check_batch(xs)
        pre = [
            mod.joint_head(mod.joint_trunk(x))
            for mod, x in zip(self.modalities, xs)
        ]
        if self.spec.variant == "merged":
            shared = self.merge_head(concat(pre, axis=1))
            joint = [shared] * self.spec.K
        else:
            joint = pre
        indiv = [
            mod.indiv_head(mod.indiv_trunk(x)) if mod.indiv_head is not None else None
            for mod, x in zip(self.modalities, xs)
        ]
        return LatentBundle(joint, indiv, self.spec.variant == "merged")

    def decode(self, bundle: LatentBundle) -> ForwardResult:
        recon, jpart, spart = [], [], []
        for k, mod in enumerate(self.modalities):
            j = mod.joint_dec(bundle.joint[k])
            if mod.indiv_dec is not None:
                s = mod.indiv_dec(bundle.individual[k])
                x_hat = j + s
            else:
                s = Tensor(np.zeros(j.data.shape))
                x_hat = j
            jpart.append(j)
            spart.append(s)
            recon.append(x_hat)
        return ForwardResult(bundle, recon, jpart, spart)

    def forward(self, xs: list[Tensor]) -> ForwardResult:
        return self.decode(self.encode(xs))


def build_network(spec: NetworkSpec, seed: int) -> DeepJiveNetwork:
    rng = np.random.default_rng(seed)
    modalities = [
        _Modality(shape, stack, spec.joint_rank, r_k, spec.shared_trunk, rng)
        for shape, stack, r_k in zip(
            spec.input_shapes, spec.conv_stacks, spec.individual_ranks
        )
    ]
    merge = (
        Dense(spec.K * spec.joint_rank, spec.joint_rank, rng)
        if spec.variant == "merged"
        else None
    )
    return DeepJiveNetwork(spec, modalities, merge)


# -- checkpoints ---------------------------------------------------------

def save_checkpoint(net: DeepJiveNetwork, path, extra_meta: dict | None = None):
    meta = {"kind": "checkpoint", "netspec": net.spec.to_json()}
    if extra_meta:
        meta.update(extra_meta)
    save_container(path, {n: p.data for n, p in net.parameters().items()}, meta)


def load_checkpoint(path) -> tuple[DeepJiveNetwork, dict]:
    arrays, meta = load_container(path)
    if meta.get("kind") != "checkpoint" or "netspec" not in meta:
        raise ValueError(f"{path}: container is not a network checkpoint")
    spec = NetworkSpec.from_json(meta["netspec"])
    net = build_network(spec, seed=0)
    params = net.parameters()
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise ValueError(
            f"{path}: checkpoint/parameter mismatch "
            f"(missing {sorted(missing)}, extra {sorted(extra)})"
        )
    for name, p in params.items():
        if p.data.shape != arrays[name].shape:
            raise ValueError(f"{path}: shape mismatch for {name}")
        p.data[...] = arrays[name]
    return net, meta


def spec_summary(spec: NetworkSpec) -> str:
    return json.dumps(spec.to_json(), indent=2)
