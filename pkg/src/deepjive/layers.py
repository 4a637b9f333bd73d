"""Network building blocks: dense, 2D conv/transposed conv, ReLU, shape ops.

Layers own their parameters as ``Tensor`` leaves and expose them through
``parameters()`` as a flat dict of dotted names, which is also the naming
scheme used by checkpoints.  Initialization draws from a caller-supplied
``numpy.random.Generator`` so identical seeds give identical networks.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat, conv2d, conv2d_output_shape, conv_transpose2d


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 0.0
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    def parameters(self) -> dict[str, Tensor]:
        return {}

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class Dense(Layer):
    """Affine map y = x W + b for batch-first inputs (B, in) -> (B, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(
            _uniform_init(rng, in_features, (in_features, out_features)),
            requires_grad=True,
        )
        self.bias = (
            Tensor(_uniform_init(rng, in_features, (out_features,)), requires_grad=True)
            if bias
            else None
        )

    def parameters(self):
        params = {"weight": self.weight}
        if self.bias is not None:
            params["bias"] = self.bias
        return params

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out

    def apply_frozen(self, x: Tensor) -> Tensor:
        """Forward pass through constant copies of the parameters.

        Gradients flow to ``x`` but not to this layer's weights; used when
        the adversarial head must shape the encoder without being updated
        itself.
        """
        out = x @ Tensor(self.weight.data)
        return out + Tensor(self.bias.data) if self.bias is not None else out


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel_size,
                 stride, rng: np.random.Generator, padding=(0, 0)):
        kh, kw = kernel_size
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        fan_in = in_channels * kh * kw
        self.kernels = Tensor(
            _uniform_init(rng, fan_in, (out_channels, in_channels, kh, kw)),
            requires_grad=True,
        )
        # (O,1,1) broadcasts against (B,O,H,W).
        self.bias = Tensor(
            _uniform_init(rng, fan_in, (out_channels, 1, 1)), requires_grad=True
        )

    def parameters(self):
        return {"kernels": self.kernels, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernels, self.stride, self.padding) + self.bias

    def output_shape(self, in_shape):
        c, h, w = in_shape
        ho, wo = conv2d_output_shape(
            (h, w), self.kernels.data.shape[2:], self.stride, self.padding
        )
        return (self.kernels.data.shape[0], ho, wo)


class ConvTranspose2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel_size,
                 stride, rng: np.random.Generator, padding=(0, 0),
                 output_padding=(0, 0)):
        kh, kw = kernel_size
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        self.output_padding = tuple(output_padding)
        fan_in = in_channels * kh * kw
        self.kernels = Tensor(
            _uniform_init(rng, fan_in, (in_channels, out_channels, kh, kw)),
            requires_grad=True,
        )
        self.bias = Tensor(
            _uniform_init(rng, fan_in, (out_channels, 1, 1)), requires_grad=True
        )

    def parameters(self):
        return {"kernels": self.kernels, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        out = conv_transpose2d(
            x, self.kernels, self.stride, self.padding, self.output_padding
        )
        return out + self.bias


class ReLU(Layer):
    def __call__(self, x: Tensor) -> Tensor:
        return x.relu()


class Flatten(Layer):
    """(B, ...) -> (B, prod(...))."""

    def __call__(self, x: Tensor) -> Tensor:
        b = x.data.shape[0]
        return x.reshape((b, int(np.prod(x.data.shape[1:]))))


class Unflatten(Layer):
    def __init__(self, feature_shape):
        self.feature_shape = tuple(feature_shape)

    def __call__(self, x: Tensor) -> Tensor:
        return x.reshape((x.data.shape[0],) + self.feature_shape)


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def parameters(self):
        params = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters().items():
                params[f"{i}.{name}"] = p
        return params

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


def concat_features(tensors: list[Tensor]) -> Tensor:
    """Concatenate batch-first feature tensors along the feature axis."""
    return concat(tensors, axis=1)
