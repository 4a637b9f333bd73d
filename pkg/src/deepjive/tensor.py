"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array and remembers how it was produced, so a
scalar loss can be differentiated with respect to every parameter that fed
into it.  The op set is the minimum needed for the networks in this
project: elementwise arithmetic with broadcasting, matrix multiply, 2D
(transposed) convolution, ReLU, reshape/concatenate, and full reductions.

Gradients accumulate: calling ``backward`` twice without ``zero_grad``
adds the second sweep's gradients onto the first.
"""

from __future__ import annotations

import numpy as np

# When enabled, every op output is checked for NaN/Inf and a
# NonFiniteError is raised at the op that produced the bad value.
_STRICT_FINITE = False
# When grad mode is off, ops run on plain arrays and no graph is built.
_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


def set_strict_finite(flag: bool) -> None:
    global _STRICT_FINITE
    _STRICT_FINITE = bool(flag)


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        # Leaf parameters expose a zero gradient from the start, so a
        # parameter disconnected from the loss reads as gradient zero.
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        if _STRICT_FINITE and not np.all(np.isfinite(data)):
            raise NonFiniteError("op produced non-finite values")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def _accum(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Reverse topological sweep from a scalar node.

        Each graph node is visited exactly once; parameter gradients are
        added to, never overwritten.
        """
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar loss")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("loss is non-finite")

        # Iterative post-order DFS; recursion would limit graph depth.
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise ops ---------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, Tensor):
            a = self
            c = float(other)

            def back_const(g, a=a):
                a._accum(g)

            return Tensor._make(a.data + c, (a,), back_const)
        a, b = self, other

        def back(g, a=a, b=b):
            a._accum(_unbroadcast(g, a.data.shape))
            b._accum(_unbroadcast(g, b.data.shape))

        return Tensor._make(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def back(g, a=a):
            a._accum(-g)

        return Tensor._make(-a.data, (a,), back)

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            return self + (-float(other))
        a, b = self, other

        def back(g, a=a, b=b):
            a._accum(_unbroadcast(g, a.data.shape))
            b._accum(_unbroadcast(-g, b.data.shape))

        return Tensor._make(a.data - b.data, (a, b), back)

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            a = self
            c = float(other)

            def back_scale(g, a=a, c=c):
                a._accum(g * c)

            return Tensor._make(a.data * c, (a,), back_scale)
        a, b = self, other

        def back(g, a=a, b=b):
            a._accum(_unbroadcast(g * b.data, a.data.shape))
            b._accum(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._make(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def relu(self) -> "Tensor":
        a = self
        out_data = np.maximum(a.data, 0.0)

        def back(g, a=a):
            # Subgradient at exactly 0 is taken as 0.
            a._accum(g * (a.data > 0.0))

        return Tensor._make(out_data, (a,), back)

    # -- reductions --------------------------------------------------------

    def sum(self) -> "Tensor":
        a = self

        def back(g, a=a):
            a._accum(np.full_like(a.data, g.reshape(())))

        return Tensor._make(np.asarray(a.data.sum()), (a,), back)

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.size)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, shape) -> "Tensor":
        a = self
        shape = tuple(shape)

        def back(g, a=a):
            a._accum(g.reshape(a.data.shape))

        return Tensor._make(a.data.reshape(shape), (a,), back)

    # -- linear algebra ----------------------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2D matrix product with gradients for both operands."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner extents differ: {a.data.shape} vs {b.data.shape}"
        )

    def back(g, a=a, b=b):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    return Tensor._make(a.data @ b.data, (a, b), back)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    sizes = [t.data.shape[axis] for t in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g, parts=parts, splits=splits, axis=axis):
        for t, piece in zip(parts, np.split(g, splits, axis=axis)):
            t._accum(piece)

    return Tensor._make(
        np.concatenate([t.data for t in parts], axis=axis), tuple(parts), back
    )


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared elementwise differences.

    All squared-norm loss terms in this project are normalized by element
    count, so loss magnitudes stay comparable across modality sizes.
    """
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse shape mismatch: {a.data.shape} vs {b.data.shape}")
    d = a - b
    return (d * d).mean()


# -- 2D convolution ------------------------------------------------------
#
# Three array-level primitives cover both conv2d and its transpose:
# the forward cross-correlation, the gradient w.r.t. the input (which is
# itself the transposed convolution), and the gradient w.r.t. the kernels.


def conv2d_output_shape(hw, khw, stride, padding) -> tuple[int, int]:
    (h, w), (kh, kw), (sh, sw), (ph, pw) = hw, khw, stride, padding
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}"
        )
    return ((h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1)


def _conv_forward(x, k, stride, padding):
    """x: (B,C,H,W), k: (O,C,kh,kw) -> (B,O,H',W'). Cross-correlation.

    One channel-contraction GEMM per kernel offset; keeps the working set
    at input size instead of materializing every window at once.
    """
    sh, sw = stride
    ph, pw = padding
    kh, kw = k.shape[2], k.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho = (xp.shape[2] - kh) // sh + 1
    wo = (xp.shape[3] - kw) // sw + 1
    acc = np.zeros((x.shape[0], ho, wo, k.shape[0]))
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u : u + sh * ho : sh, v : v + sw * wo : sw]
            # (B, C, H', W') x (O, C) -> (B, H', W', O)
            acc += np.tensordot(xs, k[:, :, u, v], axes=([1], [1]))
    return np.ascontiguousarray(acc.transpose(0, 3, 1, 2))


def _conv_kernel_grad(x, gy, stride, padding, kshape):
    """Gradient of the conv output w.r.t. the kernels."""
    sh, sw = stride
    ph, pw = padding
    kh, kw = kshape[2], kshape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho, wo = gy.shape[2], gy.shape[3]
    gk = np.empty(kshape)
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u : u + sh * ho : sh, v : v + sw * wo : sw]
            # (B, O, H', W') x (B, C, H', W') -> (O, C)
            gk[:, :, u, v] = np.tensordot(gy, xs, axes=([0, 2, 3], [0, 2, 3]))
    return gk


def _conv_input_grad(gy, k, stride, padding, xshape):
    """Scatter the output gradient back onto the (padded) input grid."""
    sh, sw = stride
    ph, pw = padding
    kh, kw = k.shape[2], k.shape[3]
    b, c, h, w = xshape
    hp, wp = h + 2 * ph, w + 2 * pw
    ho, wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros((b, c, hp, wp))
    # (B, O, H', W') x (O, C) per kernel offset -> (B, H', W', C)
    for u in range(kh):
        for v in range(kw):
            t = np.tensordot(gy, k[:, :, u, v], axes=([1], [0]))
            gxp[:, :, u : u + sh * ho : sh, v : v + sw * wo : sw] += t.transpose(
                0, 3, 1, 2
            )
    return gxp[:, :, ph : ph + h, pw : pw + w]


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.data.ndim == 3:
        return x.reshape((1,) + x.data.shape), True
    if x.data.ndim == 4:
        return x, False
    raise ShapeError(f"conv input must be (C,H,W) or (B,C,H,W), got {x.data.shape}")


def conv2d(x: Tensor, kernels: Tensor, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Strided 2D cross-correlation of (B,C,H,W) input with (O,C,kh,kw) kernels.

    A single (C,H,W) input is treated as a batch of one and returned
    without the batch axis.  Output spatial extent is
    floor((H + 2p - k) / s) + 1 per axis.
    """
    xb, squeeze = _as_batched(x)
    if kernels.data.ndim != 4:
        raise ShapeError("kernels must be (O,C,kh,kw)")
    if kernels.data.shape[1] != xb.data.shape[1]:
        raise ShapeError(
            f"kernel channels {kernels.data.shape[1]} != input channels {xb.data.shape[1]}"
        )
    conv2d_output_shape(
        xb.data.shape[2:], kernels.data.shape[2:], stride, padding
    )
    xshape = xb.data.shape

    def back(g, xb=xb, kernels=kernels):
        xb._accum(_conv_input_grad(g, kernels.data, stride, padding, xshape))
        kernels._accum(
            _conv_kernel_grad(xb.data, g, stride, padding, kernels.data.shape)
        )

    out = Tensor._make(
        _conv_forward(xb.data, kernels.data, stride, padding), (xb, kernels), back
    )
    return out.reshape(out.data.shape[1:]) if squeeze else out


def conv_transpose2d(
    x: Tensor,
    kernels: Tensor,
    stride=(1, 1),
    padding=(0, 0),
    output_padding=(0, 0),
) -> Tensor:
    """Transposed 2D convolution; the shape inverse of ``conv2d``.

    ``kernels`` has shape (C_in, C_out, kh, kw).  Output spatial extent is
    (H - 1) * s - 2p + k + output_padding per axis, and output_padding
    must be < stride.
    """
    xb, squeeze = _as_batched(x)
    if kernels.data.ndim != 4 or kernels.data.shape[0] != xb.data.shape[1]:
        raise ShapeError("transposed-conv kernels must be (C_in,C_out,kh,kw)")
    sh, sw = stride
    ph, pw = padding
    oh, ow = output_padding
    if oh >= sh or ow >= sw:
        raise ShapeError("output_padding must be smaller than stride")
    kh, kw = kernels.data.shape[2], kernels.data.shape[3]
    b, _, h, w = xb.data.shape
    c_out = kernels.data.shape[1]
    out_h = (h - 1) * sh - 2 * ph + kh + oh
    out_w = (w - 1) * sw - 2 * pw + kw + ow
    if out_h <= 0 or out_w <= 0:
        raise ShapeError("transposed-conv output extent would be non-positive")
    # Forward is the conv input-gradient scatter; the (C_in,C_out,kh,kw)
    # layout already puts the contraction axis first.
    out_shape = (b, c_out, out_h, out_w)

    def back(g, xb=xb, kernels=kernels):
        # Input grad of a scatter is the gather: a plain forward conv.
        xb._accum(_conv_forward(g, kernels.data, stride, padding))
        kernels._accum(
            _conv_kernel_grad(g, xb.data, stride, padding, kernels.data.shape)
        )

    out = Tensor._make(
        _conv_input_grad(xb.data, kernels.data, stride, padding, out_shape),
        (xb, kernels),
        back,
    )
    return out.reshape(out.data.shape[1:]) if squeeze else out
