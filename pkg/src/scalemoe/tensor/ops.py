"""Differentiable operations on :class:`~scalemoe.tensor.core.Tensor`.

Each public function validates its arguments, then defers to a
:class:`Function` subclass that owns the forward and backward arithmetic.
Elementwise binary ops broadcast with numpy rules.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..exceptions import (
    DegenerateBatch,
    IndexOutOfRange,
    InvalidAxis,
    InvalidHyperparameter,
    ShapeMismatch,
)
from .core import DTYPE, Function, Tensor, as_tensor


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, size in enumerate(shape):
        if size == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


def _norm_axis(axis: int, ndim: int) -> int:
    if not isinstance(axis, (int, np.integer)) or not -ndim <= axis < ndim:
        raise InvalidAxis(f"axis {axis!r} is invalid for a tensor of rank {ndim}")
    return int(axis) % ndim


def _norm_axes(axis, ndim: int):
    if axis is None:
        return None
    if isinstance(axis, (tuple, list)):
        return tuple(sorted(_norm_axis(a, ndim) for a in axis))
    return (_norm_axis(axis, ndim),)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


class Add(Function):
    def forward(self, a, b):
        _check_broadcast(a, b, "add")
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, g):
        sa, sb = self.shapes
        return unbroadcast(g, sa), unbroadcast(g, sb)


class Sub(Function):
    def forward(self, a, b):
        _check_broadcast(a, b, "sub")
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, g):
        sa, sb = self.shapes
        return unbroadcast(g, sa), unbroadcast(-g, sb)


class Mul(Function):
    def forward(self, a, b):
        _check_broadcast(a, b, "mul")
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        a, b = self.a, self.b
        ga = unbroadcast(g * b, a.shape) if self.inputs[0].requires_grad else None
        gb = unbroadcast(g * a, b.shape) if self.inputs[1].requires_grad else None
        return ga, gb


class Div(Function):
    def forward(self, a, b):
        _check_broadcast(a, b, "div")
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        a, b = self.a, self.b
        ga = unbroadcast(g / b, a.shape)
        gb = unbroadcast(-g * a / (b * b), b.shape)
        return ga, gb


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


class ReLU(Function):
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, g):
        return (g * self.mask,)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, g):
        return (g * self.out,)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, g):
        return (g / self.a,)


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def neg(a) -> Tensor:
    return Neg.apply(a)


def relu(a) -> Tensor:
    return ReLU.apply(a)


def exp(a) -> Tensor:
    return Exp.apply(a)


def log(a) -> Tensor:
    return Log.apply(a)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


class Reshape(Function):
    def forward(self, a, shape):
        self.in_shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise ShapeMismatch(f"cannot reshape {a.shape} into {tuple(shape)}") from None

    def backward(self, g):
        return (g.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, a, axes):
        if axes is None:
            axes = tuple(reversed(range(a.ndim)))
        if sorted(axes) != list(range(a.ndim)):
            raise InvalidAxis(f"axes {axes} are not a permutation of rank {a.ndim}")
        self.inverse = tuple(np.argsort(axes))
        return a.transpose(axes)

    def backward(self, g):
        return (g.transpose(self.inverse),)


class Concat(Function):
    def forward(self, *arrays, axis):
        ax = _norm_axis(axis, arrays[0].ndim)
        ref = arrays[0].shape
        for arr in arrays[1:]:
            if arr.ndim != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(arr.shape, ref)) if i != ax
            ):
                raise ShapeMismatch(f"concat along {ax}: {ref} vs {arr.shape}")
        self.axis = ax
        self.splits = np.cumsum([arr.shape[ax] for arr in arrays])[:-1]
        return np.concatenate(arrays, axis=ax)

    def backward(self, g):
        return tuple(np.split(g, self.splits, axis=self.axis))


class Take(Function):
    """Select entries along ``axis`` by integer index (repeats allowed)."""

    def forward(self, a, indices, axis):
        ax = _norm_axis(axis, a.ndim)
        idx = np.asarray(indices)
        if idx.size and (idx.min() < 0 or idx.max() >= a.shape[ax]):
            raise IndexOutOfRange(f"index out of range for axis {ax} of size {a.shape[ax]}")
        self.in_shape, self.axis, self.idx = a.shape, ax, idx
        return np.take(a, idx, axis=ax)

    def backward(self, g):
        ax, idx = self.axis, self.idx
        out = np.zeros(self.in_shape, dtype=DTYPE)
        # move the gathered axes to the front so add.at can scatter rows
        g_front = np.moveaxis(g, tuple(range(ax, ax + idx.ndim)), tuple(range(idx.ndim)))
        out_front = np.moveaxis(out, ax, 0)
        np.add.at(out_front, idx, g_front)
        return (out,)


def reshape(a, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes=None) -> Tensor:
    return Transpose.apply(a, axes=None if axes is None else tuple(axes))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeMismatch("concat of an empty sequence")
    return Concat.apply(*tensors, axis=axis)


def take(a, indices, axis: int = 0) -> Tensor:
    return Take.apply(a, indices=indices, axis=axis)


def gather_rows(table, indices) -> Tensor:
    """Rows of a 2-D ``table`` picked by an integer array of any shape."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise ShapeMismatch(f"gather_rows expects a 2-D table, got {table.shape}")
    return take(table, np.asarray(indices, dtype=np.int64), axis=0)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.in_shape = a.shape
        self.axis = _norm_axes(axis, a.ndim)
        self.keepdims = keepdims
        return a.sum(axis=self.axis, keepdims=keepdims)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, self.in_shape).copy(),)


class Mean(Function):
    def forward(self, a, axis, keepdims):
        self.in_shape = a.shape
        self.axis = _norm_axes(axis, a.ndim)
        self.keepdims = keepdims
        axes = self.axis if self.axis is not None else tuple(range(a.ndim))
        self.count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
        return a.mean(axis=self.axis, keepdims=keepdims)

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g / self.count, self.in_shape).copy(),)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    return Mean.apply(a, axis=axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeMismatch(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeMismatch(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, g):
        a, b = self.a, self.b
        ga = gb = None
        if self.inputs[0].requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape)
        if self.inputs[1].requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape)
        return ga, gb


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def _masked_shift(x: np.ndarray, axis: int, mask: Optional[np.ndarray]):
    if mask is None:
        return x - x.max(axis=axis, keepdims=True)
    big_neg = np.where(mask, x, -np.inf).max(axis=axis, keepdims=True)
    if not np.isfinite(big_neg).all():
        raise ShapeMismatch("softmax mask removes every entry of some slice")
    return np.where(mask, x - big_neg, 0.0)


class Softmax(Function):
    def forward(self, x, axis, mask):
        ax = _norm_axis(axis, x.ndim)
        z = _masked_shift(x, ax, mask)
        e = np.exp(z)
        if mask is not None:
            e = np.where(mask, e, 0.0)
        s = e / e.sum(axis=ax, keepdims=True)
        self.s, self.axis = s, ax
        return s

    def backward(self, g):
        s = self.s
        return (s * (g - (g * s).sum(axis=self.axis, keepdims=True)),)


class LogSoftmax(Function):
    def forward(self, x, axis, mask):
        ax = _norm_axis(axis, x.ndim)
        z = _masked_shift(x, ax, mask)
        e = np.exp(z)
        if mask is not None:
            e = np.where(mask, e, 0.0)
        lse = np.log(e.sum(axis=ax, keepdims=True))
        out = z - lse
        self.s = np.exp(out)
        if mask is not None:
            out = np.where(mask, out, 0.0)
            self.s = np.where(mask, self.s, 0.0)
        self.axis, self.mask = ax, mask
        return out

    def backward(self, g):
        if self.mask is not None:
            g = np.where(self.mask, g, 0.0)
        return (g - self.s * g.sum(axis=self.axis, keepdims=True),)


def _mask_array(mask, shape) -> Optional[np.ndarray]:
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    try:
        return np.broadcast_to(m, shape)
    except ValueError:
        raise ShapeMismatch(f"mask of shape {m.shape} does not broadcast to {shape}") from None


def softmax(x, axis: int = -1, mask=None) -> Tensor:
    """Max-stabilised softmax.  ``mask`` (True = keep) zeroes excluded entries."""
    x = as_tensor(x)
    _norm_axis(axis, x.ndim)
    return Softmax.apply(x, axis=axis, mask=_mask_array(mask, x.shape))


def log_softmax(x, axis: int = -1, mask=None) -> Tensor:
    x = as_tensor(x)
    _norm_axis(axis, x.ndim)
    return LogSoftmax.apply(x, axis=axis, mask=_mask_array(mask, x.shape))


def cross_entropy(logits, targets, reduction: str = "mean") -> Tensor:
    """Cross-entropy of ``softmax(logits)`` (rows) against integer targets."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeMismatch(f"cross_entropy: logits {logits.shape}, targets {targets.shape}")
    onehot = np.zeros(logits.shape, dtype=DTYPE)
    onehot[np.arange(len(targets)), targets] = 1.0
    nll = -(log_softmax(logits, axis=1) * onehot).sum(axis=1)
    if reduction == "mean":
        return nll.mean()
    if reduction == "sum":
        return nll.sum()
    return nll


# ---------------------------------------------------------------------------
# normalisation helpers
# ---------------------------------------------------------------------------


class L2Normalize(Function):
    def forward(self, x, axis, eps):
        ax = _norm_axis(axis, x.ndim)
        norm = np.sqrt((x * x).sum(axis=ax, keepdims=True))
        self.norm = np.maximum(norm, eps)
        self.y, self.axis = x / self.norm, ax
        return self.y

    def backward(self, g):
        y = self.y
        return ((g - y * (g * y).sum(axis=self.axis, keepdims=True)) / self.norm,)


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    return L2Normalize.apply(x, axis=axis, eps=eps)


def cosine_similarity_matrix(a, b) -> Tensor:
    """``out[..., i, j] = cos(a[..., i, :], b[..., j, :])``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeMismatch(f"cosine similarity over mismatched widths {a.shape} vs {b.shape}")
    return matmul(l2_normalize(a, -1), swapaxes(l2_normalize(b, -1), -1, -2))


class BatchNorm2d(Function):
    """Per-channel normalisation over (batch, height, width).

    Running statistics live in plain arrays passed through ``running`` and are
    updated in place during training: ``r <- momentum * r + (1 - momentum) * batch``
    with the unbiased batch variance.
    """

    def forward(self, x, gamma, beta, running, training, momentum, eps):
        if x.ndim != 4:
            raise ShapeMismatch(f"batch_norm2d expects B×C×h×w, got {x.shape}")
        c = x.shape[1]
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ShapeMismatch(f"batch_norm2d affine params {gamma.shape}/{beta.shape} vs {c} channels")
        rmean, rvar = running
        axes = (0, 2, 3)
        if training:
            n = x.shape[0] * x.shape[2] * x.shape[3]
            if n < 2:
                raise DegenerateBatch(
                    f"batch_norm2d in training mode needs >1 value per channel, got input {x.shape}"
                )
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            rmean *= momentum
            rmean += (1.0 - momentum) * mu
            rvar *= momentum
            rvar += (1.0 - momentum) * var * (n / (n - 1))
        else:
            mu, var = rmean, rvar
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
        self.xhat, self.inv_std, self.gamma, self.training = xhat, inv_std, gamma, training
        return xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, g):
        axes = (0, 2, 3)
        xhat, inv_std = self.xhat, self.inv_std
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * self.gamma[None, :, None, None]
        if self.training:
            n = g.shape[0] * g.shape[2] * g.shape[3]
            dx = (
                inv_std[None, :, None, None]
                / n
                * (
                    n * dxhat
                    - dxhat.sum(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
                )
            )
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx, dgamma, dbeta


def batch_norm2d(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    return BatchNorm2d.apply(
        x,
        gamma,
        beta,
        running=(running_mean, running_var),
        training=training,
        momentum=momentum,
        eps=eps,
    )


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """View ``B×C×oh×ow×kh×kw`` of all receptive fields of a padded input."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]


class Conv2d(Function):
    """Cross-correlation with zero padding.

    The reduction index runs channel-outer, then kernel row, then kernel
    column.  The default path folds that reduction into one BLAS product over
    a (C·kh·kw) × (B·h'·w') column matrix; ``exact=True`` instead accumulates
    term by term in that order so the result is bit-identical to a naive
    scalar loop.
    """

    def forward(self, x, w, stride, pad, exact):
        b, c, h, wd = x.shape
        o, _, kh, kw = w.shape
        oh, ow = conv_output_size(h, kh, stride, pad), conv_output_size(wd, kw, stride, pad)
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        win = _windows(xp, kh, kw, stride, oh, ow)
        self.meta = (x.shape, w.shape, stride, pad, oh, ow)
        self.wmat = w.reshape(o, c * kh * kw)
        self.exact = exact
        if exact:
            self.xp = xp
            out = np.zeros((b, o, oh, ow), dtype=DTYPE)
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        out += w[None, :, ci, i, j, None, None] * win[:, None, ci, :, :, i, j]
            return out
        self.cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, b * oh * ow)
        out = self.wmat @ self.cols
        return np.ascontiguousarray(out.reshape(o, b, oh, ow).transpose(1, 0, 2, 3))

    def backward(self, g):
        (b, c, h, wd), (o, _, kh, kw), stride, pad, oh, ow = self.meta
        if self.exact:
            win = _windows(self.xp, kh, kw, stride, oh, ow)
            cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, b * oh * ow)
        else:
            cols = self.cols
        g_t = g.transpose(1, 0, 2, 3).reshape(o, b * oh * ow)
        gw = (g_t @ cols.T).reshape(o, c, kh, kw) if self.inputs[1].requires_grad else None
        gx = None
        if self.inputs[0].requires_grad:
            gcols = (self.wmat.T @ g_t).reshape(c, kh, kw, b, oh, ow)
            gxp = np.zeros((c, b, h + 2 * pad, wd + 2 * pad), dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[:, i, j]
            gx = gxp[:, :, pad : pad + h, pad : pad + wd].transpose(1, 0, 2, 3)
        return gx, gw


def conv2d(x, kernel, stride: int = 1, pad: int = 0, exact: bool = False) -> Tensor:
    x, kernel = as_tensor(x), as_tensor(kernel)
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise InvalidHyperparameter(f"conv2d stride must be an integer >= 1, got {stride!r}")
    if not isinstance(pad, (int, np.integer)) or pad < 0:
        raise InvalidHyperparameter(f"conv2d pad must be an integer >= 0, got {pad!r}")
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatch(f"conv2d expects B×C×h×w input and O×C×kh×kw kernel, got {x.shape}, {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeMismatch(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    kh, kw = kernel.shape[2:]
    if kh > x.shape[2] + 2 * pad or kw > x.shape[3] + 2 * pad:
        raise ShapeMismatch(f"conv2d kernel {kernel.shape} larger than padded input {x.shape} (pad={pad})")
    return Conv2d.apply(x, kernel, stride=int(stride), pad=int(pad), exact=exact)


def bilinear_matrix(in_size: int, out_size: int) -> np.ndarray:
    """``out_size × in_size`` interpolation weights, half-pixel (align_corners=False).

    Source coordinate of output pixel ``d`` is ``(d + 0.5) * in/out - 0.5``,
    clamped below at 0; the upper neighbour index is clamped at ``in - 1``.
    No anti-aliasing is applied when shrinking.
    """
    m = np.zeros((out_size, in_size), dtype=DTYPE)
    scale = in_size / out_size
    for d in range(out_size):
        src = max((d + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), in_size - 1)
        i1 = min(i0 + 1, in_size - 1)
        frac = src - i0
        m[d, i0] += 1.0 - frac
        m[d, i1] += frac
    return m


class BilinearResize(Function):
    def forward(self, x, out_h, out_w):
        self.rh = bilinear_matrix(x.shape[2], out_h)
        self.rw = bilinear_matrix(x.shape[3], out_w)
        return np.matmul(np.matmul(self.rh, x), self.rw.T)

    def backward(self, g):
        return (np.matmul(np.matmul(self.rh.T, g), self.rw),)


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    x = as_tensor(x)
    if int(out_h) < 1 or int(out_w) < 1:
        raise InvalidHyperparameter(f"bilinear_resize output size must be >= 1, got {out_h}×{out_w}")
    if x.ndim != 4:
        raise ShapeMismatch(f"bilinear_resize expects B×C×h×w, got {x.shape}")
    return BilinearResize.apply(x, out_h=int(out_h), out_w=int(out_w))
