"""Dense arrays with reverse-mode automatic differentiation.

Every differentiable value is a :class:`Tensor` wrapping a numpy array. Each
operation records its parents and a closure that maps the output gradient to
parent gradients; :meth:`Tensor.backward` walks the record in reverse
topological order and accumulates gradients additively.

The engine is real-valued. Spectra are carried as :class:`ComplexArray`, a
pair of real tensors, so complex weights are just two real parameters.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from itertools import count
from typing import Callable, Sequence

import numpy as np
from scipy import special

_node_ids = count()
_grad_enabled = True


class ShapeError(ValueError):
    """Operand extents are incompatible with the operation."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "node_id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.node_id = next(_node_ids)
        self.name = name

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {self.node_id: np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + pg
                else:
                    grads[parent.node_id] = pg

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _raise_not_scalar():
    raise ValueError("item() needs a single-element tensor")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = np.result_type(np.asarray(x).dtype, np.float64) if not np.isscalar(x) else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else np.asarray(x, dtype=np.float64))


def _const_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------
def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const_like(a, b)
    b = _const_like(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const_like(a, b)
    b = _const_like(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const_like(a, b)
    b = _const_like(b, a)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const_like(a, b)
    b = _const_like(b, a)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), bw)


def power(a: Tensor, exponent: float) -> Tensor:
    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(a.data**exponent, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tabs(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def lgamma(a: Tensor) -> Tensor:
    return _make(special.gammaln(a.data), (a,), lambda g: (g * special.digamma(a.data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


# -- activations ---------------------------------------------------------
def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return special.expit(v)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _make(x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data).astype(x.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * _sigmoid(x.data),))


ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "silu": silu,
    "sigmoid": sigmoid,
    "softplus": softplus,
}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None


# -- reductions and shape ops --------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / n)


def tmax(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; gradient goes to the first maximizer."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _make(out, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(a: Tensor, index) -> Tensor:
    basic = _is_basic_index(index)

    def bw(g):
        grad = np.zeros_like(a.data)
        if basic:
            grad[index] = g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return _make(a.data[index], (a,), bw)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis)


def flip(a: Tensor, axis: int) -> Tensor:
    return _make(np.flip(a.data, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw)


# -- convolution family --------------------------------------------------
def conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-pixel channel mixing: out[b,o,h,w] = sum_c W[o,c] x[b,c,h,w] + bias[o]."""
    B, C, H, W = x.shape
    if weight.ndim != 2 or weight.shape[1] != C:
        raise ShapeError(f"conv1x1 weight {weight.shape} does not match {C} input channels")
    xf = x.data.reshape(B, C, H * W)
    out = np.matmul(weight.data, xf)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = out.reshape(B, -1, H, W)

    def bw(g):
        gf = g.reshape(B, -1, H * W)
        gx = np.matmul(weight.data.T, gf).reshape(x.shape)
        gw = np.einsum("boh,bch->oc", gf, xf)
        gb = gf.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, (lambda g: bw(g)[:2]) if bias is None else bw)


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    B, C = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    # (B, Ho, Wo, C, kh, kw) -> rows per output pixel
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * ho * wo, C * kh * kw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Dense 2-D cross-correlation with zero padding, via im2col."""
    B, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ShapeError(f"conv2d weight expects {Ci} channels, input has {C}")
    ho = (H + 2 * padding - kh) // stride + 1
    wo = (W + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {H}x{W}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(O, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(B, ho, wo, O).transpose(0, 3, 1, 2)

    def bw(g):
        gf = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (gf.T @ cols).reshape(weight.shape)
        gcols = (gf @ wmat).reshape(B, ho, wo, C, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        gb = gf.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(np.ascontiguousarray(out), parents, (lambda g: bw(g)[:2]) if bias is None else bw)


def dwconv3x3(x: Tensor, kernels: Tensor, padding: int = 1) -> Tensor:
    """Depthwise 3x3 cross-correlation, one kernel per channel."""
    B, C, H, W = x.shape
    if kernels.shape != (C, 3, 3):
        raise ShapeError(f"dwconv3x3 needs kernels of shape ({C}, 3, 3), got {kernels.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho, wo = H + 2 * padding - 2, W + 2 * padding - 2
    k = kernels.data
    out = np.zeros((B, C, ho, wo), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            out += k[None, :, i, j, None, None] * xp[:, :, i : i + ho, j : j + wo]

    def bw(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(k)
        for i in range(3):
            for j in range(3):
                gxp[:, :, i : i + ho, j : j + wo] += k[None, :, i, j, None, None] * g
                gk[:, i, j] = np.einsum("bchw,bchw->c", g, xp[:, :, i : i + ho, j : j + wo])
        return gxp[:, :, padding : padding + H, padding : padding + W], gk

    return _make(out, (x, kernels), bw)


# -- normalization -------------------------------------------------------
def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (batch, H, W).

    In training mode the batch statistics are used and the running buffers are
    updated in place (unbiased variance, like the usual convention); in eval
    mode the running buffers are used.
    """
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        n = x.data.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var, n = running_mean.astype(x.dtype), running_var.astype(x.dtype), None
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(shape)
        if training:
            gx = (inv.reshape(shape) / n) * (
                n * gxhat - gxhat.sum(axis=axes, keepdims=True) - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(shape)
        return gx, gg, gb

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), bw)


# -- spatial resampling --------------------------------------------------
def adaptive_pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages input cells floor(i*n_in/n_out) .. ceil((i+1)*n_in/n_out)-1."""
    if n_out > n_in:
        raise ShapeError(f"adaptive pool output {n_out} exceeds input {n_in}")
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def nearest_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i copies input cell floor(i*n_in/n_out)."""
    if n_out < n_in:
        raise ShapeError(f"nearest upsample output {n_out} is smaller than input {n_in}")
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), (np.arange(n_out) * n_in) // n_out] = 1.0
    return m


def spatial_linear(x: Tensor, mh: np.ndarray, mw: np.ndarray) -> Tensor:
    """y = Mh @ x @ Mw^T over the two trailing axes."""
    mh = mh.astype(x.dtype)
    mw = mw.astype(x.dtype)
    out = mh @ x.data @ mw.T
    return _make(out, (x,), lambda g: (mh.T @ g @ mw,))


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    H, W = x.shape[-2:]
    if (out_h, out_w) == (H, W):
        return x
    return spatial_linear(x, adaptive_pool_matrix(H, out_h), adaptive_pool_matrix(W, out_w))


def upsample_nearest(x: Tensor, out_h: int, out_w: int) -> Tensor:
    H, W = x.shape[-2:]
    if (out_h, out_w) == (H, W):
        return x
    return spatial_linear(x, nearest_matrix(H, out_h), nearest_matrix(W, out_w))


def global_avg_pool(x: Tensor) -> Tensor:
    return mean(x, axis=(2, 3))


# -- spectra -------------------------------------------------------------
@dataclass
class ComplexArray:
    """Half spectrum of a real map as separate real and imaginary tensors."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ShapeError(f"real {self.real.shape} and imag {self.imag.shape} differ")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    def to_numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


def rfft2(x: Tensor) -> ComplexArray:
    """Unnormalized 2-D real FFT over the trailing axes (half spectrum on the last)."""
    H, W = x.shape[-2:]
    spec = np.fft.rfft2(x.data)
    K = spec.shape[-1]
    dtype = x.dtype

    def bw(g):
        # adjoint of the R-linear map x -> (Re, Im) of the half spectrum
        full = np.zeros(x.shape[:-1] + (W,), dtype=np.complex128)
        full[..., :K] = g[..., 0] + 1j * g[..., 1]
        return ((np.fft.ifft2(full).real * (H * W)).astype(dtype),)

    both = _make(np.stack([spec.real, spec.imag], axis=-1).astype(dtype), (x,), bw)
    return ComplexArray(both[..., 0], both[..., 1])


def irfft2(X: ComplexArray, out_h: int, out_w: int) -> Tensor:
    """Inverse of :func:`rfft2` (divides by H*W)."""
    K = X.shape[-1]
    if K != out_w // 2 + 1 or X.shape[-2] != out_h:
        raise ShapeError(f"spectrum {X.shape} inconsistent with output {out_h}x{out_w}")
    dtype = X.real.dtype
    out = np.fft.irfft2(X.to_numpy(), s=(out_h, out_w)).astype(dtype)
    # bins 1..ceil(W/2)-1 stand for a conjugate pair in the full spectrum
    mult = np.full(K, 2.0)
    mult[0] = 1.0
    if out_w % 2 == 0:
        mult[-1] = 1.0

    def bw(g):
        G = np.fft.rfft2(g) * mult / (out_h * out_w)
        return G.real.astype(dtype), G.imag.astype(dtype)

    return _make(out, (X.real, X.imag), bw)


def complex_scale(X: ComplexArray, w_real: Tensor, w_imag: Tensor) -> ComplexArray:
    """Multiply every bin of channel c by (w_real[c] + i w_imag[c]); X is (B, C, H, K)."""
    C = X.shape[1]
    if w_real.shape != (C,) or w_imag.shape != (C,):
        raise ShapeError(f"complex_scale needs {C} weights, got {w_real.shape}/{w_imag.shape}")
    wr = reshape(w_real, (1, C, 1, 1))
    wi = reshape(w_imag, (1, C, 1, 1))
    return ComplexArray(X.real * wr - X.imag * wi, X.real * wi + X.imag * wr)


# -- gradient checking ---------------------------------------------------
@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tol: float
    failures: list[str]
    kinks: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures and all(e <= self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def gradcheck(
    f: Callable[[], Tensor],
    params: dict[str, Tensor] | Sequence[Tensor],
    step: float = 1e-4,
    tol: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    skip_kinks: bool = False,
) -> GradcheckReport:
    """Compare autodiff gradients of the scalar ``f()`` with central differences.

    ``f`` is re-evaluated after each in-place perturbation of a parameter entry.
    Per parameter, the reported error is max |g_ad - g_fd| / max(1, |g_fd|).
    With ``max_entries`` only a random subset of entries per parameter is probed.

    With ``skip_kinks``, an entry over tolerance is dropped (and counted in
    ``kinks``) when its one-sided differences disagree by at least the
    observed error: crossing a kink within the step produces exactly that
    signature, while a wrong analytic gradient on a smooth function does not.
    Remaining entries over tolerance are re-differenced once at step/10 and
    keep the smaller error.
    """
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = np.zeros_like(p.data)
    loss = f()
    loss.backward()
    f0 = loss.item()
    analytic = {k: p.grad.copy() for k, p in params.items()}

    errors: dict[str, float] = {}
    failures: list[str] = []
    kinks = 0
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            worst = 0.0
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                fp = f().item()
                flat[i] = orig - step
                fm = f().item()
                flat[i] = orig
                g_fd = (fp - fm) / (2 * step)
                g_ad = analytic[name].reshape(-1)[i]
                if not (np.isfinite(g_fd) and np.isfinite(g_ad)):
                    failures.append(f"{name}[{np.unravel_index(i, p.shape)}]: non-finite gradient")
                    continue
                err = abs(g_ad - g_fd) / max(1.0, abs(g_fd))
                if skip_kinks and err > tol:
                    one_sided_gap = abs((fp - f0) - (f0 - fm)) / step
                    if one_sided_gap >= abs(g_ad - g_fd):
                        kinks += 1
                        continue
                    # a kink or curvature inside the step shrinks with it; a wrong gradient does not
                    h = step / 10
                    flat[i] = orig + h
                    fp = f().item()
                    flat[i] = orig - h
                    fm = f().item()
                    flat[i] = orig
                    g_fine = (fp - fm) / (2 * h)
                    err = min(err, abs(g_ad - g_fine) / max(1.0, abs(g_fine)))
                worst = max(worst, err)
            errors[name] = worst
    return GradcheckReport(errors, tol, failures, kinks)
