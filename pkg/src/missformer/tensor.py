"""Dense tensors with reverse-mode automatic differentiation on numpy storage.

Every operation records how to push gradients back to its inputs; calling
``backward()`` on a scalar walks the recorded operations in reverse. The
engine is deliberately small: float32 by default (float64 for gradient
checks), no broadcasting beyond batched matmul and bias-add, no views that
outlive their op.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    """Operand extents do not satisfy an operation's contract."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


_FLOAT_DTYPES = (np.float32, np.float64)
_default_dtype = np.float32
_grad_enabled = True
_seq = itertools.count()


def default_dtype():
    return _default_dtype


@contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (``np.float64`` for grad checks)."""
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_DTYPES:
        raise ConfigError(f"unsupported precision {dtype!r}; use float32 or float64")
    saved, _default_dtype = _default_dtype, dtype
    try:
        yield
    finally:
        _default_dtype = saved


@contextmanager
def no_grad():
    """Disable op recording; forwards inside run without building a graph."""
    global _grad_enabled
    saved, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = saved


class _Op:
    """One recorded operation: its inputs and the rule pushing grads to them."""

    __slots__ = ("inputs", "run_backward", "seq", "name")

    def __init__(self, inputs, run_backward, name):
        self.inputs = inputs
        self.run_backward = run_backward
        self.seq = next(_seq)
        self.name = name


class Tensor:
    """N-dimensional real array, optionally tracked for differentiation.

    ``data`` is a flat-storage numpy array (row-major); ``grad`` mirrors its
    shape once ``backward()`` has run. Tensors hash by identity.
    """

    __slots__ = ("data", "requires_grad", "grad", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        if (
            dtype is None
            and isinstance(data, (np.ndarray, np.generic))
            and data.dtype.type in _FLOAT_DTYPES
        ):
            self.data = np.asarray(data)  # keep float32/float64 as-is (no copy for arrays)
        else:
            self.data = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def copy(self):
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def backward(self):
        """Populate ``grad`` on every requires-grad tensor reachable from here.

        Only scalar roots are supported (losses). Gradients from multiple
        consumers accumulate by summation.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar root, got shape {self.shape}")
        self.grad = np.ones_like(self.data)
        for t in reversed(trace(self).ops):
            if t.grad is not None:
                t._op.run_backward(t.grad)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # operator sugar over the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Tape:
    """Recorded operations reachable from a root, in recording order.

    Recording order is topological by construction: an op's inputs exist
    before the op runs. ``backward`` walks ``ops`` in exact reverse order.
    """

    ops: list


def trace(root: Tensor) -> Tape:
    """Collect the op-producing tensors behind ``root``, recording order."""
    ops = []
    seen = set()
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen or t._op is None:
            continue
        seen.add(id(t))
        ops.append(t)
        stack.extend(t._op.inputs)
    ops.sort(key=lambda t: t._op.seq)
    return Tape(ops)


def _result(data, inputs, run_backward, name):
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._op = _Op(inputs, run_backward, name)
    return out


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        # copy: g may be a view into a buffer the producer still owns
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _accum_at(t: Tensor, idx, g):
    """Accumulate into a slice of t's gradient without a full-size temporary."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros(t.data.shape, dtype=t.data.dtype)
    t.grad[idx] += g


def _pad2d(x, p):
    """Zero-pad the trailing two axes by p (faster than np.pad for hot paths)."""
    if p == 0:
        return x
    out = np.zeros(x.shape[:-2] + (x.shape[-2] + 2 * p, x.shape[-1] + 2 * p), dtype=x.dtype)
    out[..., p:-p, p:-p] = x
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy batch broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic (same-shape, bias-add, or python scalar)

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        def run_backward(g):
            _accum(a, g)

        return _result(a.data + b, [a], run_backward, "add")
    if a.shape == b.shape:
        def run_backward(g):
            _accum(a, g)
            _accum(b, g)

        return _result(a.data + b.data, [a, b], run_backward, "add")
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        # bias-add: b broadcasts over every leading axis of a
        def run_backward(g):
            _accum(a, g)
            _accum(b, g.reshape(-1, b.shape[0]).sum(axis=0))

        return _result(a.data + b.data, [a, b], run_backward, "bias_add")
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        return add(a, neg(b))
    return add(a, -b)


def neg(a: Tensor) -> Tensor:
    def run_backward(g):
        _accum(a, -g)

    return _result(-a.data, [a], run_backward, "neg")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        def run_backward(g):
            _accum(a, g * b)

        return _result(a.data * b, [a], run_backward, "scale")
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def run_backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(a.data * b.data, [a, b], run_backward, "mul")


def div(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / b)
    if a.shape != b.shape:
        raise ShapeError(f"div: incompatible shapes {a.shape} and {b.shape}")
    out_data = a.data / b.data

    def run_backward(g):
        _accum(a, g / b.data)
        _accum(b, -g * out_data / b.data)

    return _result(out_data, [a, b], run_backward, "div")


def pow_scalar(a: Tensor, p: float) -> Tensor:
    def run_backward(g):
        _accum(a, g * p * a.data ** (p - 1))

    return _result(a.data ** p, [a], run_backward, "pow")


# ---------------------------------------------------------------------------
# reductions

def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def run_backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, a.shape))

    return _result(a.data.sum(axis=axis, keepdims=keepdims), [a], run_backward, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra

def _gemm_ready(arr):
    # batched matmul on strided views falls off the BLAS fast path; 2-D
    # transposes are handled natively, so only compact higher-rank operands
    if arr.ndim > 2 and not arr.flags.c_contiguous:
        return np.ascontiguousarray(arr)
    return arr


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``(..,M,K) @ (..,K,N)``; batch dims broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    a_data = _gemm_ready(a.data)
    b_data = _gemm_ready(b.data)

    def run_backward(g):
        _accum(a, _unbroadcast(g @ _gemm_ready(b_data.swapaxes(-1, -2)), a.shape))
        _accum(b, _unbroadcast(_gemm_ready(a_data.swapaxes(-1, -2)) @ g, b.shape))

    return _result(a_data @ b_data, [a, b], run_backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Position-wise affine map ``x @ w + b`` over the last axis."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    c_in, c_out = w.shape
    x2 = np.ascontiguousarray(x.data).reshape(-1, c_in)
    y2 = x2 @ w.data
    if b is not None:
        y2 += b.data
    out_shape = x.shape[:-1] + (c_out,)
    inputs = [x, w] if b is None else [x, w, b]

    def run_backward(g):
        g2 = g.reshape(-1, c_out)
        _accum(x, (g2 @ w.data.T).reshape(x.shape))
        _accum(w, x2.T @ g2)
        if b is not None:
            _accum(b, g2.sum(axis=0))

    return _result(y2.reshape(out_shape), inputs, run_backward, "linear")


# ---------------------------------------------------------------------------
# nonlinearities and normalization

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rows sum to one."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {x.shape}")
    if np.isnan(x.data.min()):  # min propagates NaN; single fused reduction
        raise NumericError("softmax: NaN in input")
    y = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y /= y.sum(axis=axis, keepdims=True)

    def run_backward(g):
        _accum(x, (g - (g * y).sum(axis=axis, keepdims=True)) * y)

    return _result(y, [x], run_backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if np.isnan(x.data.min()):
        raise NumericError("log_softmax: NaN in input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def run_backward(g):
        _accum(x, g - np.exp(ls) * g.sum(axis=axis, keepdims=True))

    return _result(ls, [x], run_backward, "log_softmax")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu_cdf(x):
    return 0.5 * (1.0 + erf(x * _INV_SQRT2))


def _gelu_pdf(x):
    return np.exp(-0.5 * x * x) * _INV_SQRT2PI


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU: ``x * Phi(x)``."""
    cdf = _gelu_cdf(x.data)

    def run_backward(g):
        _accum(x, g * (cdf + x.data * _gelu_pdf(x.data)))

    return _result(x.data * cdf, [x], run_backward, "gelu")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Standardize over the last axis (biased variance), then ``gamma*x+beta``."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm: affine params {gamma.shape}/{beta.shape} do not match channel count {c}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.einsum("...c,...c->...", xc, xc)[..., None] / c
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc
    xhat *= inv  # xc no longer needed; normalize in place
    y = xhat * gamma.data
    y += beta.data

    def run_backward(g):
        g2 = g.reshape(-1, c)
        _accum(gamma, np.einsum("nc,nc->c", g2, xhat.reshape(-1, c)))
        _accum(beta, g2.sum(axis=0))
        dxhat = g * gamma.data
        dot = np.einsum("...c,...c->...", dxhat, xhat)[..., None] / c
        dxhat -= dxhat.mean(axis=-1, keepdims=True)
        dxhat -= xhat * dot
        dxhat *= inv
        _accum(x, dxhat)

    return _result(y, [x, gamma, beta], run_backward, "layer_norm")


# ---------------------------------------------------------------------------
# convolutions

def depthwise_conv2d(x: Tensor, k: Tensor, b: Tensor) -> Tensor:
    """Per-channel 3x3 convolution, stride 1, zero padding 1 (same-size).

    No cross-channel mixing: channel ``c`` of the output sees only channel
    ``c`` of the input and kernel ``k[c]``.
    """
    if x.ndim != 4:
        raise ShapeError(f"depthwise_conv2d: expected (B,C,H,W) input, got {x.shape}")
    n, c, h, w = x.shape
    if k.shape != (c, 3, 3):
        raise ShapeError(f"depthwise_conv2d: kernel {k.shape} does not match {c} input channels")
    if b.shape != (c,):
        raise ShapeError(f"depthwise_conv2d: bias {b.shape} does not match {c} channels")
    xp = _pad2d(x.data, 1)
    out = np.empty(x.shape, dtype=x.data.dtype)
    out[:] = b.data[None, :, None, None]
    for i in range(3):
        for j in range(3):
            out += xp[:, :, i : i + h, j : j + w] * k.data[None, :, i, j, None, None]

    def run_backward(g):
        # input grad = same-padding correlation of g with the flipped kernel
        gp = _pad2d(g, 1)
        dx = np.zeros(x.shape, dtype=x.data.dtype)
        dk = np.empty(k.shape, dtype=k.data.dtype)
        for i in range(3):
            for j in range(3):
                dx += gp[:, :, i : i + h, j : j + w] * k.data[None, :, 2 - i, 2 - j, None, None]
                dk[:, i, j] = np.einsum("bchw,bchw->c", xp[:, :, i : i + h, j : j + w], g)
        _accum(x, dx)
        _accum(k, dk)
        _accum(b, g.sum(axis=(0, 2, 3)))

    return _result(out, [x, k, b], run_backward, "depthwise_conv2d")


def extract_patches(x: Tensor, kernel: int, stride: int, padding: int) -> Tensor:
    """im2col: sliding ``kernel x kernel`` windows as tokens ``(B, L, C*k*k)``.

    Token order is row-major over output positions; each token flattens its
    window as (channel, row, col). A linear map on the result is exactly a
    strided convolution, and the gradient scatter-adds back through the
    window overlaps.
    """
    if x.ndim != 4:
        raise ShapeError(f"extract_patches: expected (B,C,H,W) input, got {x.shape}")
    n, c, h, w = x.shape
    h_out = (h + 2 * padding - kernel) // stride + 1
    w_out = (w + 2 * padding - kernel) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"extract_patches: kernel {kernel} too large for input {x.shape}")
    xp = _pad2d(x.data, padding)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, Ho, Wo, k, k)
    out = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n, h_out * w_out, c * kernel * kernel
    )

    def run_backward(g):
        gw = g.reshape(n, h_out, w_out, c, kernel, kernel).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros_like(xp)
        for i in range(kernel):
            for j in range(kernel):
                gxp[:, :, i : i + h_out * stride : stride, j : j + w_out * stride : stride] += gw[
                    :, :, :, :, i, j
                ]
        if padding:
            gxp = gxp[:, :, padding : padding + h, padding : padding + w]
        _accum(x, gxp)

    return _result(out, [x], run_backward, "extract_patches")


# ---------------------------------------------------------------------------
# pure data movement (gradients route back by the inverse movement)

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if shape.count(-1) > 1:
        raise ShapeError(f"reshape: more than one -1 in {shape}")
    if -1 in shape:
        rest = int(np.prod([s for s in shape if s != -1]))
        if rest == 0 or x.size % rest:
            raise ShapeError(f"reshape: cannot infer -1 mapping {x.shape} to {shape}")
        shape = tuple(x.size // rest if s == -1 else s for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: element count mismatch {x.shape} -> {shape}")

    def run_backward(g):
        _accum(x, g.reshape(x.shape))

    return _result(x.data.reshape(shape), [x], run_backward, "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of axes of {x.shape}")
    inv = np.argsort(axes)

    def run_backward(g):
        _accum(x, g.transpose(inv))

    return _result(x.data.transpose(axes), [x], run_backward, "permute")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat: off-axis extents disagree: {ref} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def run_backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            _accum(t, g[tuple(idx)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, run_backward, "concat")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    if not (0 <= start and start + length <= x.shape[axis]):
        raise ShapeError(f"narrow: [{start}, {start + length}) out of bounds for {x.shape} axis {axis}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def run_backward(g):
        _accum_at(x, idx, g)

    return _result(x.data[idx], [x], run_backward, "narrow")


def split(x: Tensor, sizes, axis: int = 0) -> list[Tensor]:
    """Cut ``x`` into consecutive pieces of the given sizes along ``axis``."""
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split: sizes {tuple(sizes)} do not cover extent {x.shape[axis]} of {x.shape}")
    pieces = []
    start = 0
    for s in sizes:
        pieces.append(narrow(x, axis, start, s))
        start += s
    return pieces
