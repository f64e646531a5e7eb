"""Dense float tensors with reverse-mode automatic differentiation.

Every operation records a tape node holding its inputs and a closure that
maps the output gradient to input gradients. ``Tensor.backward`` walks the
recorded graph once, in reverse topological order, accumulating gradients
into ``.grad`` of every tensor that requires them. Graphs are single use:
backpropagating through an already-consumed node raises ``GraphError``.

Arrays are float32 by default; float64 is supported throughout so that
finite-difference checks can run at full precision.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Operands have shapes the operation cannot accept."""


class GraphError(RuntimeError):
    """The autodiff tape was used in an unsupported way."""


_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording in the current thread for the duration."""
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def new_rng(seed) -> np.random.Generator:
    """Seeded generator on the PCG64 bit stream.

    PCG64 is the fixed algorithm for everything random in this package;
    identical seeds give identical streams on every platform. ``seed`` may
    be an int or a tuple of ints (hashed through SeedSequence), so derived
    streams like ``new_rng((root_seed, step))`` are cheap and stable.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


class TapeNode:
    __slots__ = ("inputs", "grad_fn", "consumed")

    def __init__(self, inputs: tuple["Tensor", ...], grad_fn: Callable):
        self.inputs = inputs
        self.grad_fn = grad_fn
        self.consumed = False


class Tensor:
    """A numpy array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, (np.ndarray, np.generic)):
            # Covers 0-d results of reductions, which numpy hands back as
            # scalar types rather than arrays. Non-float numpy input is an
            # error; plain python data converts to float32 below.
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=np.float32)
        if arr.dtype not in FLOAT_DTYPES:
            raise TypeError(f"tensors are float32 or float64, got {arr.dtype}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: TapeNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A tape-free view of the same array."""
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Gradients accumulate into ``.grad`` (summing with whatever is there,
        so callers zero grads between optimizer steps). Each tape node is
        consumed; a second backward through any part of the graph raises.
        """
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.data.shape}")
        if self.node is None:
            raise GraphError("backward on a tensor with no recorded operations")
        if self.node.consumed:
            raise GraphError("graph already backpropagated; build a fresh graph")

        # Iterative post-order: recurrent graphs run thousands of nodes deep.
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                topo.append(t)
                continue
            if id(t) in seen or t.node is None:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for inp in t.node.inputs:
                stack.append((inp, False))

        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            node = t.node
            assert node is not None
            if node.consumed:
                raise GraphError("graph already backpropagated; build a fresh graph")
            node.consumed = True
            if t.grad is None:
                continue
            grads = node.grad_fn(t.grad)
            for inp, g in zip(node.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                inp.grad = g if inp.grad is None else inp.grad + g

    # Arithmetic operators delegate to the module-level ops.
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

    def __truediv__(self, s):
        if isinstance(s, Tensor) or isinstance(s, np.ndarray):
            raise TypeError("division is supported by scalar only")
        return scale(self, 1.0 / float(s))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take_slice(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)


def _coerce(x, like: Tensor) -> Tensor:
    """Wrap scalars and arrays as constant tensors of the companion dtype."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_dtypes(*tensors: Tensor) -> None:
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise TypeError(f"mixed dtypes in one graph: {dt} vs {t.data.dtype}")


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn: Callable) -> Tensor:
    out = Tensor(out_data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(inputs, grad_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_pair(a, b)
    _check_dtypes(a, b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} + {b.shape}") from None
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_pair(a, b)
    _check_dtypes(a, b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} - {b.shape}") from None
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_pair(a, b)
    _check_dtypes(a, b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} * {b.shape}") from None

    def grad(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), grad)


def _as_pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _coerce(b, a)
    if isinstance(b, Tensor):
        return _coerce(a, b), b
    raise TypeError("at least one operand must be a Tensor")


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    return _record(a.data * s, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with broadcasting over leading batch axes."""
    _check_dtypes(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul batch dims do not broadcast: {a.shape} @ {b.shape}") from None

    def grad(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _record(out, (a, b), grad)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _record(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # Piecewise form stays finite for large |x|.
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return _record(out, (a,), lambda g: (g * (a.data > 0),))


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    x = a.data
    out = np.where(x >= 0, x, x * x.dtype.type(slope))

    def grad(g):
        return (np.where(x >= 0, g, g * x.dtype.type(slope)),)

    return _record(out, (a,), grad)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"bad permutation {axes} for ndim {a.ndim}")
    inv = np.argsort(axes)
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of zero tensors")
    _check_dtypes(*ts)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat shapes incompatible: {[t.shape for t in ts]}") from None
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def grad(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(ts), grad)


def take_slice(a: Tensor, key) -> Tensor:
    """Basic indexing (ints, slices, tuples thereof) with scatter-add backward."""
    out = a.data[key]

    def grad(g):
        gx = np.zeros_like(a.data)
        gx[key] += g
        return (gx,)

    return _record(np.ascontiguousarray(out), (a,), grad)


def _axis_tuple(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.ascontiguousarray(np.broadcast_to(g, a.shape)),)

    return _record(np.asarray(out), (a,), grad)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape) / a.dtype.type(count),)

    return _record(np.asarray(out), (a,), grad)


def global_avg_pool(a: Tensor) -> Tensor:
    """Mean over the trailing two (spatial) axes: [..., C, H, W] -> [..., C]."""
    if a.ndim < 3:
        raise ShapeError(f"global_avg_pool needs >=3 dims, got {a.shape}")
    return reduce_mean(a, axis=(-2, -1))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record(out, (a,), grad)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def grad(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), grad)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, axis: int = -1,
               eps: float = 1e-5) -> Tensor:
    """Normalize over one axis (biased variance), then scale and shift.

    ``gain`` and ``bias`` are 1-d of length ``a.shape[axis]`` and broadcast
    into place, so the same op serves both feature-axis and channel-axis use.
    """
    _check_dtypes(a, gain, bias)
    ax = axis % a.ndim
    n = a.shape[ax]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm gain/bias must be ({n},), got {gain.shape}/{bias.shape}")
    bshape = [1] * a.ndim
    bshape[ax] = n
    w = gain.data.reshape(bshape)
    b = bias.data.reshape(bshape)

    mu = a.data.mean(axis=ax, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    istd = 1.0 / np.sqrt(var + a.dtype.type(eps))
    xhat = xc * istd
    out = xhat * w + b

    def grad(g):
        others = tuple(i for i in range(a.ndim) if i != ax)
        ggain = (g * xhat).sum(axis=others)
        gbias = g.sum(axis=others)
        gh = g * w
        gx = istd / n * (n * gh - gh.sum(axis=ax, keepdims=True)
                         - xhat * (gh * xhat).sum(axis=ax, keepdims=True))
        return gx, ggain, gbias

    return _record(out, (a, gain, bias), grad)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = x.shape[2], x.shape[3]
    if hp < kh or wp < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride), writeable=False)
    # [N, Ho, Wo, C*kh*kw] patch matrix; the copy here feeds one big GEMM.
    cols = np.ascontiguousarray(view.transpose(0, 4, 5, 1, 2, 3)).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [N,C,H,W] with [Cout,C,kh,kw] kernels, no bias."""
    _check_dtypes(x, weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d input and kernel, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if cin != c:
        raise ShapeError(f"conv2d channel mismatch: input {c}, kernel {cin}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = (cols @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def grad(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        gw = (gmat.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        if not x.requires_grad:
            # First layers usually convolve constants; col2im is the single
            # most expensive backward step, so skip it when nothing upstream
            # wants the gradient.
            return None, gw
        gcols = gmat @ wmat
        gx = _col2im(gcols, x.shape, kh, kw, stride, padding, ho, wo)
        return gx, gw

    return _record(out, (x, weight), grad)


def _col2im(gcols: np.ndarray, xshape, kh, kw, stride, padding, ho, wo) -> np.ndarray:
    n, c, h, w = xshape
    gpad = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=gcols.dtype)
    # One up-front copy into [n, c, kh, kw, ho, wo] order keeps the reads in
    # the accumulation loop sequential; scattering straight from the reshaped
    # view costs 2x in strided traffic.
    g6 = np.ascontiguousarray(gcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2))
    for i in range(kh):
        for j in range(kw):
            gpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g6[:, :, i, j]
    if padding:
        return gpad[:, :, padding:-padding, padding:-padding]
    return gpad


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Column lookup into a [features, vocab] table; returns [..., features]."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError(f"embedding ids must be integers, got {ids.dtype}")
    features, vocab = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ShapeError(f"embedding id out of range [0, {vocab})")
    out = table.data.T[ids]

    def grad(g):
        gt = np.zeros((vocab, features), dtype=table.dtype)
        np.add.at(gt, ids.ravel(), g.reshape(-1, features))
        return (gt.T,)

    return _record(out, (table,), grad)


def take_along_last(a: Tensor, ids: np.ndarray) -> Tensor:
    """Pick one entry along the last axis: [..., V] with ids [...] -> [...]."""
    ids = np.asarray(ids)
    if ids.shape != a.shape[:-1]:
        raise ShapeError(f"ids shape {ids.shape} must match {a.shape[:-1]}")
    out = np.take_along_axis(a.data, ids[..., None], axis=-1)[..., 0]

    def grad(g):
        gx = np.zeros_like(a.data)
        flat = gx.reshape(-1, a.shape[-1])
        rows = np.arange(flat.shape[0])
        np.add.at(flat, (rows, ids.ravel()), g.ravel())
        return (gx,)

    return _record(out, (a,), grad)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout. Callers gate on train mode; rate 0 is a passthrough."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype)
    mask = keep / a.dtype.type(1.0 - rate)
    return _record(a.data * mask, (a,), lambda g: (g * mask,))
