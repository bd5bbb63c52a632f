"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is taped implicitly: every operation touching a tensor that
requires gradients records its parents together with a closure computing
the vector-Jacobian product. ``backward`` on a scalar result walks the
graph in reverse topological order and accumulates gradients additively
into ``Tensor.grad``, so repeated backward calls sum until grads are
cleared.

All storage is float64. Recording can be suspended with ``no_grad()``
for forward-only evaluation (target networks, data collection, rollouts).
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Suspend graph recording inside the with-block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 array participating in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """View of the same values, cut off from the graph."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- method forms of the op library --------------------------------------

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def softplus(self):
        return softplus(self)

    def sqrt(self):
        return sqrt(self)

    def square(self):
        return mul(self, self)

    def clamp(self, lo, hi):
        return clamp(self, lo, hi)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    def backward(self):
        backward(self)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, parents, vjp) -> Tensor:
    """Wrap ``data``; record parents and vjp only if the tape is live."""
    out = Tensor(data)
    if _grad_enabled:
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                out._parents = tuple(parents)
                out._vjp = vjp
                break
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(root: Tensor):
    """Accumulate d(root)/d(leaf) into .grad of every participating tensor.

    ``root`` must be a scalar (size 1). Accumulation is additive across
    calls until grads are cleared.
    """
    if root.data.size != 1:
        raise ValueError(f"backward requires a scalar root, got shape {root.data.shape}")
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    _accumulate(root, np.ones_like(root.data))
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is not None and parent.requires_grad:
                _accumulate(parent, g)


# -- elementwise arithmetic ---------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _node(a.data * b.data, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _node(a.data / b.data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def pow_const(a: Tensor, exponent) -> Tensor:
    exponent = float(exponent)

    def vjp(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _node(a.data ** exponent, (a,), vjp)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; the larger operand receives the gradient (ties: a)."""
    mask = a.data >= b.data

    def vjp(g):
        return _unbroadcast(g * mask, a.data.shape), _unbroadcast(g * ~mask, b.data.shape)

    return _node(np.maximum(a.data, b.data), (a, b), vjp)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    mask = a.data <= b.data

    def vjp(g):
        return _unbroadcast(g * mask, a.data.shape), _unbroadcast(g * ~mask, b.data.shape)

    return _node(np.minimum(a.data, b.data), (a, b), vjp)


# -- unary functions ----------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _node(out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    return _node(out_data, (a,), lambda g: (g * (0.5 / out_data),))


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return _node(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid(a.data)
    return _node(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow of exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a: Tensor) -> Tensor:
    out_data = _softplus(a.data)
    return _node(out_data, (a,), lambda g: (g * _sigmoid(a.data),))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through strictly inside the range."""
    mask = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


# -- reductions ---------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, a.data.shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk / count, a.data.shape).copy(),)

    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,), vjp)


# -- shape manipulation -------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inv) if inv is not None else g.transpose(),)

    return _node(a.data.transpose(axes), (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/int/tuple) indexing only; index regions must not overlap."""

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _node(a.data[index], (a,), vjp)


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Fused affine map x @ w + b for 2-D x [N, in] and w [in, out]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError("linear expects 2-D input and weight")
    out_data = x.data @ w.data
    if b is not None:
        out_data = out_data + b.data

    if b is None:
        def vjp(g):
            return g @ w.data.T, x.data.T @ g

        return _node(out_data, (x, w), vjp)

    def vjp(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _node(out_data, (x, w, b), vjp)


# -- 2-D convolution ----------------------------------------------------------


def _conv_windows(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Strided view of all kernel-sized windows: [N, Ho, Wo, C, kh, kw]."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    return win.transpose(0, 2, 3, 1, 4, 5)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation. x: [N,C,H,W], w: [O,C,kh,kw], b: [O]."""
    n, c, h, wdt = x.data.shape
    o, c2, kh, kw = w.data.shape
    if c != c2:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel {c2}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wdt + 2 * pad - kw) // stride + 1
    cols = np.ascontiguousarray(_conv_windows(x.data, kh, kw, stride, pad)).reshape(
        n * ho * wo, c * kh * kw
    )
    w_flat = w.data.reshape(o, -1)
    out_data = cols @ w_flat.T
    if b is not None:
        out_data = out_data + b.data
    out_data = out_data.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def vjp(g):
        g_cols = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (g_cols.T @ cols).reshape(o, c, kh, kw)
        gx_cols = g_cols @ w_flat  # [N*Ho*Wo, C*kh*kw]
        gx_cols = gx_cols.reshape(n, ho, wo, c, kh, kw)
        gx_pad = np.zeros((n, c, h + 2 * pad, wdt + 2 * pad))
        for u in range(kh):
            for v in range(kw):
                gx_pad[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += (
                    gx_cols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
                )
        gx = gx_pad[:, :, pad : pad + h, pad : pad + wdt] if pad else gx_pad
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return _node(out_data, parents, vjp)


def conv2d_transpose(
    x: Tensor,
    w: Tensor,
    b: Tensor | None,
    stride: int = 1,
    pad: int = 0,
    out_extra: int = 0,
) -> Tensor:
    """Transposed 2-D convolution (adjoint of conv2d w.r.t. its input).

    x: [N,Cin,H,W], w: [Cin,Cout,kh,kw]; output spatial size is
    (H-1)*stride - 2*pad + kh + out_extra.
    """
    n, cin, h, wdt = x.data.shape
    cin2, cout, kh, kw = w.data.shape
    if cin != cin2:
        raise ValueError(f"conv2d_transpose channel mismatch: input {cin}, kernel {cin2}")
    ho = (h - 1) * stride - 2 * pad + kh + out_extra
    wo = (wdt - 1) * stride - 2 * pad + kw + out_extra

    def scatter(data):
        prod = data.transpose(0, 2, 3, 1).reshape(n * h * wdt, cin) @ w.data.reshape(cin, -1)
        prod = prod.reshape(n, h, wdt, cout, kh, kw)
        full = np.zeros((n, cout, ho + 2 * pad + out_extra + stride, wo + 2 * pad + out_extra + stride))
        for u in range(kh):
            for v in range(kw):
                full[:, :, u : u + stride * h : stride, v : v + stride * wdt : stride] += (
                    prod[:, :, :, :, u, v].transpose(0, 3, 1, 2)
                )
        return full[:, :, pad : pad + ho, pad : pad + wo]

    out_data = scatter(x.data)
    if b is not None:
        out_data = out_data + b.data[None, :, None, None]

    def vjp(g):
        # pad g back out so windows line up with the forward scatter
        g_win = _conv_windows(g, kh, kw, stride, pad)  # [N, H*, W*, Cout, kh, kw]
        g_win = g_win[:, :h, :wdt]  # out_extra only ever adds trailing zeros
        g_win = np.ascontiguousarray(g_win).reshape(n * h * wdt, cout * kh * kw)
        gx = (g_win @ w.data.reshape(cin, -1).T).reshape(n, h, wdt, cin).transpose(0, 3, 1, 2)
        x_flat = x.data.transpose(0, 2, 3, 1).reshape(n * h * wdt, cin)
        gw = (x_flat.T @ g_win).reshape(cin, cout, kh, kw)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return _node(out_data, parents, vjp)
