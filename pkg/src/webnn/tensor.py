"""Dense tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a backward rule on the output
tensor; calling ``backward()`` on a scalar walks the recorded graph in
reverse topological order and accumulates gradients into every tensor
that requires them. Gradients add up across repeated uses of the same
tensor, which is what unrolled recurrent steps rely on.

A graph is built per forward pass, belongs to one thread, and is
dropped once the tensors referencing it go away. Only float32/float64
data is supported and a single graph must stay in one dtype.
"""

from contextlib import contextmanager

import numpy as np

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, benchmarks)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus gradient bookkeeping.

    Attributes:
        data: the underlying ndarray (float32 or float64).
        requires_grad: whether backward() should produce a gradient here.
        grad: accumulated gradient ndarray of the same shape, or None.
    """

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            raise TypeError(
                f"tensor data must be float32 or float64, got {arr.dtype}; pass dtype= to convert"
            )
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # --- introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # --- operators --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division only supported by scalars")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return batched_matmul(self, other)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        """Backpropagate from this scalar through the recorded graph.

        Visits every recorded operation exactly once, in reverse order of
        execution, accumulating into ``.grad`` of each contributing tensor.
        """
        if self.data.ndim != 0:
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        topo = _toposort(self)
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


# --- graph plumbing -------------------------------------------------------


def _as_tensor(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _check_dtypes(*tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ValueError(f"mixed dtypes in one graph: {dt} vs {t.data.dtype}")
    return dt


def _from_op(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _toposort(root):
    # iterative DFS; execution graphs from long unrolls can exceed the
    # recursion limit
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _unbroadcast(g, shape):
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


# --- elementwise and structural ops ----------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b)
    out_data = a.data + b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _from_op(out_data, (a, b), bw)


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a.dtype)
    _check_dtypes(a, b)
    out_data = a.data * b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op(out_data, (a, b), bw)


def reshape(t, shape):
    old = t.data.shape
    out_data = t.data.reshape(shape)

    def bw(g):
        _accumulate(t, g.reshape(old))

    return _from_op(out_data, (t,), bw)


def permute(t, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out_data = t.data.transpose(axes)

    def bw(g):
        _accumulate(t, g.transpose(inverse))

    return _from_op(out_data, (t,), bw)


def transpose_last_two(t):
    if t.ndim < 2:
        raise ValueError(f"need at least 2 axes, got shape {t.shape}")
    axes = tuple(range(t.ndim - 2)) + (t.ndim - 1, t.ndim - 2)
    return permute(t, axes)


def _getitem(t, idx):
    out_data = t.data[idx]
    if np.isscalar(out_data) or out_data.ndim == 0:
        out_data = np.asarray(out_data)

    def bw(g):
        buf = np.zeros_like(t.data)
        buf[idx] = g
        _accumulate(t, buf)

    return _from_op(out_data, (t,), bw)


def stack(tensors, axis=0):
    """Stack tensors along a new axis, with gradient routed back to each."""
    tensors = list(tensors)
    _check_dtypes(*tensors)
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _from_op(out_data, tuple(tensors), bw)


def pad_last_axis(t, width):
    """Zero-pad the last axis on the right up to `width`."""
    have = t.shape[-1]
    if width < have:
        raise ValueError(f"cannot pad last axis from {have} down to {width}")
    if width == have:
        return t
    pads = [(0, 0)] * (t.ndim - 1) + [(0, width - have)]
    out_data = np.pad(t.data, pads)

    def bw(g):
        _accumulate(t, g[..., :have])

    return _from_op(out_data, (t,), bw)


def sum_all(t):
    """Sum every element down to a scalar."""
    out_data = t.data.sum()

    def bw(g):
        _accumulate(t, np.full_like(t.data, g))

    return _from_op(out_data, (t,), bw)


def mean_over_axis(t, axis):
    if not -t.ndim <= axis < t.ndim:
        raise ValueError(f"axis {axis} out of range for shape {t.shape}")
    axis = axis % t.ndim
    extent = t.shape[axis]
    out_data = t.data.mean(axis=axis)

    def bw(g):
        _accumulate(t, np.broadcast_to(np.expand_dims(g, axis), t.data.shape) / extent)

    return _from_op(out_data, (t,), bw)


# --- matmul ----------------------------------------------------------------


def batched_matmul(a, b):
    """Matrix product over the trailing two axes, batched over the rest.

    Leading axes must match or be broadcastable where one side has
    extent 1 (or is missing). Gradients in the broadcast case are summed
    back down to each operand's own shape.
    """
    _check_dtypes(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 on both sides, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul trailing axes do not conform: {a.shape} x {b.shape}")
    # numpy's matmul falls back to a slow per-batch buffered path when an
    # operand is a strided view (e.g. a permuted state block); one explicit
    # up-front copy is far cheaper
    a_data = np.ascontiguousarray(a.data)
    b_data = np.ascontiguousarray(b.data)
    out_data = np.matmul(a_data, b_data)

    def bw(g):
        # broadcast batches materialize the pre-reduction product; the web
        # step keeps its operands batch-aligned so the hot path never does
        g = np.ascontiguousarray(g)
        _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b_data, -1, -2)), a.data.shape))
        _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a_data, -1, -2), g), b.data.shape))

    return _from_op(out_data, (a, b), bw)


# --- activations -------------------------------------------------------------


def leaky_relu(t, negative_slope=0.01):
    if negative_slope < 0:
        raise ValueError(f"negative_slope must be >= 0, got {negative_slope}")
    x = t.data
    out_data = np.where(x >= 0, x, x * np.asarray(negative_slope, dtype=x.dtype))

    def bw(g):
        # slope at the kink x == 0 is taken from the nonnegative branch
        _accumulate(t, g * np.where(x >= 0, x.dtype.type(1), x.dtype.type(negative_slope)))

    return _from_op(out_data, (t,), bw)


def _sigmoid_stable(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(t):
    y = _sigmoid_stable(t.data)

    def bw(g):
        _accumulate(t, g * y * (1.0 - y))

    return _from_op(y, (t,), bw)


def softmax_last_axis(t):
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _accumulate(t, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _from_op(y, (t,), bw)


# --- convolution -------------------------------------------------------------


def conv2d(x, kernel, bias, stride=1):
    """Valid cross-correlation of (N,C_in,H,W) with (C_out,C_in,K,K) kernels."""
    _check_dtypes(x, kernel, bias)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c_in, h, w = x.shape
    c_out, c_in_k, kh, kw = kernel.shape
    if c_in != c_in_k:
        raise ValueError(f"channel mismatch: input has {c_in}, kernel expects {c_in_k}")
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")

    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (N, C_in, H', W', K, K)
    h_out, w_out = windows.shape[2], windows.shape[3]
    out_data = np.einsum("nchwij,ocij->nohw", windows, kernel.data, optimize=True)
    out_data += bias.data[None, :, None, None]

    def bw(g):
        _accumulate(kernel, np.einsum("nohw,nchwij->ocij", g, windows, optimize=True))
        _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    patch = np.einsum("nohw,oc->nchw", g, kernel.data[:, :, i, j], optimize=True)
                    dx[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += patch
            _accumulate(x, dx)

    return _from_op(out_data, (x, kernel, bias), bw)


# --- losses ------------------------------------------------------------------


def bce_with_logits(logit, target):
    """Mean binary cross-entropy on raw logits, log-sum-exp stable."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=logit.dtype)
    if t.shape != logit.shape:
        raise ValueError(f"logit/target shapes differ: {logit.shape} vs {t.shape}")
    if not np.isin(t, (0.0, 1.0)).all():
        raise ValueError("bce targets must be 0 or 1")
    z = logit.data
    per_elem = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out_data = np.asarray(per_elem.mean(), dtype=z.dtype)

    def bw(g):
        _accumulate(logit, g * (_sigmoid_stable(z) - t) / z.size)

    return _from_op(out_data, (logit,), bw)


def cross_entropy_from_logits(logits, labels):
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"expected (N, C) logits, got {logits.shape}")
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    out_data = np.asarray((lse - z[np.arange(n), labels]).mean(), dtype=z.dtype)

    def bw(g):
        p = np.exp(z - zmax)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        _accumulate(logits, g * p / n)

    return _from_op(out_data, (logits,), bw)


# --- gradient checking --------------------------------------------------------


def finite_difference_gradcheck(loss_fn, params, h=1e-5):
    """Max relative error between backward gradients and central differences.

    `loss_fn` must rebuild the graph on every call and return a scalar
    Tensor. Parameters must be float64; h must lie in [1e-7, 1e-3].
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"h must lie in [1e-7, 1e-3], got {h}")
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("gradcheck requires float64 parameters")

    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    with no_grad():
        for p, ana in zip(params, analytic):
            flat = p.data.reshape(-1)
            ana_flat = ana.reshape(-1)
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + h
                f_plus = float(loss_fn().data)
                flat[i] = saved - h
                f_minus = float(loss_fn().data)
                flat[i] = saved
                numeric = (f_plus - f_minus) / (2.0 * h)
                rel = abs(ana_flat[i] - numeric) / max(abs(ana_flat[i]), abs(numeric), 1e-12)
                worst = max(worst, rel)
    return worst
