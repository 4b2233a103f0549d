"""Dense tensors with reverse-mode automatic differentiation.

Small tape-based design: every operation returns a new Tensor holding
references to its parents and a closure that routes the output gradient back
to them. `backward(loss)` linearizes the tape in topological order and runs
the closures once each, in reverse. numpy does the array math; the tape only
owns the differentiation rules.

Two float widths are supported (float64 for tests and oracles, float32 for
training). The width is fixed when a tensor is created and operations refuse
to mix widths inside one graph: finite-difference checks are meaningless at
float32, and silent upcasts would hide which width a graph actually ran at.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidMaskError, ShapeMismatchError

# Additive-mask sentinel for blocked attention entries. A finite large
# negative constant rather than -inf: exp() underflows it to exactly 0.0
# without ever producing NaN via inf - inf in the stabilizing max-subtraction.
NEG_INF = -1e9

FLOAT_WIDTHS = (np.float32, np.float64)


class Tensor:
    """N-d array plus an optional gradient slot and a backward rule.

    Tensors without requires_grad are plain immutable values and never
    appear on the tape; sharing them across threads is safe.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if not isinstance(data, np.ndarray):
            data = np.asarray(data)
        if data.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={'yes' if self.requires_grad else 'no'})"

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        # Identity-gradient ops pass one array to several parents, and a
        # later += must not leak across them.  Inside backward() a registry
        # of live grad buffers tells us when storing by reference is safe;
        # outside it, always copy.
        if self.grad is None:
            seen = _GRAD_BUFFERS
            if seen is None or not g.flags.writeable:
                self.grad = np.array(g, copy=True)
                return
            key = _buffer_key(g)
            if key in seen:
                self.grad = np.array(g, copy=True)
            else:
                seen.add(key)
                self.grad = g
        else:
            self.grad += g

    # operator sugar -------------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def param(data, dtype=None) -> Tensor:
    """Leaf tensor that participates in gradients.

    dtype=None keeps a float input's width and lifts everything else to
    float64."""
    arr = np.asarray(data) if dtype is None else np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=True)


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data) if dtype is None else np.asarray(data, dtype=dtype)
    return Tensor(arr)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _check_same_width(a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ShapeMismatchError(
            f"mixed float widths in one graph: {a.data.dtype.name} vs {b.data.dtype.name}"
        )


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad over the axes numpy broadcast when producing it."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------


def linearize(root: Tensor) -> list[Tensor]:
    """Operation records of the graph below root, in topological order.

    Iterative DFS so deep graphs cannot hit the recursion limit.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


_GRAD_BUFFERS: set | None = None


def _buffer_key(g: np.ndarray) -> int:
    return id(g.base) if g.base is not None else id(g)


def backward(root: Tensor) -> None:
    """Reverse-mode sweep from a scalar root; accumulates into .grad slots."""
    global _GRAD_BUFFERS
    if root.data.size != 1:
        raise ShapeMismatchError(f"backward root must be scalar, got shape {root.shape}")
    order = linearize(root)
    root.grad = np.ones_like(root.data)
    prev = _GRAD_BUFFERS
    _GRAD_BUFFERS = seen = set()
    # the root seed stays referenced, so hands of it must copy
    seen.add(_buffer_key(root.grad))
    try:
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                g = node.grad
                # free intermediate grads and the tape edge; leaves keep
                # theirs; the freed buffer is handed to the closure below
                if node is not root:
                    node.grad = None
                    seen.discard(_buffer_key(g))
                node._backward(g)
                node._parents = ()
                node._backward = None
    finally:
        _GRAD_BUFFERS = prev


def zero_grads(params) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def add(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_same_width(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_same_width(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b):
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    _check_same_width(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bwd)


def neg(a):
    def bwd(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), bwd)


def matmul(a: Tensor, b: Tensor):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_width(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), bwd)


def reshape(a: Tensor, shape):
    in_shape = a.shape

    def bwd(g):
        a._accumulate(g.reshape(in_shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def transpose(a: Tensor, axes):
    inverse = np.argsort(axes)

    def bwd(g):
        a._accumulate(g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), bwd)


def broadcast_to(a: Tensor, shape):
    def bwd(g):
        a._accumulate(_unbroadcast(g, a.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), bwd)


def concat(tensors, axis: int):
    tensors = [_as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        _check_same_width(tensors[0], t)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def index(a: Tensor, key):
    """Basic (slice/int) indexing; gradient scatters back into a zero array."""

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        a._accumulate(full)

    return _make(a.data[key].copy(), (a,), bwd)


def take_rows(table: Tensor, idx: np.ndarray):
    """Embedding lookup: rows of a 2-d table selected by an integer array."""
    idx = np.asarray(idx)

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        table._accumulate(full)

    return _make(table.data[idx], (table,), bwd)


def tsum(a: Tensor, axis=None, keepdims=False):
    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims=False):
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape) / count)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def texp(a: Tensor):
    out_data = np.exp(a.data)

    def bwd(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), bwd)


def tlog(a: Tensor):
    def bwd(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def tabs(a: Tensor):
    def bwd(g):
        a._accumulate(g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), bwd)


def tpow(a: Tensor, exponent: float):
    def bwd(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return _make(a.data**exponent, (a,), bwd)


def tanh(a: Tensor):
    out_data = np.tanh(a.data)

    def bwd(g):
        a._accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a: Tensor):
    """tanh-approximation GELU, fused so the FFN stays one tape node."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * (x + 0.044715 * (x2 * x))
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 0.134145 * x2)
        a._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner))

    return _make(out_data, (a,), bwd)


def softmax(a: Tensor, axis: int = -1):
    """Stable softmax; entries pushed below the NEG_INF sentinel come out 0."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - dot))

    return _make(out_data, (a,), bwd)


def masked_softmax(logits: Tensor, mask: np.ndarray, axis: int = -1):
    """Softmax over the valid entries of each slice; invalid entries get
    exactly 0 weight. A slice with no valid entry is an error, never a
    silent uniform distribution."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ShapeMismatchError(f"mask shape {mask.shape} != logits shape {logits.shape}")
    valid_counts = mask.sum(axis=axis)
    if not valid_counts.all():
        bad = np.argwhere(valid_counts == 0)[0]
        raise InvalidMaskError(f"all-invalid softmax slice at index {tuple(bad)} along axis {axis}")
    x = logits.data
    m = np.max(np.where(mask, x, -np.inf), axis=axis, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, x, m) - m), 0.0)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        logits._accumulate(out_data * (g - dot))

    return _make(out_data, (logits,), bwd)


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None):
    # collapse leading axes into one GEMM instead of a stacked-matmul loop
    if x.ndim > 2 and w.ndim == 2:
        out = reshape(matmul(reshape(x, (-1, x.shape[-1])), w),
                      x.shape[:-1] + (w.shape[-1],))
    else:
        out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    rstd = tpow(add(var, constant(eps, dtype=x.dtype)), -0.5)
    return add(mul(mul(centered, rstd), gamma), beta)


def attention(q: Tensor, k: Tensor, v: Tensor, additive_mask: np.ndarray | None = None):
    """softmax(q kᵀ / sqrt(d) + mask) v over the last two axes.

    additive_mask entries are 0 (attend) or NEG_INF (blocked); a row whose
    entries are all blocked has no distribution to normalize and is rejected.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatchError(f"q/k feature dims disagree: {q.shape} vs {k.shape}")
    d = q.shape[-1]
    scores = mul(matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))),
                 constant(1.0 / np.sqrt(d), dtype=q.dtype))
    if additive_mask is not None:
        additive_mask = np.asarray(additive_mask, dtype=q.data.dtype)
        if np.any(np.all(additive_mask <= NEG_INF / 2, axis=-1)):
            raise InvalidMaskError("attention row with every key blocked")
        scores = add(scores, constant(additive_mask, dtype=q.dtype))
    return matmul(softmax(scores, axis=-1), v)
