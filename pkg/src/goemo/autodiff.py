"""Small reverse-mode autodiff over float64 numpy arrays.

Only the operations the recurrent/attention models and the losses need
are provided. Broadcasting is supported for the elementwise binary ops;
``matmul`` accepts a batched left operand against a 2-D right operand.
"""

import struct
from collections import OrderedDict

import numpy as np
from scipy.special import expit

from .errors import InputError, NumericalError, ShapeError

DTYPE = np.float64


class Tensor:
    """A value in the computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")
    # make ndarray (op) Tensor defer to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, name=None, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.requires_grad = requires_grad
        # interior nodes get their gradient buffer from backward()
        self.grad = np.zeros_like(self.value) if requires_grad and _backward is None else None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self):
        return float(self.value)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(value, name=None):
    return Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward):
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(value)
    return Tensor(value, requires_grad=True, _parents=parents, _backward=backward)


def _accumulate(node, g):
    if node.requires_grad:
        node.grad += g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise binary ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.value - b.value, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.value, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.value, b.shape)

    return _make(a.value * b.value, (a, b), backward)


def matmul(a, b):
    """``a @ b`` with ``a`` of shape (..., n) and ``b`` of shape (n, p)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward(g):
        if a.requires_grad:
            a.grad += g @ b.value.T
        if b.requires_grad:
            a2 = a.value.reshape(-1, a.shape[-1])
            b.grad += a2.T @ g.reshape(-1, b.shape[1])

    return _make(a.value @ b.value, (a, b), backward)


# ---------------------------------------------------------------------------
# shape ops


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            _accumulate(t, piece)

    return _make(value, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")

    def backward(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _make(np.stack([t.value for t in tensors], axis=axis), tuple(tensors), backward)


def select(x, index, axis):
    """Pick one position along ``axis`` (the axis is dropped)."""
    x = as_tensor(x)

    def backward(g):
        if x.requires_grad:
            slicer = [slice(None)] * x.ndim
            slicer[axis] = index
            x.grad[tuple(slicer)] += g

    return _make(np.take(x.value, index, axis=axis), (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return _make(value, (x,), backward)


# ---------------------------------------------------------------------------
# elementwise unary ops


def sigmoid(x):
    x = as_tensor(x)
    s = expit(x.value)

    def backward(g):
        _accumulate(x, g * s * (1.0 - s))

    return _make(s, (x,), backward)


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.value)

    def backward(g):
        _accumulate(x, g * (1.0 - t * t))

    return _make(t, (x,), backward)


def exp(x):
    x = as_tensor(x)
    e = np.exp(x.value)

    def backward(g):
        _accumulate(x, g * e)

    return _make(e, (x,), backward)


def log(x):
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(x.value)

    def backward(g):
        _accumulate(x, g / x.value)

    return _make(value, (x,), backward)


def power(x, exponent):
    """``x ** exponent`` for a constant scalar exponent."""
    x = as_tensor(x)
    exponent = float(exponent)
    value = x.value ** exponent

    def backward(g):
        if exponent == 0.0:
            return
        _accumulate(x, g * exponent * x.value ** (exponent - 1.0))

    return _make(value, (x,), backward)


def clip(x, lo, hi):
    x = as_tensor(x)
    inside = (x.value >= lo) & (x.value <= hi)

    def backward(g):
        _accumulate(x, g * inside)

    return _make(np.clip(x.value, lo, hi), (x,), backward)


# ---------------------------------------------------------------------------
# reductions


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)

    def backward(g):
        if x.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x.grad += np.broadcast_to(g, x.shape)

    return _make(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def softmax(x, axis=-1, mask=None):
    """Softmax along ``axis``; positions where ``mask`` is False get zero weight."""
    x = as_tensor(x)
    v = x.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != v.shape:
            raise ShapeError(f"softmax: mask shape {mask.shape} != input shape {v.shape}")
        if not np.all(mask.any(axis=axis)):
            raise InputError("softmax: every position masked in at least one slice")
        v = np.where(mask, v, -np.inf)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        _accumulate(x, y * (g - np.sum(g * y, axis=axis, keepdims=True)))

    return _make(y, (x,), backward)


def dropout(x, rate, rng, training=True):
    """Inverted dropout: scale kept units by 1/(1-rate) at train time."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise InputError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


# ---------------------------------------------------------------------------
# backward pass


def _topological_order(root):
    order = []
    visited = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack_.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` of every node reachable from the scalar ``loss``.

    Gradients of all reachable nodes (parameters included) are reset to zero
    first, so repeated calls never double-count.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# parameters and optimizer


class ParameterSet:
    """Named trainable tensors plus Adam moment state."""

    def __init__(self, params=None):
        self._params = OrderedDict()
        self.m = {}
        self.v = {}
        self.step = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name, value):
        if name in self._params:
            raise InputError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else parameter(value, name=name)
        t.requires_grad = True
        t.name = name
        if t.grad is None:
            t.grad = np.zeros_like(t.value)
        self._params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.value)

    def num_values(self):
        return int(np.sum([t.value.size for t in self._params.values()]))

    def copy(self):
        """Deep copy of values and optimizer state."""
        other = ParameterSet({n: t.value.copy() for n, t in self._params.items()})
        other.m = {n: a.copy() for n, a in self.m.items()}
        other.v = {n: a.copy() for n, a in self.v.items()}
        other.step = self.step
        return other

    def state_dict(self):
        return OrderedDict((n, t.value.copy()) for n, t in self._params.items())

    def load_state_dict(self, arrays):
        for name, value in arrays.items():
            if name not in self._params:
                raise ShapeError(f"unknown parameter {name!r}")
            if value.shape != self._params[name].shape:
                raise ShapeError(f"{name}: shape {value.shape} != {self._params[name].shape}")
            self._params[name].value[...] = value

    def save(self, path):
        save_tensors(path, self.state_dict())

    @classmethod
    def load(cls, path):
        return cls(load_tensors(path))


def adam_step(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of every parameter in ``params``."""
    for name, t in params.items():
        if not np.all(np.isfinite(t.grad)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}")
    params.step += 1
    c1 = 1.0 - beta1 ** params.step
    c2 = 1.0 - beta2 ** params.step
    for name, t in params.items():
        g = t.grad
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def clip_grad_norm(params, max_norm):
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(np.sum([np.sum(t.grad * t.grad) for _, t in params.items()])))
    if max_norm is not None and total > max_norm:
        scale = max_norm / total
        for _, t in params.items():
            t.grad *= scale
    return total


def grad_check(f, params, epsilon=1e-5, max_coords=None, rng=None):
    """Compare backprop gradients with central finite differences.

    ``f(params)`` must return a scalar Tensor and be deterministic. At most
    ``max_coords`` coordinates per parameter are probed (all if None). The
    return value is the worst relative error
    ``|a - n| / max(|a|, |n|, 1e-8)`` over the probed coordinates.
    """
    if epsilon <= 0:
        raise InputError("epsilon must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)

    def evaluate():
        value = f(params)
        out = float(value.value) if isinstance(value, Tensor) else float(value)
        if not np.isfinite(out):
            raise NumericalError(f"objective is not finite: {out}")
        return out

    params.zero_grad()
    loss = f(params)
    if not np.isfinite(loss.value).all():
        raise NumericalError("objective is not finite")
    backward(loss)
    analytic = {name: t.grad.copy() for name, t in params.items()}

    worst = 0.0
    for name, t in params.items():
        flat = t.value.reshape(-1)
        n = flat.size
        if max_coords is None or max_coords >= n:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = evaluate()
            flat[i] = orig - epsilon
            fm = evaluate()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * epsilon)
            a = a_flat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# named-tensor container
#
# layout (little endian):
#   magic b"GOEMOTNS", uint32 version=1, uint32 tensor count, then per tensor:
#   uint32 name byte length, utf-8 name, uint32 ndim, ndim x uint64 dims,
#   prod(dims) float64 values in row-major order.

_MAGIC = b"GOEMOTNS"


def save_tensors(path, arrays):
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", 1, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_tensors(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise InputError(f"{path}: not a tensor container")
    version, count = struct.unpack_from("<II", data, 8)
    if version != 1:
        raise InputError(f"{path}: unsupported container version {version}")
    pos = 16
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(DTYPE)
        pos += 8 * size
        out[name] = arr
    return out
