"""float64 텐서 위의 역전파 자동미분.

    with Tape() as tape:
        tape.watch(*params)
        loss = f()
        grads = tape.backward(loss)
    grads.of(params[0])

테이프는 forward 한 번마다 새로 만든다. 테이프 밖에서의 연산은 기록되지 않으며
그런 텐서는 여러 스레드가 함께 읽어도 된다.
"""
import logging
import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

_local = threading.local()

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


def active_tape():
    return getattr(_local, "tape", None)


class Tensor:
    __slots__ = ("data", "_tape", "_node")
    __array_priority__ = 1000

    def __init__(self, data):
        data = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NumericalError("tensor created from non-finite values")
        self.data = data
        self._tape = None
        self._node = None

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
    def node(self):
        tape = active_tape()
        return self._node if tape is not None and self._tape is tape else None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node={self._node})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, "sum", axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, "mean", axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Gradients(dict):
    """node-id -> Tensor. 테이프에 watch 된 잎 노드만 담는다."""

    def __init__(self, tape, grads):
        super().__init__(grads)
        self._tape = tape

    def of(self, tensor):
        if tensor._tape is not self._tape or tensor._node not in self:
            return np.zeros(tensor.shape)
        return self[tensor._node].data


class Tape:
    def __init__(self):
        self._parents = []
        self._backward = []
        self._watched = []
        self._previous = None

    def __enter__(self):
        self._previous = active_tape()
        _local.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.tape = self._previous
        for tensor in self._watched:
            tensor._tape = None
            tensor._node = None
        self._watched = []
        return False

    def __len__(self):
        return len(self._parents)

    def _record(self, parents, backward):
        self._parents.append(parents)
        self._backward.append(backward)
        return len(self._parents) - 1

    def watch(self, *tensors):
        for tensor in tensors:
            tensor._tape = self
            tensor._node = self._record((), None)
            self._watched.append(tensor)
        return self

    def backward(self, loss):
        if not isinstance(loss, Tensor) or loss.ndim != 0:
            raise InvalidArgumentError(f"backward needs a scalar loss, got shape {getattr(loss, 'shape', None)}")
        if loss._tape is not self:
            raise InvalidArgumentError("loss was not recorded on this tape")
        grads = {loss._node: np.ones(())}
        leaves = {}
        # 기록 순서가 곧 위상 순서
        for node in range(loss._node, -1, -1):
            g = grads.pop(node, None)
            if g is None:
                continue
            fn = self._backward[node]
            if fn is None:
                leaves[node] = Tensor(g)
                continue
            for parent, pg in zip(self._parents[node], fn(g)):
                if parent is None or pg is None:
                    continue
                grads[parent] = grads[parent] + pg if parent in grads else pg
        return Gradients(self, leaves)


def backward(loss):
    tape = getattr(loss, "_tape", None)
    if tape is None:
        raise InvalidArgumentError("loss is not on an active tape")
    return tape.backward(loss)


def make_op(data, parents, backward_fn):
    """새 미분 가능 연산을 테이프에 기록한다. backward_fn(g) 는 부모별 기울기 튜플을 돌려준다."""
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by a forward op (shape {data.shape})")
    out = Tensor.__new__(Tensor)
    out.data = data
    out._tape = None
    out._node = None
    tape = active_tape()
    if tape is not None:
        ids = tuple(p._node if p._tape is tape else None for p in parents)
        if any(i is not None for i in ids):
            out._tape = tape
            out._node = tape._record(ids, backward_fn)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError as exc:
        raise ShapeError(f"shapes {a} and {b} do not broadcast") from exc


def _axis(axis, ndim):
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


# --- elementwise ---------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return make_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    out = a.data / b.data
    return make_op(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    a = as_tensor(a)
    return make_op(-a.data, (a,), lambda g: (-g,))


def scale(a, constant):
    a = as_tensor(a)
    constant = float(constant)
    return make_op(a.data * constant, (a,), lambda g: (g * constant,))


def square(a):
    a = as_tensor(a)
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise NumericalError("sqrt of a negative value")
    out = np.sqrt(a.data)
    return make_op(out, (a,), lambda g: (0.5 * g / out,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def gelu(a):
    # tanh 근사
    a = as_tensor(a)
    x = a.data
    th = np.tanh(GELU_C * (x + GELU_A * x ** 3))
    out = 0.5 * x * (1.0 + th)

    def backward_fn(g):
        du = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du),)

    return make_op(out, (a,), backward_fn)


_UNARY = {"neg": neg, "square": square, "tanh": tanh, "gelu": gelu, "exp": exp, "sqrt": sqrt}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(a, tag, b=None, constant=None):
    if tag in _BINARY:
        if b is None:
            raise InvalidArgumentError(f"'{tag}' needs a second tensor")
        return _BINARY[tag](a, b)
    if tag == "scale":
        if constant is None:
            raise InvalidArgumentError("'scale' needs a constant")
        return scale(a, constant)
    if tag in _UNARY:
        return _UNARY[tag](a)
    raise InvalidArgumentError(f"unknown elementwise op '{tag}'")


# --- linear algebra / reductions -----------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2])

    def backward_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_op(a.data @ b.data, (a, b), backward_fn)


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return make_op(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layernorm(a, gain, bias, eps=1e-5):
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layernorm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def backward_fn(g):
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(x.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_op(xhat * gain.data + bias.data, (a, gain, bias), backward_fn)


def reduce(a, tag="sum", axis=None, keepdims=False):
    a = as_tensor(a)
    if tag not in ("sum", "mean"):
        raise InvalidArgumentError(f"unknown reduction '{tag}'")
    if axis is None:
        axes = tuple(range(a.ndim))
    else:
        axes = tuple(_axis(ax, a.ndim) for ax in np.atleast_1d(axis))
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.sum(axis=axes, keepdims=keepdims)
    factor = 1.0
    if tag == "mean":
        factor = 1.0 / count
        out = out * factor

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * factor, a.shape).copy(),)

    return make_op(out, (a,), backward_fn)


def reduce_sum(a, axis=None, keepdims=False):
    return reduce(a, "sum", axis, keepdims)


def reduce_mean(a, axis=None, keepdims=False):
    return reduce(a, "mean", axis, keepdims)


# --- structure -----------------------------------------------------------

def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ax = _axis(axis, tensors[0].ndim)
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as exc:
        raise ShapeError(f"cannot concat shapes {[t.shape for t in tensors]} on axis {axis}") from exc
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return make_op(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=ax)))


def take(a, indices, axis=-1):
    a = as_tensor(a)
    ax = _axis(axis, a.ndim)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, indices, axis=ax)

    def backward_fn(g):
        full = np.zeros(np.moveaxis(a.data, ax, 0).shape)
        moved = np.moveaxis(g, list(range(ax, ax + indices.ndim)), list(range(indices.ndim)))
        np.add.at(full, indices, moved)
        return (np.moveaxis(full, 0, ax),)

    return make_op(out, (a,), backward_fn)


def split(a, sizes, axis=-1):
    a = as_tensor(a)
    ax = _axis(axis, a.ndim)
    if sum(sizes) != a.shape[ax]:
        raise ShapeError(f"split sizes {sizes} do not add up to {a.shape[ax]}")
    out, start = [], 0
    for n in sizes:
        out.append(take(a, np.arange(start, start + n), axis=ax))
        start += n
    return out


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from exc
    return make_op(out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a, axis1=-1, axis2=-2):
    a = as_tensor(a)
    return make_op(np.swapaxes(a.data, axis1, axis2), (a,), lambda g: (np.swapaxes(g, axis1, axis2),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from exc
    return make_op(out, (a,), lambda g: (_unbroadcast(g, a.shape),))


# --- gradient check ------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    n_probed: int
    worst: tuple | None = None


REL_ERROR_FLOOR = 1e-4


def relative_error(analytic, numeric, floor=REL_ERROR_FLOOR):
    # 기울기가 floor 보다 작으면 절대 오차 / floor 로 본다
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(f, params, step=1e-5, tol=1e-4, max_probes=None, rng=None):
    """중앙차분과 backward 비교. f 는 인자 없이 스칼라 Tensor 를 돌려주는 결정적 함수."""
    params = list(params)
    with Tape() as tape:
        tape.watch(*params)
        loss = f()
        grads = tape.backward(loss)
        analytic = [grads.of(p).copy() for p in params]

    probes = [(k, i) for k, p in enumerate(params) for i in range(p.size)]
    if max_probes is not None and max_probes < len(probes):
        rng = rng if rng is not None else np.random.default_rng(0)
        picked = np.sort(rng.choice(len(probes), size=max_probes, replace=False))
        probes = [probes[j] for j in picked]

    worst, worst_err = None, 0.0
    for k, i in probes:
        data = params[k].data
        original = data.flat[i]
        data.flat[i] = original + step
        plus = f().item()
        data.flat[i] = original - step
        minus = f().item()
        data.flat[i] = original
        numeric = (plus - minus) / (2.0 * step)
        err = relative_error(analytic[k].reshape(-1)[i], numeric)
        if err > worst_err or worst is None:
            worst, worst_err = (k, i), err
    logger.debug("grad check: %d probes, max relative error %.3e", len(probes), worst_err)
    return GradCheckReport(max_rel_error=worst_err, passed=worst_err < tol, n_probed=len(probes), worst=worst)
