"""Dense float64 tensors (rank <= 2) with tape-based reverse-mode differentiation.

Ops record themselves on the active :class:`Tape` only when a tape is active and
at least one input requires a gradient; with no active tape every op is a pure
numpy computation, which is what frozen-parameter inference uses.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import NonFiniteError, ShapeError, TapeError

_local = threading.local()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"rank {arr.ndim} tensors are not supported")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{req}{nm})"

    # operator sugar for the common elementwise cases
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def constant(data):
    return Tensor(data, requires_grad=False)


def zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=False)


def one_hot(index, size):
    if not 0 <= index < size:
        raise IndexError(f"one-hot index {index} out of range for size {size}")
    v = np.zeros(size)
    v[index] = 1.0
    return Tensor(v)


@dataclass
class _Record:
    out: Tensor
    inputs: Sequence[Tensor]
    backward: Callable


class Tape:
    """Ordered record of executed ops. Ops are appended after their inputs' producers."""

    def __init__(self):
        self._records = []
        self._produced = set()

    def __len__(self):
        return len(self._records)

    def record(self, out, inputs, backward_fn):
        self._records.append(_Record(out, tuple(inputs), backward_fn))
        self._produced.add(id(out))

    def produced(self, t):
        return id(t) in self._produced

    def clear(self):
        self._records = []
        self._produced = set()

    @contextmanager
    def recording(self):
        stack = _tape_stack()
        stack.append(self)
        try:
            yield self
        finally:
            stack.pop()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    """Temporarily suspend recording on this thread."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def _finish(data, inputs, backward_fn, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    tape = current_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out.requires_grad = track
    if track:
        tape.record(out, inputs, backward_fn)
    return out


def _require_shape(cond, msg):
    if not cond:
        raise ShapeError(msg)


def backward(loss, tape=None):
    """Accumulate dloss/dparam into ``.grad`` of every leaf that requires grad, then clear the tape."""
    if loss.size != 1:
        raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = tape or current_tape()
    if tape is None or not tape.produced(loss):
        raise TapeError("loss is not on the active tape; backward() already called or forward not recorded")

    grads = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape._records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            if tape.produced(t):
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi
            else:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
    tape.clear()


# ---------------------------------------------------------------- primitives

def linear(W, b, x):
    """W·x + b for W (m, n), b (m,) or None, x (n,)."""
    _require_shape(W.data.ndim == 2 and x.data.ndim == 1 and W.shape[1] == x.shape[0],
                   f"linear: W{W.shape} cannot multiply x{x.shape}")
    out = W.data @ x.data
    if b is not None:
        _require_shape(b.shape == (W.shape[0],), f"linear: bias {b.shape} does not match W{W.shape}")
        out = out + b.data
        inputs = (W, b, x)
    else:
        inputs = (W, x)

    def bw(g):
        gW = np.outer(g, x.data) if W.requires_grad else None
        gx = W.data.T @ g if x.requires_grad else None
        if b is None:
            return gW, gx
        return gW, g, gx

    return _finish(out, inputs, bw, "linear")


def matvec(W, x):
    return linear(W, None, x)


def add(a, b):
    _require_shape(a.shape == b.shape, f"add: {a.shape} vs {b.shape}")
    return _finish(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    _require_shape(a.shape == b.shape, f"sub: {a.shape} vs {b.shape}")
    return _finish(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    _require_shape(a.shape == b.shape, f"mul: {a.shape} vs {b.shape}")
    return _finish(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a, c):
    return _finish(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_n(tensors):
    """Sum of same-shape tensors, added in a canonical order of their values.

    The order depends only on the values, so any permutation of the inputs gives
    a bit-identical result.
    """
    tensors = list(tensors)
    _require_shape(len(tensors) > 0, "add_n of nothing")
    shape = tensors[0].shape
    for t in tensors:
        _require_shape(t.shape == shape, f"add_n: {t.shape} vs {shape}")
    ordered = sorted(tensors, key=lambda t: tuple(t.data.ravel()))
    out = ordered[0].data.copy()
    for t in ordered[1:]:
        out = out + t.data
    return _finish(out, tuple(ordered), lambda g: tuple(g for _ in ordered), "add_n")


def concat(tensors):
    tensors = list(tensors)
    for t in tensors:
        _require_shape(t.data.ndim == 1, f"concat expects vectors, got {t.shape}")
    sizes = [t.size for t in tensors]
    out = np.concatenate([t.data for t in tensors])
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _finish(out, tuple(tensors), bw, "concat")


def stack(tensors):
    tensors = list(tensors)
    _require_shape(len(tensors) > 0, "stack of nothing")
    for t in tensors:
        _require_shape(t.data.ndim == 1 and t.shape == tensors[0].shape, "stack expects equal-length vectors")
    out = np.stack([t.data for t in tensors])
    return _finish(out, tuple(tensors), lambda g: tuple(g[i] for i in range(len(tensors))), "stack")


def transpose(M):
    _require_shape(M.data.ndim == 2, "transpose expects a matrix")
    return _finish(M.data.T.copy(), (M,), lambda g: (g.T,), "transpose")


def total(x):
    """Sum of all elements as a scalar tensor."""
    return _finish(np.array(x.data.sum()), (x,), lambda g: (np.full_like(x.data, g),), "sum")


def dot(a, b):
    _require_shape(a.data.ndim == 1 and a.shape == b.shape, f"dot: {a.shape} vs {b.shape}")
    return _finish(np.array(a.data @ b.data), (a, b), lambda g: (g * b.data, g * a.data), "dot")


def relu(x):
    mask = x.data > 0
    return _finish(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def _sigmoid_np(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    s = _sigmoid_np(np.atleast_1d(x.data)).reshape(x.shape)
    return _finish(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x):
    t = np.tanh(x.data)
    return _finish(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(x):
    e = np.exp(x.data)
    return _finish(e, (x,), lambda g: (g * e,), "exp")


def softmax_np(v):
    shifted = v - np.max(v)
    e = np.exp(shifted)
    return e / e.sum()


def softmax(x):
    _require_shape(x.data.ndim == 1 and x.size >= 1, f"softmax expects a non-empty vector, got {x.shape}")
    s = softmax_np(x.data)

    def bw(g):
        return (s * (g - g @ s),)

    return _finish(s, (x,), bw, "softmax")


def log_softmax(x):
    _require_shape(x.data.ndim == 1 and x.size >= 1, f"log_softmax expects a non-empty vector, got {x.shape}")
    shifted = x.data - np.max(x.data)
    lse = np.log(np.exp(shifted).sum())
    out = shifted - lse
    s = np.exp(out)
    return _finish(out, (x,), lambda g: (g - s * g.sum(),), "log_softmax")


def cross_entropy(logits, target):
    """-log softmax(logits)[target] as a scalar tensor."""
    _require_shape(logits.data.ndim == 1, f"cross_entropy expects a vector, got {logits.shape}")
    k = logits.size
    if not 0 <= target < k:
        raise IndexError(f"cross_entropy target {target} out of range for {k} classes")
    shifted = logits.data - np.max(logits.data)
    lse = np.log(np.exp(shifted).sum())
    loss = lse - shifted[target]
    p = np.exp(shifted - lse)

    def bw(g):
        d = p.copy()
        d[target] -= 1.0
        return (g * d,)

    return _finish(np.array(loss), (logits,), bw, "cross_entropy")


def bce_with_logits(logit, target):
    """Binary cross-entropy of a single logit against a 0/1 target."""
    _require_shape(logit.size == 1, f"bce_with_logits expects one logit, got {logit.shape}")
    l = float(logit.data.reshape(()))
    loss = max(l, 0.0) - l * target + np.log1p(np.exp(-abs(l)))
    p = float(_sigmoid_np(np.array([l]))[0])

    def bw(g):
        return (np.full_like(logit.data, g * (p - target)),)

    return _finish(np.array(loss), (logit,), bw, "bce_with_logits")


def kl_diag_gaussian(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) = 1/2 sum(exp(logvar) + mu^2 - 1 - logvar)."""
    _require_shape(mu.shape == logvar.shape, f"kl: {mu.shape} vs {logvar.shape}")
    ev = np.exp(logvar.data)
    # expm1 keeps the term exactly 0 at the prior and nonnegative elsewhere
    terms = np.expm1(logvar.data) - logvar.data + mu.data ** 2
    out = np.array(0.5 * max(terms.sum(), 0.0))

    def bw(g):
        return g * mu.data, 0.5 * g * (ev - 1.0)

    return _finish(out, (mu, logvar), bw, "kl_diag_gaussian")
