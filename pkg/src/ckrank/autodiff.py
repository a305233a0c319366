"""Tape-based reverse-mode differentiation over small dense numpy arrays.

Every operation records onto an explicit :class:`Tape`; reversed recording
order is a valid topological order, so backward is a single reverse sweep.
Cross-token contractions go through ``np.einsum`` (the non-BLAS path), which
keeps each output row bitwise independent of batch size; precomputed index
impacts must match per-query scoring exactly, and that property depends on it.

Runtime dtype is float32; construct ``Tape(dtype=np.float64)`` for gradient
verification. Every op output is checked for NaN/Inf and raises NonFinite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllMasked, NonFinite, NonScalarLoss, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "tape", "name", "_parents", "_backward", "_index")

    def __init__(self, data, tape, name=None):
        self.data = data
        self.grad = None
        self.tape = tape
        self.name = name
        self._parents = ()
        self._backward = None
        self._index = -1

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def _lift(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else self.tape.const(other)

    def __add__(self, other):
        return add(self, self._lift(other))

    def __radd__(self, other):
        return add(self._lift(other), self)

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        return mul(self._lift(other), self)

    def __truediv__(self, other):
        return div(self, self._lift(other))

    def __rtruediv__(self, other):
        return div(self._lift(other), self)

    def __neg__(self):
        return mul(self, self._lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Recording context; one tape per forward/backward pass."""

    def __init__(self, dtype=np.float32, record: bool = True):
        self.dtype = np.dtype(dtype)
        self.record = record
        self.nodes: list[Tensor] = []

    def var(self, data, name: str | None = None) -> Tensor:
        """A differentiable leaf (parameter). Shares the array when dtypes match."""
        return self._register(np.asarray(data, dtype=self.dtype), name=name)

    def const(self, data) -> Tensor:
        """A non-differentiated input. Receives no gradient."""
        t = self._register(np.asarray(data, dtype=self.dtype), name="const")
        t._backward = None
        return t

    def _register(self, data: np.ndarray, name=None) -> Tensor:
        if not np.all(np.isfinite(data)):
            raise NonFinite(f"non-finite values in {name or 'op'} output")
        t = Tensor(data, self, name=name)
        if self.record:
            t._index = len(self.nodes)
            self.nodes.append(t)
        return t

    def _op(self, data: np.ndarray, parents, backward_fn, name: str) -> Tensor:
        t = self._register(np.asarray(data, dtype=self.dtype), name=name)
        if self.record:
            t._parents = tuple(parents)
            t._backward = backward_fn
        return t

    def shapes(self) -> list[tuple[int, ...]]:
        """Shapes of every recorded node, for structural memory assertions."""
        return [tuple(n.data.shape) for n in self.nodes]


def _tape_of(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("operands recorded on different tapes")
    return tape


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient of a broadcast result back down to `shape`."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.data.shape} and {b.data.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _tape_of(a, b)
    _broadcast_shapes(a, b, "add")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return tape._op(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    tape = _tape_of(a, b)
    _broadcast_shapes(a, b, "sub")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return tape._op(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _tape_of(a, b)
    _broadcast_shapes(a, b, "mul")

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return tape._op(a.data * b.data, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    tape = _tape_of(a, b)
    _broadcast_shapes(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return tape._op(out, (a, b), backward, "div")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    tape = _tape_of(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {a.data.shape} and {b.data.shape}")
    out = np.einsum("ij,jk->ik", a.data, b.data)

    def backward(g):
        _accumulate(a, np.einsum("ik,jk->ij", g, b.data))
        _accumulate(b, np.einsum("ij,ik->jk", a.data, g))

    return tape._op(out, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    tape = _tape_of(a)
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose: rank {a.data.ndim} != 2")

    def backward(g):
        _accumulate(a, g.T)

    return tape._op(a.data.T.copy(), (a,), backward, "transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    tape = _tape_of(a)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return tape._op(a.data.reshape(shape).copy(), (a,), backward, "reshape")


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    tape = _tape_of(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return tape._op(out, (a,), backward, "reduce_sum")


# ---------------------------------------------------------------------------
# nonlinearities

def relu(a: Tensor) -> Tensor:
    tape = _tape_of(a)
    out = np.maximum(a.data, 0)

    def backward(g):
        _accumulate(a, g * (a.data > 0))

    return tape._op(out, (a,), backward, "relu")


def tanh(a: Tensor) -> Tensor:
    tape = _tape_of(a)
    out = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out * out))

    return tape._op(out, (a,), backward, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    tape = _tape_of(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return tape._op(out, (a,), backward, "sigmoid")


def softplus(a: Tensor) -> Tensor:
    tape = _tape_of(a)
    out = np.logaddexp(np.zeros_like(a.data), a.data)

    def backward(g):
        _accumulate(a, g * (0.5 * (1.0 + np.tanh(0.5 * a.data))))

    return tape._op(out, (a,), backward, "softplus")


def exp(a: Tensor) -> Tensor:
    tape = _tape_of(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out)

    return tape._op(out, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    tape = _tape_of(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return tape._op(out, (a,), backward, "log")


# ---------------------------------------------------------------------------
# structured ops

def softmax(a: Tensor, axis: int) -> Tensor:
    tape = _tape_of(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    z = np.exp(shifted)
    out = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - inner))

    return tape._op(out, (a,), backward, "softmax")


def masked_softmax(a: Tensor, mask, axis: int) -> Tensor:
    """Softmax over `axis` restricted to positions where mask > 0.

    Masked positions get exactly zero weight. Raises AllMasked when a slice
    has no valid position.
    """
    tape = _tape_of(a)
    m = np.asarray(mask, dtype=tape.dtype)
    try:
        np.broadcast_shapes(a.data.shape, m.shape)
    except ValueError:
        raise ShapeMismatch(f"masked_softmax: mask {m.shape} vs data {a.data.shape}") from None
    valid = m > 0
    shifted = np.where(valid, a.data, np.array(-1e30, dtype=tape.dtype))
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    z = np.exp(shifted) * valid
    denom = z.sum(axis=axis, keepdims=True)
    if np.any(denom <= 0):
        raise AllMasked("softmax slice with no valid positions")
    out = z / denom

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - inner))

    return tape._op(out, (a,), backward, "masked_softmax")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then affine."""
    tape = _tape_of(a, gain, bias)
    dim = a.data.shape[-1]
    if gain.data.shape != (dim,) or bias.data.shape != (dim,):
        raise ShapeMismatch(
            f"layer_norm: gain {gain.data.shape}, bias {bias.data.shape}, last axis {dim}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data * xhat + bias.data

    def backward(g):
        axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=axes))
        _accumulate(bias, g.sum(axis=axes))
        dxhat = g * gain.data
        da = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        _accumulate(a, da)

    return tape._op(out, (a, gain, bias), backward, "layer_norm")


def conv1d_depthwise(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 1-D convolution along the sequence axis, zero padded.

    x is (n, D), kernel is (w, D) with w odd; output is (n, D).
    """
    tape = _tape_of(x, kernel)
    if x.data.ndim != 2 or kernel.data.ndim != 2 or kernel.data.shape[1] != x.data.shape[1]:
        raise ShapeMismatch(f"conv1d_depthwise: x {x.data.shape}, kernel {kernel.data.shape}")
    w = kernel.data.shape[0]
    if w % 2 == 0:
        raise ShapeMismatch(f"conv1d_depthwise: window {w} must be odd")
    n, d = x.data.shape
    c = (w - 1) // 2
    xp = np.zeros((n + 2 * c, d), dtype=tape.dtype)
    xp[c : c + n] = x.data
    out = np.zeros((n, d), dtype=tape.dtype)
    for j in range(w):
        out += xp[j : j + n] * kernel.data[j]

    def backward(g):
        gp = np.zeros((n + 2 * c, d), dtype=g.dtype)
        gp[c : c + n] = g
        dx = np.zeros((n, d), dtype=g.dtype)
        dk = np.zeros((w, d), dtype=g.dtype)
        for j in range(w):
            dx += gp[2 * c - j : 2 * c - j + n] * kernel.data[j]
            dk[j] = (g * xp[j : j + n]).sum(axis=0)
        _accumulate(x, dx)
        _accumulate(kernel, dk)

    return tape._op(out, (x, kernel), backward, "conv1d_depthwise")


def embedding_gather(table: Tensor, ids) -> Tensor:
    """Rows of `table` selected by an integer id array."""
    tape = _tape_of(table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatch(f"embedding_gather: ids rank {idx.ndim} != 1")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeMismatch(
            f"embedding_gather: id out of range for table with {table.data.shape[0]} rows"
        )
    out = table.data[idx]

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        _accumulate(table, dt)

    return tape._op(out, (table,), backward, "embedding_gather")


def l2_normalize_rows(x: Tensor, mask=None, eps: float = 1e-12) -> Tensor:
    """Scale each row of (n, D) to unit L2 norm; masked rows become zero."""
    tape = _tape_of(x)
    if x.data.ndim != 2:
        raise ShapeMismatch(f"l2_normalize_rows: rank {x.data.ndim} != 2")
    r = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True) + eps)
    out = x.data / r
    m = None
    if mask is not None:
        m = np.asarray(mask, dtype=tape.dtype).reshape(-1, 1)
        out = out * m

    def backward(g):
        gm = g if m is None else g * m
        dot = (gm * x.data).sum(axis=1, keepdims=True)
        _accumulate(x, gm / r - x.data * (dot / (r * r * r)))

    return tape._op(out, (x,), backward, "l2_normalize_rows")


# ---------------------------------------------------------------------------
# backward pass and verification

def backward(loss: Tensor) -> None:
    """Populate .grad on every node reachable from a scalar loss."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.data.shape}")
    tape = loss.tape
    if not tape.record:
        raise ValueError("cannot run backward on a non-recording tape")
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes[: loss._index + 1]):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def __str__(self):
        lines = [
            f"  {name}: {err:.3e} {'ok' if err <= self.tol else 'FAIL'}"
            for name, err in sorted(self.errors.items())
        ]
        status = "PASS" if self.passed else "FAIL"
        return f"grad check {status} (tol {self.tol:g})\n" + "\n".join(lines)


def grad_check(f, params: dict[str, np.ndarray], h: float = 1e-5, tol: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` maps a dict of float64 parameter arrays to ``(loss, grads)`` where
    grads shares the dict's keys. The relative error per element is
    |analytic - numeric| / (|analytic| + |numeric| + 1e-12); each parameter
    reports its max.
    """
    p64 = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = f(p64)
    errors: dict[str, float] = {}
    for name, arr in p64.items():
        analytic = np.asarray(grads[name], dtype=np.float64)
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = f(p64)
            flat[i] = orig - h
            down, _ = f(p64)
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * h)
        rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
        errors[name] = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(errors=errors, tol=tol)
