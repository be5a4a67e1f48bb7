"""Minimal reverse-mode differentiation over dense numpy arrays.

Operations performed while a :class:`Tape` is active are appended to it in
execution order, which is already a topological order of the computation.
:func:`backward` walks that record once, in reverse.

    >>> w = Parameter(np.ones((2, 2)), name="w")
    >>> with Tape():
    ...     loss = (w @ as_tensor(np.ones((2, 1)))).sum()
    >>> backward(loss)
    >>> w.grad
    array([[1., 1.],
           [1., 1.]])
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

COSINE_EPS = 1e-12

_active: list["Tape"] = []


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes " + " and ".join(str(s) for s in shapes))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Optional[Tape] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self):
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def sum(self):
        return sum_all(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), scale(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


class Parameter(Tensor):
    """A trainable leaf. ``decay`` marks tensors subject to weight decay."""

    __slots__ = ("decay",)

    def __init__(self, data, name: Optional[str] = None, decay: bool = True):
        super().__init__(np.array(data, copy=True), requires_grad=True, name=name)
        self.decay = decay


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype) if dtype is not None else np.asarray(x)
    return Tensor(arr)


class Tape:
    """Ordered record of primitive operations.

    Used as a context manager; nesting is allowed, the innermost tape records.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def clear(self):
        for out, _, _ in self.records:
            out._tape = None
        self.records.clear()

    def backward(self, loss: Tensor, params: Optional[Sequence[Tensor]] = None):
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for out, inputs, vjp in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, vjp(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t._tape is None:
                    leaves[id(t)] = t
                key = id(t)
                grads[key] = grads[key] + gi if key in grads else gi
        for key, t in leaves.items():
            t.grad = grads.get(key, np.zeros_like(t.data))
        if params is not None:
            for p in params:
                if id(p) not in leaves:
                    p.grad = np.zeros_like(p.data)
        self.clear()


def backward(loss: Tensor, params: Optional[Sequence[Tensor]] = None):
    """Populate ``.grad`` on every leaf that ``loss`` depends on.

    Tensors listed in ``params`` but absent from the computation get zero
    gradients. The tape that recorded ``loss`` is cleared afterwards.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
            return
        raise RuntimeError("loss was not computed under an active Tape")
    loss._tape.backward(loss, params)


def _make(data, inputs: tuple, vjp: Callable) -> Tensor:
    out = Tensor(data)
    if _active and any(t.requires_grad for t in inputs):
        tape = _active[-1]
        out.requires_grad = True
        out._tape = tape
        tape.records.append((out, inputs, vjp))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise / linear algebra ------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


elementwise_mul = mul


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T if a.requires_grad else None,
                            a.data.T @ g if b.requires_grad else None))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


# -- nonlinearities --------------------------------------------------------

def elu(a) -> Tensor:
    """Elu with alpha = 1."""
    a = as_tensor(a)
    x = a.data
    neg = np.expm1(np.minimum(x, 0.0))
    y = np.where(x > 0, x, neg)
    return _make(y, (a,), lambda g: (g * np.where(x > 0, 1.0, neg + 1.0),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    y = np.logaddexp(0.0, x)
    sig = np.exp(-np.logaddexp(0.0, -x))
    return _make(y, (a,), lambda g: (g * sig,))


def positive_part(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def negative_part(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.minimum(a.data, 0.0), (a,), lambda g: (g * (a.data < 0),))


def row_softmax(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    if x.ndim == 1:
        out = row_softmax(reshape(a, (1, -1)))
        return reshape(out, a.shape)
    m = x.max(axis=1, keepdims=True)
    if np.isneginf(m).any():
        row = int(np.flatnonzero(np.isneginf(m))[0])
        raise ValueError(f"row_softmax: row {row} is entirely -inf")
    e = np.exp(x - m)
    y = e / e.sum(axis=1, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),))


def dropout(a, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout. Identity when not training or when ``rate == 0``."""
    a = as_tensor(a)
    if not training or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


# -- similarity and graph propagation --------------------------------------

def cosine_rows(a, b) -> Tensor:
    """Pairwise cosine similarity between rows of ``a`` (N, F) and ``b`` (M, F).

    A zero row has similarity 0 with everything.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("cosine_rows", a.shape, b.shape)
    A, B = a.data, b.data
    na = np.sqrt((A * A).sum(axis=1))
    nb = np.sqrt((B * B).sum(axis=1))
    P = A @ B.T
    D = np.outer(na, nb) + COSINE_EPS
    C = P / D

    def vjp(g):
        gd = g / D
        M = -g * P / (D * D)
        ua = np.divide(A, na[:, None], out=np.zeros_like(A), where=na[:, None] > 0)
        ub = np.divide(B, nb[:, None], out=np.zeros_like(B), where=nb[:, None] > 0)
        da = gd @ B + ua * (M @ nb)[:, None]
        db = gd.T @ A + ub * (M.T @ na)[:, None]
        return da, db

    return _make(C, (a, b), vjp)


def cosine_paired(a, b) -> Tensor:
    """Cosine similarity of aligned row pairs: ``out[e] = cos(a[e], b[e])``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.data.ndim != 2:
        raise ShapeError("cosine_paired", a.shape, b.shape)
    A, B = a.data, b.data
    na = np.sqrt((A * A).sum(axis=1))
    nb = np.sqrt((B * B).sum(axis=1))
    P = (A * B).sum(axis=1)
    D = na * nb + COSINE_EPS
    C = P / D

    def vjp(g):
        gd = (g / D)[:, None]
        m = (-g * P / (D * D))[:, None]
        ua = np.divide(A, na[:, None], out=np.zeros_like(A), where=na[:, None] > 0)
        ub = np.divide(B, nb[:, None], out=np.zeros_like(B), where=nb[:, None] > 0)
        return gd * B + m * nb[:, None] * ua, gd * A + m * na[:, None] * ub

    return _make(C, (a, b), vjp)


def gather_rows(a, idx: np.ndarray) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]

    def vjp(g):
        scatter = sp.csr_matrix((np.ones(idx.size, dtype=g.dtype), (idx, np.arange(idx.size))),
                                shape=(n, idx.size))
        return (np.asarray(scatter @ g),)

    return _make(a.data[idx], (a,), vjp)


def spmm(weights, rows: np.ndarray, cols: np.ndarray, dense, num_rows: int,
         indptr: Optional[np.ndarray] = None) -> Tensor:
    """Sparse-times-dense product with differentiable edge weights.

    ``out[r] = sum_e weights[e] * dense[cols[e]]`` over entries with
    ``rows[e] == r``. ``rows`` must be sorted when ``indptr`` is given.
    """
    w, x = as_tensor(weights), as_tensor(dense)
    if w.data.ndim != 1 or w.shape[0] != len(rows) or x.data.ndim != 2:
        raise ShapeError("spmm", w.shape, x.shape)
    shape = (num_rows, x.shape[0])
    if indptr is None:
        mat = sp.csr_matrix((w.data, (rows, cols)), shape=shape)
    else:
        mat = sp.csr_matrix((w.data, cols, indptr), shape=shape)
    out = np.asarray(mat @ x.data)

    def vjp(g):
        gx = np.asarray(mat.T @ g) if x.requires_grad else None
        gw = np.einsum("ij,ij->i", g[rows], x.data[cols]) if w.requires_grad else None
        return gw, gx

    return _make(out, (w, x), vjp)


def sparse_matmul(mat: sp.spmatrix, dense) -> Tensor:
    """Constant sparse matrix times a differentiable dense matrix."""
    x = as_tensor(dense)
    if mat.shape[1] != x.shape[0]:
        raise ShapeError("sparse_matmul", mat.shape, x.shape)
    return _make(np.asarray(mat @ x.data), (x,), lambda g: (np.asarray(mat.T @ g),))


# -- loss ------------------------------------------------------------------

def log_softmax_np(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=1, keepdims=True))


def cross_entropy_masked(logits, labels, mask) -> Tensor:
    """Mean negative log-likelihood of ``labels`` over the rows in ``mask``."""
    z = as_tensor(logits)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    if z.data.ndim != 2 or labels.shape != (z.shape[0],) or mask.shape != labels.shape:
        raise ShapeError("cross_entropy_masked", z.shape, labels.shape, mask.shape)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("cross_entropy_masked: empty mask")
    lsm = log_softmax_np(z.data[rows])
    picked = labels[rows]
    loss = -lsm[np.arange(rows.size), picked].mean()

    def vjp(g):
        grad = np.zeros_like(z.data)
        p = np.exp(lsm)
        p[np.arange(rows.size), picked] -= 1.0
        grad[rows] = p * (g / rows.size)
        return (grad,)

    return _make(np.asarray(loss, dtype=z.dtype), (z,), vjp)


# -- verification ----------------------------------------------------------

def finite_diff_check(f: Callable[[Sequence[Tensor]], Tensor], params: Sequence[Tensor],
                      epsilon: float = 1e-5, grads: Optional[Sequence[np.ndarray]] = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``f(params)`` must return a scalar tensor and be a pure function of the
    parameter values. Pass ``grads`` to check externally supplied gradients
    instead of the ones produced by :func:`backward`. The relative error of
    each entry is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    params = list(params)
    if grads is None:
        with Tape():
            loss = f(params)
        backward(loss, params)
        grads = [p.grad.copy() for p in params]
    worst = 0.0
    for p, analytic in zip(params, grads):
        flat = p.data.reshape(-1)
        ga = np.asarray(analytic).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = float(f(params).data)
            flat[i] = orig - epsilon
            down = float(f(params).data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(ga[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(ga[i] - numeric) / denom)
    return worst
