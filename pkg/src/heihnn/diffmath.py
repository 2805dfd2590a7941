"""Reverse-mode differentiation over dense float64 matrices.

Every op returns a new :class:`Value` whose ``_backward`` closure pushes
``out.grad`` into its parents' ``grad`` buffers (accumulating, never
overwriting). Values are always 2-D.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


class Value:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _copy: bool = True):
        arr = np.array(data, dtype=np.float64, copy=True if _copy else None)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ShapeError(f"Value must be at most 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad = np.zeros_like(arr)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Value{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def _lift(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _result(data: np.ndarray, parents: Sequence[Value]) -> Value:
    needs = any(p.requires_grad for p in parents)
    return Value(data, requires_grad=needs, _parents=tuple(parents) if needs else (), _copy=False)


def matmul(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    out = _result(a.data @ b.data, (a, b))

    def _backward():
        if a.requires_grad:
            a.grad += out.grad @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ out.grad

    out._backward = _backward
    return out


def sparse_scatter_matmul(s, v) -> Value:
    """Constant (sparse or dense) matrix times a Value."""
    v = _lift(v)
    if s.shape[1] != v.shape[0]:
        raise ShapeError(f"operator shape {s.shape} does not match input {v.shape}")
    out = _result(np.asarray(s @ v.data), (v,))

    def _backward():
        v.grad += np.asarray(s.T @ out.grad)

    out._backward = _backward
    return out


def add(a, b) -> Value:
    """Elementwise sum; ``b`` may be a 1-row bias broadcast over ``a``'s rows."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape and not (b.shape[0] == 1 and b.shape[1] == a.shape[1]):
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    out = _result(a.data + b.data, (a, b))

    def _backward():
        if a.requires_grad:
            a.grad += out.grad
        if b.requires_grad:
            b.grad += out.grad if b.shape == a.shape else out.grad.sum(axis=0, keepdims=True)

    out._backward = _backward
    return out


def scale(v, c: float) -> Value:
    v = _lift(v)
    c = float(c)
    out = _result(v.data * c, (v,))

    def _backward():
        v.grad += out.grad * c

    out._backward = _backward
    return out


def mul(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    out = _result(a.data * b.data, (a, b))

    def _backward():
        if a.requires_grad:
            a.grad += out.grad * b.data
        if b.requires_grad:
            b.grad += out.grad * a.data

    out._backward = _backward
    return out


def mul_const(v, arr) -> Value:
    """Elementwise product with a constant array (broadcast against ``v``)."""
    v = _lift(v)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    out = _result(v.data * arr, (v,))

    def _backward():
        v.grad += out.grad * arr

    out._backward = _backward
    return out


def total(v) -> Value:
    v = _lift(v)
    out = _result(np.array([[v.data.sum()]]), (v,))

    def _backward():
        v.grad += out.grad[0, 0]

    out._backward = _backward
    return out


def relu(v) -> Value:
    v = _lift(v)
    keep = v.data > 0
    out = _result(np.where(keep, v.data, 0.0), (v,))

    def _backward():
        v.grad += out.grad * keep

    out._backward = _backward
    return out


def tanh(v) -> Value:
    v = _lift(v)
    t = np.tanh(v.data)
    out = _result(t, (v,))

    def _backward():
        v.grad += out.grad * (1.0 - t * t)

    out._backward = _backward
    return out


def identity(v) -> Value:
    return _lift(v)


ACTIVATIONS: dict[str, Callable[[Value], Value]] = {
    "relu": relu,
    "tanh": tanh,
    "identity": identity,
}


def dropout(v, p: float, rng: np.random.Generator | None, training: bool = True) -> Value:
    """Inverted dropout: kept entries are scaled by 1/(1-p); identity when not training."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    v = _lift(v)
    if not training or p == 0.0:
        return v
    keep = (rng.random(v.shape) >= p) / (1.0 - p)
    return mul_const(v, keep)


def row_l2_norms(v) -> Value:
    v = _lift(v)
    norms = np.sqrt((v.data ** 2).sum(axis=1, keepdims=True))
    out = _result(norms, (v,))

    def _backward():
        safe = np.where(norms > 0, norms, 1.0)
        v.grad += out.grad * np.where(norms > 0, v.data / safe, 0.0)

    out._backward = _backward
    return out


def masked_softmax(logits, support, axis: int = 0) -> Value:
    """Softmax along ``axis`` restricted to ``support``; unsupported positions give exactly 0.

    Each slice along ``axis`` is one normalization group and must contain at
    least one supported position.
    """
    logits = _lift(logits)
    support = np.asarray(support, dtype=bool)
    if support.shape != logits.shape:
        raise ShapeError(f"support shape {support.shape} != logits shape {logits.shape}")
    counts = support.sum(axis=axis)
    if np.any(counts == 0):
        group = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"normalization group {group} has no supported position")
    shifted = np.where(support, logits.data, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.where(support, np.exp(shifted), 0.0)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _result(s, (logits,))

    def _backward():
        g = out.grad
        logits.grad += s * (g - (g * s).sum(axis=axis, keepdims=True))

    out._backward = _backward
    return out


def segment_softmax(logits, groups: np.ndarray, n_groups: int) -> Value:
    """Softmax of a column of entries within groups given by ``groups[k]``."""
    logits = _lift(logits)
    x = logits.data[:, 0]
    if np.any(np.bincount(groups, minlength=n_groups) == 0):
        group = int(np.flatnonzero(np.bincount(groups, minlength=n_groups) == 0)[0])
        raise ValueError(f"normalization group {group} has no supported position")
    gmax = np.full(n_groups, -np.inf)
    np.maximum.at(gmax, groups, x)
    e = np.exp(x - gmax[groups])
    s = e / np.bincount(groups, weights=e, minlength=n_groups)[groups]
    out = _result(s[:, None], (logits,))

    def _backward():
        g = out.grad[:, 0]
        dot = np.bincount(groups, weights=g * s, minlength=n_groups)
        logits.grad[:, 0] += s * (g - dot[groups])

    out._backward = _backward
    return out


def segment_normalize(values, groups: np.ndarray, n_groups: int, active=None,
                      tiny: float = 1e-12) -> Value:
    """Divide entries by their group sum.

    Only groups flagged in ``active`` (default: all) with a sum of at least
    ``tiny`` are touched; the rest pass through bit-for-bit.
    """
    values = _lift(values)
    v = values.data[:, 0]
    sums = np.bincount(groups, weights=v, minlength=n_groups)
    ok = sums >= tiny
    if active is not None:
        ok &= np.asarray(active, dtype=bool)
    hit = ok[groups]
    denom = np.where(hit, sums[groups], 1.0)
    o = np.where(hit, v / denom, v)
    out = _result(o[:, None], (values,))

    def _backward():
        g = out.grad[:, 0]
        dot = np.bincount(groups, weights=g * o, minlength=n_groups)
        values.grad[:, 0] += np.where(hit, (g - dot[groups]) / denom, g)

    out._backward = _backward
    return out


def gather_dot(q, k, rows: np.ndarray, cols: np.ndarray) -> Value:
    """Column of dot products ``q[rows[t]] . k[cols[t]]``."""
    q, k = _lift(q), _lift(k)
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query width {q.shape[1]} != key width {k.shape[1]}")
    qr, kc = q.data[rows], k.data[cols]
    out = _result(np.einsum("ij,ij->i", qr, kc)[:, None], (q, k))

    def _backward():
        g = sp.csr_matrix((out.grad[:, 0], (rows, cols)), shape=(q.shape[0], k.shape[0]))
        if q.requires_grad:
            q.grad += g @ k.data
        if k.requires_grad:
            k.grad += g.T @ q.data

    out._backward = _backward
    return out


def pattern_matmul(values, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int], x,
                   transpose: bool = False) -> Value:
    """S @ x (or S^T @ x) where S has fixed pattern (rows, cols) and differentiable entries."""
    values, x = _lift(values), _lift(x)
    s = sp.csr_matrix((values.data[:, 0], (rows, cols)), shape=shape)
    op = s.T if transpose else s
    if op.shape[1] != x.shape[0]:
        raise ShapeError(f"pattern operator {op.shape} does not match input {x.shape}")
    out = _result(np.asarray(op @ x.data), (values, x))
    src, dst = (rows, cols) if transpose else (cols, rows)

    def _backward():
        g = out.grad
        if x.requires_grad:
            x.grad += np.asarray(op.T @ g)
        if values.requires_grad:
            values.grad[:, 0] += np.einsum("ij,ij->i", g[dst], x.data[src])

    out._backward = _backward
    return out


def weighted_sum(terms: Sequence[Value], coeffs) -> Value:
    """sum_i coeffs[0, i] * terms[i] with learnable coefficients."""
    coeffs = _lift(coeffs)
    if coeffs.shape != (1, len(terms)):
        raise ShapeError(f"coefficients {coeffs.shape} do not match {len(terms)} terms")
    c = coeffs.data[0]
    acc = np.zeros_like(terms[0].data)
    for ci, t in zip(c, terms):
        acc = acc + ci * t.data
    out = _result(acc, (coeffs, *terms))

    def _backward():
        g = out.grad
        for i, t in enumerate(terms):
            if coeffs.requires_grad:
                coeffs.grad[0, i] += (g * t.data).sum()
            if t.requires_grad:
                t.grad += c[i] * g

    out._backward = _backward
    return out


def cross_entropy(logits, labels, mask) -> Value:
    """Mean of -log softmax(logits)[row, label] over the rows in ``mask``."""
    logits = _lift(logits)
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.asarray(mask, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cross_entropy needs at least one row")
    n_classes = logits.shape[1]
    y = labels[idx]
    bad = np.flatnonzero((y < 0) | (y >= n_classes))
    if bad.size:
        raise ValueError(f"row {idx[bad[0]]}: label {y[bad[0]]} outside [0, {n_classes})")
    z = logits.data[idx]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(idx.size), y].mean()
    out = _result(np.array([[loss]]), (logits,))

    def _backward():
        p = np.exp(logp)
        p[np.arange(idx.size), y] -= 1.0
        np.add.at(logits.grad, idx, p * (out.grad[0, 0] / idx.size))

    out._backward = _backward
    return out


def _topological(root: Value) -> list[Value]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Value) -> None:
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
    if not loss.requires_grad:
        return
    loss.grad += 1.0
    for node in reversed(_topological(loss)):
        if node._backward is not None:
            node._backward()


def zero_grads(values: Iterable[Value]) -> None:
    for v in values:
        v.zero_grad()


def grad_check(f: Callable[[Value], Value], x0: Value, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences for ``f`` at ``x0``.

    ``x0`` is perturbed in place and restored; ``f`` must rebuild its graph on
    every call.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0.requires_grad = True
    x0.zero_grad()
    out = f(x0)
    if out.shape != (1, 1):
        raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    backward(out)
    analytic = x0.grad.copy()
    numeric = np.zeros_like(analytic)
    flat = x0.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(x0).data[0, 0]
        flat[i] = orig - eps
        down = f(x0).data[0, 0]
        flat[i] = orig
        numeric.reshape(-1)[i] = (up - down) / (2 * eps)
    x0.zero_grad()
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str | None = None) -> Value:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Value(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=name)
