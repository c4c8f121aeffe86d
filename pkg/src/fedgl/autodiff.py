"""Small reverse-mode autodiff over dense float64 matrices.

Every value is a 2-D numpy array.  Ops build a graph of ``Tensor`` nodes;
``Tensor.backward`` walks it in reverse topological order and accumulates
``grad`` on every node that (transitively) depends on a leaf created with
``requires_grad=True``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AggregationError, DimensionError, TrainingError


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None, _parents=(), _backward=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        elif value.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {value.shape}")
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, seed=None):
        """Populate ``grad`` on every upstream node that requires it."""
        if seed is None:
            if self.shape != (1, 1):
                raise DimensionError(f"backward() without seed needs a (1, 1) output, got {self.shape}")
            seed = np.ones((1, 1))
        order = _toposort(self)
        for node in order:
            node.grad = None
        self.grad = np.array(seed, dtype=np.float64).reshape(self.shape)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar, kept to the shape-strict ops below
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    @property
    def T(self):
        return transpose(self)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def _acc(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=req, _parents=parents if req else (), _backward=backward if req else None)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --- ops ---------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            _acc(a, g @ b.value.T)
        if b.requires_grad:
            _acc(b, a.value.T @ g)

    return _node(a.value @ b.value, (a, b), backward)


def add(a, b):
    """Elementwise sum.  ``b`` may also be a (1, cols) row added to every row (bias)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        def backward(g):
            _acc(a, g)
            _acc(b, g)
        return _node(a.value + b.value, (a, b), backward)
    if b.shape == (1, a.shape[1]):
        def backward(g):
            _acc(a, g)
            _acc(b, g.sum(axis=0, keepdims=True))
        return _node(a.value + b.value, (a, b), backward)
    raise DimensionError(f"add: shape mismatch {a.shape} vs {b.shape}")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)

    def backward(g):
        _acc(a, g)
        _acc(b, -g)

    return _node(a.value - b.value, (a, b), backward)


def mul(a, b):
    """Elementwise product of equal-shape operands."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)

    def backward(g):
        _acc(a, g * b.value)
        _acc(b, g * a.value)

    return _node(a.value * b.value, (a, b), backward)


def scale(a, s):
    """Multiply every entry of ``a`` by the (1, 1) tensor ``s``."""
    a, s = as_tensor(a), as_tensor(s)
    if s.shape != (1, 1):
        raise DimensionError(f"scale: factor must be (1, 1), got {s.shape} for operand {a.shape}")
    k = s.value[0, 0]

    def backward(g):
        _acc(a, g * k)
        _acc(s, np.array([[np.sum(g * a.value)]]))

    return _node(a.value * k, (a, s), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("div", a, b)

    def backward(g):
        _acc(a, g / b.value)
        _acc(b, -g * a.value / b.value ** 2)

    return _node(a.value / b.value, (a, b), backward)


def relu(a):
    a = as_tensor(a)
    on = a.value > 0

    def backward(g):
        _acc(a, g * on)

    return _node(a.value * on, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))

    def backward(g):
        _acc(a, g * out * (1.0 - out))

    return _node(out, (a,), backward)


def dropout(a, p, rng=None, train=False, mask=None):
    """Inverted dropout.  Identity in eval mode; ``mask`` pins the keep pattern."""
    a = as_tensor(a)
    if not train or p <= 0.0:
        return a
    if mask is None:
        if rng is None:
            raise ValueError("dropout in train mode needs an explicit rng")
        mask = (rng.random(a.shape) >= p) / (1.0 - p)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise DimensionError(f"dropout: mask shape {mask.shape} vs operand {a.shape}")

    def backward(g):
        _acc(a, g * mask)

    return _node(a.value * mask, (a,), backward)


def row_avg_pool(a):
    """Mean across each row: (r, c) -> (r, 1)."""
    a = as_tensor(a)
    c = a.shape[1]

    def backward(g):
        _acc(a, np.repeat(g / c, c, axis=1))

    return _node(a.value.mean(axis=1, keepdims=True), (a,), backward)


def col_avg_pool(a):
    """Mean down each column: (r, c) -> (1, c)."""
    a = as_tensor(a)
    r = a.shape[0]

    def backward(g):
        _acc(a, np.repeat(g / r, r, axis=0))

    return _node(a.value.mean(axis=0, keepdims=True), (a,), backward)


def mask_apply(a, mask):
    """Multiply by a constant (non-learnable) mask of the same shape."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise DimensionError(f"mask_apply: mask shape {mask.shape} vs operand {a.shape}")

    def backward(g):
        _acc(a, g * mask)

    return _node(a.value * mask, (a,), backward)


def transpose(a):
    a = as_tensor(a)

    def backward(g):
        _acc(a, g.T)

    return _node(a.value.T, (a,), backward)


def reshape(a, rows, cols):
    a = as_tensor(a)
    if a.value.size != rows * cols:
        raise DimensionError(f"reshape: cannot view {a.shape} as {(rows, cols)}")
    shape = a.shape

    def backward(g):
        _acc(a, g.reshape(shape))

    return _node(a.value.reshape(rows, cols), (a,), backward)


def stop_gradient(a):
    a = as_tensor(a)
    return Tensor(a.value)


def binarize_ste(a, threshold=0.5):
    """1(a >= threshold) forward; identity gradient (straight-through)."""
    a = as_tensor(a)

    def backward(g):
        _acc(a, g)

    return _node((a.value >= threshold).astype(np.float64), (a,), backward)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels; returns (1, 1)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, num = logits.shape
    if labels.shape[0] != b:
        raise DimensionError(f"softmax_cross_entropy: logits {logits.shape} vs labels ({labels.shape[0]},)")
    if labels.size and (labels.min() < 0 or labels.max() >= num):
        raise DimensionError(f"softmax_cross_entropy: label out of range for logits {logits.shape}")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(b), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(b), labels] -= 1.0
        _acc(logits, g[0, 0] * p / b)

    return _node(np.array([[loss]]), (logits,), backward)


# --- optimisation ------------------------------------------------------

@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update of ``params`` (name -> ndarray) in place.

    Names missing from ``grads`` are treated as zero-gradient.  Returns
    ``(params, state)``.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        if lr != 0.0:
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# --- flat parameter vectors ---------------------------------------------

@dataclass(frozen=True)
class ParamVector:
    layout: tuple  # ((name, shape), ...)
    values: np.ndarray

    def checksum(self):
        h = hashlib.sha256(json.dumps(self.layout).encode())
        h.update(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        return h.hexdigest()


def flatten(params):
    """name -> ndarray mapping (insertion order) to a ParamVector."""
    layout = tuple((name, tuple(int(s) for s in arr.shape)) for name, arr in params.items())
    if params:
        values = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in params.values()])
    else:
        values = np.zeros(0)
    return ParamVector(layout, values)


def unflatten(pv):
    out, pos = {}, 0
    for name, shape in pv.layout:
        size = int(np.prod(shape))
        out[name] = pv.values[pos:pos + size].reshape(shape).copy()
        pos += size
    return out


def average_params(vectors):
    if not vectors:
        raise AggregationError("cannot average an empty list of parameter vectors")
    layout = vectors[0].layout
    for i, v in enumerate(vectors[1:], start=1):
        if v.layout != layout:
            raise AggregationError(f"layout mismatch between vector 0 and vector {i}")
    total = np.zeros_like(vectors[0].values)
    for v in vectors:
        total += v.values
    return ParamVector(layout, total / len(vectors))


def save_params(path, pv):
    path = Path(path)
    layout = json.dumps([[n, list(s)] for n, s in pv.layout])
    with open(path, "wb") as fh:
        np.savez(fh, values=pv.values, layout=np.array(layout))


def load_params(path):
    with np.load(Path(path)) as data:
        layout = tuple((n, tuple(s)) for n, s in json.loads(str(data["layout"])))
        return ParamVector(layout, data["values"].astype(np.float64))


def leaves(params):
    """Wrap each array as a gradient-tracking leaf tensor (sharing memory)."""
    return {name: Tensor(arr, requires_grad=True, name=name) for name, arr in params.items()}


def collect_grads(leaf_map):
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.value)) for name, t in leaf_map.items()}


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
