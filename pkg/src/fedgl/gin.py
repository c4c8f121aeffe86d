"""Graph Isomorphism Network graph classifier on top of the autodiff engine."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, TrainingError


@dataclass(frozen=True)
class GinConfig:
    in_dim: int
    num_classes: int
    hidden: int = 32
    num_layers: int = 3


class GinModel:
    """K GIN layers, h <- MLP((1 + eps) h + sum of neighbour h), with a sum-pool
    readout to logits after the input and after every layer; readouts are summed."""

    def __init__(self, config, params):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config, rng):
        p = {}
        width = config.in_dim
        p["read0.W"] = ad.glorot(rng, width, config.num_classes)
        p["read0.b"] = np.zeros((1, config.num_classes))
        for k in range(1, config.num_layers + 1):
            p[f"gin{k}.eps"] = np.zeros((1, 1))
            p[f"gin{k}.W1"] = ad.glorot(rng, width, config.hidden)
            p[f"gin{k}.b1"] = np.zeros((1, config.hidden))
            p[f"gin{k}.W2"] = ad.glorot(rng, config.hidden, config.hidden)
            p[f"gin{k}.b2"] = np.zeros((1, config.hidden))
            p[f"read{k}.W"] = ad.glorot(rng, config.hidden, config.num_classes)
            p[f"read{k}.b"] = np.zeros((1, config.num_classes))
            width = config.hidden
        return cls(config, p)

    def clone(self):
        return GinModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def to_vector(self):
        return ad.flatten(self.params)

    @classmethod
    def from_vector(cls, config, pv):
        return cls(config, ad.unflatten(pv))

    def checksum(self):
        return self.to_vector().checksum()


@dataclass
class GraphBatch:
    adj: object      # scipy CSR (constant) or Tensor (dense, differentiable)
    feats: object    # ndarray or Tensor
    pool: sp.csr_matrix
    labels: np.ndarray


def make_batch(graphs, labels=None):
    sizes = [g.n for g in graphs]
    adj = sp.block_diag([sp.csr_matrix(g.adj) for g in graphs], format="csr")
    feats = np.vstack([g.feats for g in graphs])
    rows = np.repeat(np.arange(len(graphs)), sizes)
    pool = sp.csr_matrix((np.ones(len(rows)), (rows, np.arange(len(rows)))), shape=(len(graphs), len(rows)))
    if labels is None:
        labels = np.array([g.label for g in graphs], dtype=np.int64)
    return GraphBatch(adj, feats, pool, np.asarray(labels, dtype=np.int64))


def const_matmul(m, b):
    """Constant (possibly sparse) matrix times a tensor."""
    b = ad.as_tensor(b)
    if m.shape[1] != b.shape[0]:
        raise DimensionError(f"const_matmul: shape mismatch {m.shape} @ {b.shape}")

    def backward(g):
        ad._acc(b, np.asarray(m.T @ g))

    return ad._node(np.asarray(m @ b.value), (b,), backward)


def _agg(adj, h):
    if isinstance(adj, Tensor):
        return ad.matmul(adj, h)
    return const_matmul(adj, h)


def aggregate(adj, h, eps):
    """(1 + eps) * h + A h."""
    one_plus = ad.add(Tensor([[1.0]]), eps)
    return ad.add(ad.scale(h, one_plus), _agg(adj, h))


def forward(model, batch, weights=None):
    """Logits (B x L) for a batch.  ``weights`` lets callers pass leaf tensors."""
    cfg = model.config
    w = weights if weights is not None else {k: Tensor(v) for k, v in model.params.items()}
    h = ad.as_tensor(batch.feats)
    if h.shape[1] != cfg.in_dim:
        raise DimensionError(f"graph feature width {h.shape[1]} != model input width {cfg.in_dim}")
    logits = ad.add(ad.matmul(const_matmul(batch.pool, h), w["read0.W"]), w["read0.b"])
    for k in range(1, cfg.num_layers + 1):
        z = aggregate(batch.adj, h, w[f"gin{k}.eps"])
        z = ad.relu(ad.add(ad.matmul(z, w[f"gin{k}.W1"]), w[f"gin{k}.b1"]))
        h = ad.relu(ad.add(ad.matmul(z, w[f"gin{k}.W2"]), w[f"gin{k}.b2"]))
        read = ad.add(ad.matmul(const_matmul(batch.pool, h), w[f"read{k}.W"]), w[f"read{k}.b"])
        logits = ad.add(logits, read)
    return logits


def gin_forward(model, graph):
    """Logits for one graph as a length-L vector."""
    return forward(model, make_batch([graph])).value[0]


def predict(model, graph):
    return int(np.argmax(gin_forward(model, graph)))


def predict_batch(model, graphs, chunk=256):
    out = []
    for i in range(0, len(graphs), chunk):
        logits = forward(model, make_batch(graphs[i:i + chunk])).value
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out).astype(np.int64) if out else np.zeros(0, dtype=np.int64)


def accuracy(model, graphs, labels=None):
    if not graphs:
        return float("nan")
    labels = np.array([g.label for g in graphs]) if labels is None else np.asarray(labels)
    return float(np.mean(predict_batch(model, graphs) == labels))


def loss_and_grads(model, graphs, labels=None):
    leafs = ad.leaves(model.params)
    batch = make_batch(graphs, labels)
    loss = ad.softmax_cross_entropy(forward(model, batch, leafs), batch.labels)
    loss.backward()
    return float(loss.value[0, 0]), ad.collect_grads(leafs)


def train_local(model, graphs, epochs, lr, rng, batch_size=32, labels=None):
    """Minibatch Adam on softmax cross-entropy; returns a new model.

    ``labels`` overrides the graphs' own labels (used for backdoored graphs).
    """
    if not graphs:
        raise TrainingError("train_local needs a nonempty graph list")
    out = model.clone()
    if epochs <= 0:
        return out
    labels = np.array([g.label for g in graphs]) if labels is None else np.asarray(labels)
    state = ad.AdamState()
    for _ in range(epochs):
        perm = rng.permutation(len(graphs))
        for start in range(0, len(graphs), batch_size):
            idx = perm[start:start + batch_size]
            _, grads = loss_and_grads(out, [graphs[i] for i in idx], labels[idx])
            ad.adam_step(out.params, grads, state, lr=lr)
    return out
