"""Trigger representation, injection and the random (ER) baselines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SizeError
from ..graph import Graph


@dataclass(frozen=True, eq=False)
class TriggerShape:
    edge_matrix: np.ndarray   # n_tri x n_tri, symmetric binary, zero diagonal
    feat_matrix: np.ndarray   # n_tri x d

    @property
    def n_tri(self):
        return self.edge_matrix.shape[0]

    @property
    def e_tri(self):
        return int(np.triu(self.edge_matrix, 1).sum())


@dataclass(frozen=True, eq=False)
class Trigger:
    nodes: tuple
    edge_matrix: np.ndarray
    feat_matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(int(v) for v in self.nodes))
        e = np.asarray(self.edge_matrix, dtype=np.float64)
        f = np.asarray(self.feat_matrix, dtype=np.float64)
        k = len(self.nodes)
        if len(set(self.nodes)) != k:
            raise IndexError(f"trigger nodes are not distinct: {self.nodes}")
        if e.shape != (k, k):
            raise IndexError(f"edge matrix {e.shape} does not match {k} trigger nodes")
        if f.ndim != 2 or f.shape[0] != k:
            raise IndexError(f"feature matrix {f.shape} does not match {k} trigger nodes")
        if not np.array_equal(e, e.T) or np.any(np.diag(e) != 0) or not np.all((e == 0) | (e == 1)):
            raise ValueError("trigger edge matrix must be symmetric, binary, zero-diagonal")
        object.__setattr__(self, "edge_matrix", e)
        object.__setattr__(self, "feat_matrix", f)

    @property
    def n_tri(self):
        return len(self.nodes)

    @property
    def e_tri(self):
        return int(np.triu(self.edge_matrix, 1).sum())

    @classmethod
    def place(cls, shape, nodes):
        return cls(tuple(nodes), shape.edge_matrix, shape.feat_matrix)


def check_trigger(graph, trigger):
    n = graph.n
    for v in trigger.nodes:
        if not 0 <= v < n:
            raise IndexError(f"trigger node {v} outside graph of {n} nodes")
    if trigger.feat_matrix.shape[1] != graph.d:
        raise IndexError(f"trigger feature width {trigger.feat_matrix.shape[1]} != graph width {graph.d}")


def inject_trigger(graph, trigger, label=None):
    """Copy of ``graph`` with the trigger's induced subgraph and feature rows replaced."""
    check_trigger(graph, trigger)
    idx = np.array(trigger.nodes, dtype=np.int64)
    adj = graph.adj.copy()
    feats = graph.feats.copy()
    if len(idx):
        adj[np.ix_(idx, idx)] = trigger.edge_matrix
        feats[idx] = trigger.feat_matrix
    return Graph(adj, feats, graph.label if label is None else label)


def complete_edges(n_tri):
    return np.ones((n_tri, n_tri)) - np.eye(n_tri)


def rand_er_trigger(n_tri, e_tri, d, rng, feature_pool=None):
    """ER trigger shape with exactly ``e_tri`` edges.

    Feature rows are sampled from ``feature_pool`` (rows of clean node
    features) when given, otherwise all ones.
    """
    max_e = n_tri * (n_tri - 1) // 2
    if n_tri < 1 or not 0 <= e_tri <= max_e:
        raise SizeError(f"e_tri={e_tri} outside [0, {max_e}] for n_tri={n_tri}")
    iu = np.triu_indices(n_tri, 1)
    chosen = rng.choice(max_e, size=e_tri, replace=False)
    edges = np.zeros((n_tri, n_tri))
    edges[iu[0][chosen], iu[1][chosen]] = 1.0
    edges = edges + edges.T
    if feature_pool is not None and len(feature_pool):
        pool = np.asarray(feature_pool, dtype=np.float64)
        feats = pool[rng.integers(len(pool), size=n_tri)]
    else:
        feats = np.ones((n_tri, d))
    return TriggerShape(edges, feats)


def random_location(graph, n_tri, rng):
    if n_tri > graph.n:
        raise SizeError(f"n_tri={n_tri} exceeds graph size {graph.n}")
    return tuple(rng.choice(graph.n, size=n_tri, replace=False).tolist())


def definable_trigger_location(scores, n_tri):
    """Indices of the n_tri largest scores, descending, smaller index on ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if n_tri > len(scores):
        raise SizeError(f"n_tri={n_tri} exceeds {len(scores)} nodes")
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [int(i) for i in order[:n_tri]]
