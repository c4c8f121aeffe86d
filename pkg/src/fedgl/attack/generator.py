"""Adaptive trigger generator: node scoring, location and shape learning.

Adjacency-consuming layers are sized to the dataset's ``n_max``; each
graph's adjacency rows are zero-padded to that width.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .. import autodiff as ad
from .. import gin
from ..autodiff import Tensor
from ..errors import AttackError, CapacityError
from .gap import customized_trigger_location
from .trigger import Trigger, check_trigger, complete_edges, definable_trigger_location


@dataclass(frozen=True)
class GeneratorConfig:
    n_max: int
    d: int
    num_clients: int
    dropout: float = 0.05
    emb_init_noise: float = 0.01


@dataclass(frozen=True)
class ImportanceScores:
    s: np.ndarray
    e: np.ndarray
    n: np.ndarray


_NETS = {"ev": "n", "nv": "d", "ea": "n", "na": "d"}


class TriggerGenerator:
    """All weights of one malicious client's generator plus its Adam state."""

    def __init__(self, config, params, client_idx):
        self.config = config
        self.params = params
        self.client_idx = int(client_idx)
        self.adam = ad.AdamState()

    @classmethod
    def init(cls, config, client_idx, rng):
        p = {}
        for net, kind in _NETS.items():
            w = config.n_max if kind == "n" else config.d
            for layer in (1, 2, 3):
                p[f"{net}.W{layer}"] = ad.glorot(rng, w, w)
                p[f"{net}.b{layer}"] = np.zeros((1, w))
        C = config.num_clients
        p["edge_emb"] = 1.0 + config.emb_init_noise * rng.standard_normal((C, config.n_max * config.n_max))
        p["node_emb"] = 1.0 + config.emb_init_noise * rng.standard_normal((C, config.n_max * config.d))
        return cls(config, p, client_idx)

    def clone(self):
        out = TriggerGenerator(self.config, {k: v.copy() for k, v in self.params.items()}, self.client_idx)
        out.adam = ad.AdamState(self.adam.t, {k: v.copy() for k, v in self.adam.m.items()},
                                {k: v.copy() for k, v in self.adam.v.items()})
        return out

    def to_vector(self):
        return ad.flatten(self.params)


# --- network pieces ----------------------------------------------------------

def _mlp3(x, w, net, final, ctx):
    h = x
    for layer in (1, 2):
        h = ad.relu(ad.add(ad.matmul(h, w[f"{net}.W{layer}"]), w[f"{net}.b{layer}"]))
        h = ad.dropout(h, ctx.p, ctx.rng, ctx.train)
    h = ad.add(ad.matmul(h, w[f"{net}.W3"]), w[f"{net}.b3"])
    return ad.sigmoid(h) if final == "sigmoid" else ad.relu(h)


@dataclass
class _Ctx:
    train: bool = False
    rng: object = None
    p: float = 0.0


def _padded_rows(adj, n_max):
    n = adj.shape[0]
    if n > n_max:
        raise CapacityError(f"graph with {n} nodes exceeds generator capacity n_max={n_max}")
    out = np.zeros((n, n_max))
    out[:, :n] = adj
    return out


def _weights(gen, track):
    if track:
        return ad.leaves(gen.params)
    return {k: Tensor(v) for k, v in gen.params.items()}


def _score_tensor(gen, graph, w, ctx):
    """s = EdgeView(A) * NodeView(X), an (n, 1) tensor."""
    e = ad.row_avg_pool(_mlp3(Tensor(_padded_rows(graph.adj, gen.config.n_max)), w, "ev", "sigmoid", ctx))
    nv = ad.row_avg_pool(_mlp3(Tensor(graph.feats), w, "nv", "sigmoid", ctx))
    return ad.mul(e, nv), e, nv


def node_importance(gen, graph, train=False, rng=None):
    ctx = _Ctx(train, rng, gen.config.dropout)
    s, e, nv = _score_tensor(gen, graph, _weights(gen, False), ctx)
    return ImportanceScores(s.value[:, 0].copy(), e.value[:, 0].copy(), nv.value[:, 0].copy())


def select_location(scores, scheme, n_tri, msize, rng=None, gap_B=10, gap_K=10):
    if scheme == "definable":
        return definable_trigger_location(scores, min(n_tri, len(scores)))
    if scheme == "customized":
        return customized_trigger_location(scores, msize, B=gap_B, K=gap_K, rng=rng)
    raise AttackError(f"unknown location scheme {scheme!r}")


def _selector(rows, loc):
    return sp.csr_matrix((np.ones(len(loc)), (np.asarray(loc), np.arange(len(loc)))), shape=(rows, len(loc)))


@dataclass
class ShapeTensors:
    edges: Tensor        # binarised, symmetric (n_tri, n_tri)
    edges_cont: Tensor   # continuous symmetrised attention before thresholding
    feats: Tensor        # (n_tri, d)


def _shape_tensors(gen, graph, loc, w, ctx, gate=None):
    cfg = gen.config
    n, k = graph.n, len(loc)
    idx = np.asarray(loc)
    adj_b = graph.adj.copy()
    adj_b[np.ix_(idx, idx)] = 0.0
    sel_n = _selector(n, loc)
    sel_m = _selector(cfg.n_max, loc)

    onehot = np.zeros((1, cfg.num_clients))
    onehot[0, gen.client_idx] = 1.0
    att = _mlp3(Tensor(_padded_rows(adj_b, cfg.n_max)), w, "ea", "sigmoid", ctx)
    att_sub = gin.const_matmul(sel_n.T, ad.transpose(gin.const_matmul(sel_m.T, ad.transpose(att))))
    emb_e = ad.reshape(ad.matmul(Tensor(onehot), w["edge_emb"]), cfg.n_max, cfg.n_max)
    emb_sub = gin.const_matmul(sel_m.T, ad.transpose(gin.const_matmul(sel_m.T, ad.transpose(emb_e))))
    e_cont = ad.mul(att_sub, emb_sub)
    upper = ad.mask_apply(e_cont, np.triu(np.ones((k, k)), 1))
    e_sym = ad.add(upper, ad.transpose(upper))
    e_bin = ad.binarize_ste(e_sym, 0.5)

    natt = _mlp3(Tensor(graph.feats), w, "na", "relu", ctx)
    n_sub = gin.const_matmul(sel_n.T, natt)
    emb_n = ad.reshape(ad.matmul(Tensor(onehot), w["node_emb"]), cfg.n_max, cfg.d)
    feats = ad.mul(n_sub, gin.const_matmul(sel_m.T, emb_n))

    if gate is not None:
        # value-one multiplier whose gradient reaches the score networks
        e_bin = ad.mul(e_bin, ad.matmul(gate, ad.transpose(gate)))
        feats = ad.mul(feats, ad.matmul(gate, Tensor(np.ones((1, cfg.d)))))
    return ShapeTensors(e_bin, e_sym, feats)


def trigger_shape(gen, graph, location, train=False, rng=None):
    """Trigger (binary edges, node features) for ``graph`` at ``location``."""
    if not location:
        raise IndexError("trigger location is empty")
    loc = [int(v) for v in location]
    for v in loc:
        if not 0 <= v < graph.n:
            raise IndexError(f"trigger node {v} outside graph of {graph.n} nodes")
    ctx = _Ctx(train, rng, gen.config.dropout)
    t = _shape_tensors(gen, graph, loc, _weights(gen, False), ctx)
    return Trigger(tuple(loc), t.edges.value.copy(), t.feats.value.copy())


def generate_trigger(gen, graph, scheme="definable", n_tri=4, msize=5, rng=None, gap_B=10, gap_K=10):
    scores = node_importance(gen, graph)
    loc = select_location(scores.s, scheme, n_tri, msize, rng, gap_B, gap_K)
    return trigger_shape(gen, graph, loc)


def inject_tensors(graph, loc, edges, feats):
    """Differentiable injection: returns (adjacency, features) tensors."""
    n = graph.n
    idx = np.asarray(loc)
    keep = np.ones((n, n))
    keep[np.ix_(idx, idx)] = 0.0
    row_keep = np.ones((n, graph.d))
    row_keep[idx] = 0.0
    sel = _selector(n, loc)
    placed = gin.const_matmul(sel, ad.transpose(gin.const_matmul(sel, ad.transpose(edges))))
    adj = ad.add(Tensor(graph.adj * keep), placed)
    x = ad.add(Tensor(graph.feats * row_keep), gin.const_matmul(sel, feats))
    return adj, x


def backdoor_loss(gen, model, graphs, locations, y_B, w, ctx, use_gate=True):
    """Mean cross-entropy toward y_B of the injected graphs under a frozen classifier."""
    total = None
    for g, loc in zip(graphs, locations):
        gate = None
        if use_gate:
            s, _, _ = _score_tensor(gen, g, w, ctx)
            s_sel = gin.const_matmul(_selector(g.n, loc).T, s)
            # value exactly one; the gradient passes straight to the scores
            gate = ad.add(Tensor(np.ones((len(loc), 1))), ad.sub(s_sel, ad.stop_gradient(s_sel)))
        shape = _shape_tensors(gen, g, loc, w, ctx, gate)
        adj, x = inject_tensors(g, loc, shape.edges, shape.feats)
        batch = gin.GraphBatch(adj, x, sp.csr_matrix(np.ones((1, g.n))), np.array([y_B]))
        loss = ad.softmax_cross_entropy(gin.forward(model, batch), batch.labels)
        total = loss if total is None else ad.add(total, loss)
    return ad.scale(total, Tensor([[1.0 / len(graphs)]]))


def train_generator_step(gen, model, graphs, locations, y_B, lr, rng=None, use_gate=True):
    """One Adam step on the generator toward y_B with ``model`` frozen; returns the loss."""
    if not graphs:
        return float("nan")
    w = _weights(gen, True)
    ctx = _Ctx(rng is not None, rng, gen.config.dropout)
    loss = backdoor_loss(gen, model, graphs, locations, y_B, w, ctx, use_gate)
    value = float(loss.value[0, 0])
    if not np.isfinite(value):
        raise AttackError(f"non-finite generator loss for client {gen.client_idx}")
    loss.backward()
    ad.adam_step(gen.params, ad.collect_grads(w), gen.adam, lr=lr)
    return value


def global_trigger(gens, graph, n_tri):
    """Test-time trigger combining several generators: complete edges on the top
    n_tri nodes of the mean score, features averaged over the generators."""
    if n_tri > graph.n:
        raise CapacityError(f"n_tri={n_tri} exceeds graph size {graph.n}")
    scores = np.mean([node_importance(g, graph).s for g in gens], axis=0)
    loc = definable_trigger_location(scores, n_tri)
    feats = np.mean([trigger_shape(g, graph, loc).feat_matrix for g in gens], axis=0)
    trig = Trigger(tuple(loc), complete_edges(n_tri), feats)
    check_trigger(graph, trig)
    return trig
