"""Hash-based graph division, majority-vote ensemble and its certificates."""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import BoundError
from .graph import Graph


def hash_group(s, T, algorithm="md5"):
    """(digest of ``s`` as a big-endian integer) mod T, plus 1."""
    digest = hashlib.new(algorithm, s.encode("utf-8")).digest()
    return int.from_bytes(digest, "big") % T + 1


@lru_cache(maxsize=4096)
def _node_groups(n, T, algorithm):
    return np.array([hash_group(str(v), T, algorithm) for v in range(n)], dtype=np.int64)


@lru_cache(maxsize=4096)
def _pair_groups(n, T, algorithm):
    """Symmetric n x n matrix of edge groups (diagonal 0)."""
    out = np.zeros((n, n), dtype=np.int64)
    for u in range(n):
        for v in range(u + 1, n):
            out[u, v] = out[v, u] = hash_group(str(u) + str(v), T, algorithm)
    out.flags.writeable = False
    return out


def node_group(v, T, algorithm="md5"):
    return hash_group(str(v), T, algorithm)


def edge_group(u, v, T, algorithm="md5"):
    u, v = min(u, v), max(u, v)
    return hash_group(str(u) + str(v), T, algorithm)


@dataclass(frozen=True)
class SubgraphPartition:
    T: int
    subgraphs: tuple
    node_groups: np.ndarray
    edge_groups: np.ndarray


def divide_graph(graph, T, algorithm="md5"):
    """Split ``graph`` into T subgraphs on the full node set.

    Subgraph t (1-based) keeps the edges whose pair hashes to t and the feature
    rows of nodes hashing to t; every other feature row is zero.
    """
    if T < 1:
        raise BoundError(f"T must be >= 1, got {T}")
    n = graph.n
    ng = _node_groups(n, T, algorithm)
    eg = _pair_groups(n, T, algorithm)
    subs = []
    for t in range(1, T + 1):
        adj = graph.adj * (eg == t)
        feats = graph.feats * (ng == t)[:, None]
        subs.append(Graph(adj, feats, graph.label))
    return SubgraphPartition(T, tuple(subs), ng, eg * (graph.adj > 0))


@dataclass(frozen=True)
class VoteTally:
    counts: tuple
    y: int
    z: int

    @property
    def T(self):
        return int(sum(self.counts))

    @property
    def T_y(self):
        return self.counts[self.y]

    @property
    def T_z(self):
        return self.counts[self.z] if self.z >= 0 else 0


def top_two(counts):
    """Top label and runner-up, smaller index winning ties; runner-up -1 when L == 1."""
    counts = list(counts)
    y = max(range(len(counts)), key=lambda l: (counts[l], -l))
    rest = [l for l in range(len(counts)) if l != y]
    z = max(rest, key=lambda l: (counts[l], -l)) if rest else -1
    return y, z


def tally_from_counts(counts):
    counts = tuple(int(c) for c in counts)
    y, z = top_two(counts)
    return VoteTally(counts, y, z)


def ensemble_predict(predict_fn, graph, T, num_classes, algorithm="md5"):
    """Vote of ``predict_fn`` (list of graphs -> labels) over the T subgraphs."""
    part = divide_graph(graph, T, algorithm)
    preds = np.asarray(predict_fn(list(part.subgraphs)), dtype=np.int64)
    counts = np.bincount(preds, minlength=num_classes)
    return tally_from_counts(counts)


def certified_perturbation_size(tally):
    """floor((T_y - T_z + 1(y < z) - 1) / 2); negative means uncertifiable."""
    ind = 1 if (tally.z < 0 or tally.y < tally.z) else 0
    return (tally.T_y - tally.T_z + ind - 1) // 2


@dataclass(frozen=True)
class Certificate:
    m_star: int
    backdoor_certified: bool

    @property
    def certifiable(self):
        return self.m_star >= 0


def certify_backdoor(tally, y_B):
    """T_{y_B} > T_{z_B} - 1(y_B < z_B), z_B the strongest other label."""
    counts = tally.counts
    others = [l for l in range(len(counts)) if l != y_B]
    if not others:
        return True
    z_B = max(others, key=lambda l: (counts[l], -l))
    return counts[y_B] > counts[z_B] - (1 if y_B < z_B else 0)


def certificate(tally, y_B=None):
    return Certificate(certified_perturbation_size(tally),
                       certify_backdoor(tally, y_B) if y_B is not None else False)


def _winner(counts):
    return top_two(counts)[0]


def _flip_by_construction(counts, y, m):
    for l in range(len(counts)):
        if l == y:
            continue
        k = min(m, counts[y])
        new_y, new_l = counts[y] - k, counts[l] + k
        if new_l > new_y or (new_l == new_y and l < y):
            return True
    return False


def _compositions(total, parts):
    for cuts in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cuts:
            out.append(c - prev - 1)
            prev = c
        out.append(total + parts - 1 - prev - 1)
        yield tuple(out)


def _flip_exhaustive(counts, y, m):
    T = sum(counts)
    for new in _compositions(T, len(counts)):
        moved = sum(max(0, c - n) for c, n in zip(counts, new))
        if moved <= m and _winner(new) != y:
            return True
    return False


def tightness_oracle(tally, m, exhaustive=None):
    """Whether some change of at most ``m`` subgraph votes flips the ensemble label.

    Uses the move-votes-to-a-rival construction; for T <= 8 it also enumerates
    every reachable vote vector and asserts both agree.
    """
    counts = list(tally.counts)
    if m > tally.T:
        raise BoundError(f"m={m} exceeds T={tally.T}")
    flip = _flip_by_construction(counts, tally.y, m)
    if exhaustive is None:
        exhaustive = tally.T <= 8
    if exhaustive:
        brute = _flip_exhaustive(counts, tally.y, m)
        if brute != flip:
            raise AssertionError(f"construction and enumeration disagree for {counts}, m={m}")
    return flip


# --- evaluation ------------------------------------------------------------------

@dataclass
class CertifiedReport:
    T: int
    m_grid: list
    certified_ma: list
    certified_ba: float
    backdoored_ma: float
    ensemble_ma: float
    max_m_star: int
    n_clean: int
    n_backdoor: int


def certified_ma_curve(predict_fn, clean_graphs, T, num_classes, algorithm="md5"):
    """(m grid, certified MA at each m, largest m* among correctly classified graphs).

    The grid runs from 0 to the largest m*; certified MA(m) counts graphs the
    ensemble gets right with m <= m*.  max m* is -1 when nothing is correct.
    """
    m_stars = []
    for g in clean_graphs:
        tally = ensemble_predict(predict_fn, g, T, num_classes, algorithm)
        m_stars.append(certified_perturbation_size(tally) if tally.y == g.label else None)
    max_m = max([m for m in m_stars if m is not None], default=-1)
    grid = list(range(0, max(max_m, 0) + 1))
    curve = [sum(1 for s in m_stars if s is not None and m <= s) / len(clean_graphs) for m in grid]
    return grid, curve, max_m


def certified_curves(predict_fn, clean_graphs, backdoor_pairs, T, y_B, num_classes, algorithm="md5"):
    """Certified MA(m) on clean graphs plus certified BA / defended MA on backdoored ones.

    ``backdoor_pairs`` is a list of (clean graph, backdoored graph) with the
    clean graph carrying the true label.  Defended MA is measured over pairs
    whose clean graph the ensemble classifies correctly.
    """
    if not clean_graphs or not backdoor_pairs:
        raise ValueError("certified_curves needs nonempty clean and backdoored sets")
    grid, curve, max_m = certified_ma_curve(predict_fn, clean_graphs, T, num_classes, algorithm)

    cert_bd, kept, correct = 0, 0, 0
    for clean, bd in backdoor_pairs:
        tally = ensemble_predict(predict_fn, bd, T, num_classes, algorithm)
        cert_bd += certify_backdoor(tally, y_B)
        if ensemble_predict(predict_fn, clean, T, num_classes, algorithm).y == clean.label:
            kept += 1
            correct += tally.y == clean.label
    return CertifiedReport(
        T=T, m_grid=grid, certified_ma=curve,
        certified_ba=cert_bd / len(backdoor_pairs),
        backdoored_ma=(correct / kept) if kept else float("nan"),
        ensemble_ma=curve[0] if curve else 0.0,
        max_m_star=max_m, n_clean=len(clean_graphs), n_backdoor=len(backdoor_pairs),
    )


def subgraph_augment(graphs, t_set, rng, algorithm="md5"):
    """Each graph plus one random subgraph from each T in ``t_set`` (same label)."""
    out = list(graphs)
    for g in graphs:
        for T in t_set:
            part = divide_graph(g, T, algorithm)
            out.append(part.subgraphs[int(rng.integers(T))])
    return out
