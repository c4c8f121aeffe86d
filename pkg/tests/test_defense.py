import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedgl import defense
from fedgl.defense import (
    VoteTally,
    certified_curves,
    certified_perturbation_size,
    certify_backdoor,
    divide_graph,
    edge_group,
    ensemble_predict,
    hash_group,
    subgraph_augment,
    tally_from_counts,
    tightness_oracle,
)
from fedgl.errors import BoundError
from fedgl.graph import Graph, perturbation_size

from oracles import md5_group, random_graph, vote_flip_exhaustive


# --- hashing ----------------------------------------------------------------

def test_hash_group_examples():
    assert all(hash_group(str(v), 1) == 1 for v in range(50))
    # independent reference: hex digest parsed as an integer
    assert hash_group("0", 30) == md5_group("0", 30)
    assert hash_group("12", 7) == hash_group("12", 7)


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=12), st.integers(1, 200))
def test_hash_group_matches_reference(s, T):
    assert hash_group(s, T) == md5_group(s, T)
    assert 1 <= hash_group(s, T) <= T


def test_edge_group_is_symmetric():
    for T in (2, 5, 30):
        assert edge_group(1, 2, T) == edge_group(2, 1, T)


# --- division ---------------------------------------------------------------

def test_single_group_returns_input():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 7)
    part = divide_graph(g, 1)
    assert len(part.subgraphs) == 1 and part.subgraphs[0].same_as(g)


def test_six_node_fixture_edge_by_edge():
    rng = np.random.default_rng(1)
    g = random_graph(rng, 6, p=0.6)
    part = divide_graph(g, 3)
    for u, v in itertools.combinations(range(6), 2):
        holders = [t for t, s in enumerate(part.subgraphs, start=1) if s.adj[u, v]]
        if g.adj[u, v]:
            assert holders == [md5_group(str(u) + str(v), 3)]
        else:
            assert holders == []
    for v in range(6):
        t = md5_group(str(v), 3)
        for s_idx, s in enumerate(part.subgraphs, start=1):
            expected = g.feats[v] if s_idx == t else np.zeros(g.d)
            assert np.array_equal(s.feats[v], expected)


def test_divide_rejects_bad_T():
    with pytest.raises(BoundError):
        divide_graph(Graph(np.zeros((1, 1)), np.zeros((1, 1)), 0), 0)


def check_partition(g, T):
    part = divide_graph(g, T)
    total = np.zeros_like(g.adj)
    for s in part.subgraphs:
        assert np.all(total * s.adj == 0)  # disjoint
        total += s.adj
    assert np.array_equal(total, g.adj)
    holders = np.zeros(g.n, dtype=int)
    for s in part.subgraphs:
        same = np.all(s.feats == g.feats, axis=1)
        zero = np.all(s.feats == 0, axis=1)
        assert np.all(same | zero)
        holders += same & ~zero
    nonzero = np.any(g.feats != 0, axis=1)
    assert np.all(holders[nonzero] == 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.sampled_from([1, 2, 7, 30]), st.integers(0, 10_000))
def test_partition_property(n, T, seed):
    check_partition(random_graph(np.random.default_rng(seed), n, p=0.4), T)


def random_edit(g, m, rng):
    """Apply exactly m distinct edits (feature rows or node pairs)."""
    slots = [("x", v) for v in range(g.n)] + [("e", p) for p in itertools.combinations(range(g.n), 2)]
    pick = rng.choice(len(slots), size=min(m, len(slots)), replace=False)
    a, x = g.adj.copy(), g.feats.copy()
    for i in pick:
        kind, what = slots[i]
        if kind == "x":
            x[what] = x[what] + 1.0 + rng.random(g.d)
        else:
            u, v = what
            a[u, v] = a[v, u] = 1 - a[u, v]
    return Graph(a, x, g.label)


def changed_subgraphs(g, h, T):
    pg, ph = divide_graph(g, T), divide_graph(h, T)
    return sum(not a.same_as(b) for a, b in zip(pg.subgraphs, ph.subgraphs))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 15), st.integers(0, 10), st.sampled_from([3, 10, 30]), st.integers(0, 10_000))
def test_locality(n, m, T, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, p=0.3)
    h = random_edit(g, m, rng)
    assert changed_subgraphs(g, h, T) <= perturbation_size(g, h)


# --- tallies and certificates ---------------------------------------------------

def test_ensemble_constant_classifier():
    g = random_graph(np.random.default_rng(0), 8)
    t = ensemble_predict(lambda gs: [0] * len(gs), g, 30, 3)
    assert t.counts == (30, 0, 0) and t.y == 0 and t.T_y == 30 and t.T_z == 0


def test_tie_goes_to_smaller_index():
    t = tally_from_counts((15, 15))
    assert (t.y, t.z) == (0, 1)


def test_ensemble_counts_match_recount():
    rng = np.random.default_rng(3)
    g = random_graph(rng, 9, p=0.5)

    def clf(graphs):
        return [int(s.adj.sum() > 2) + int(s.feats.sum() > 0) for s in graphs]

    t = ensemble_predict(clf, g, 10, 3)
    brute = [0, 0, 0]
    for s in divide_graph(g, 10).subgraphs:
        brute[clf([s])[0]] += 1
    assert list(t.counts) == brute


def test_m_star_examples():
    assert certified_perturbation_size(VoteTally((20, 8), 0, 1)) == 6
    assert certified_perturbation_size(VoteTally((5, 5), 0, 1)) == 0
    assert certified_perturbation_size(VoteTally((9, 10), 1, 0)) == 0
    assert certified_perturbation_size(tally_from_counts((2, 1))) == 0


def test_backdoor_certificate_examples():
    assert certify_backdoor(tally_from_counts((16, 14)), 0)
    assert not certify_backdoor(tally_from_counts((10, 20)), 0)


@settings(max_examples=500, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=2, max_size=4).filter(lambda c: sum(c) > 0), st.integers(0, 3))
def test_backdoor_certificate_equals_ensemble_label(counts, y_B):
    y_B = y_B % len(counts)
    assert certify_backdoor(tally_from_counts(counts), y_B) == (tally_from_counts(counts).y == y_B)


def test_tightness_examples():
    t = tally_from_counts((2, 1))
    assert tightness_oracle(t, 0) is False
    assert tightness_oracle(t, 1) is True
    with pytest.raises(BoundError):
        tightness_oracle(t, 4)


def test_certificate_sound_and_tight_exhaustively():
    # every vote vector with T <= 8 and L <= 3
    for L in (2, 3):
        for T in range(1, 9):
            for counts in itertools.product(range(T + 1), repeat=L):
                if sum(counts) != T:
                    continue
                t = tally_from_counts(counts)
                m = certified_perturbation_size(t)
                if m >= 0:
                    assert not vote_flip_exhaustive(counts, m)
                    assert not tightness_oracle(t, m)
                if m + 1 <= T:
                    assert vote_flip_exhaustive(counts, m + 1)
                    assert tightness_oracle(t, m + 1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=2, max_size=5).filter(lambda c: sum(c) > 8))
def test_certificate_by_construction_for_large_T(counts):
    t = tally_from_counts(counts)
    m = certified_perturbation_size(t)
    if m >= 0:
        assert not tightness_oracle(t, m)
    if m + 1 <= t.T:
        assert tightness_oracle(t, m + 1)


# --- curves -------------------------------------------------------------------------

def test_certified_curve_properties():
    rng = np.random.default_rng(5)
    graphs = [random_graph(rng, int(n), p=0.4, label=int(n) % 2) for n in rng.integers(4, 12, size=30)]

    def clf(gs):
        return [int(s.adj.sum() / 2 + (s.feats.sum() > 0) >= 2) for s in gs]

    pairs = [(g, g) for g in graphs[:5]]
    rep = certified_curves(clf, graphs, pairs, 10, 1, 2)
    assert all(b <= a for a, b in zip(rep.certified_ma, rep.certified_ma[1:]))
    plain = np.mean([ensemble_predict(clf, g, 10, 2).y == g.label for g in graphs])
    assert rep.certified_ma[0] == pytest.approx(plain)
    assert 0 <= rep.certified_ba <= 1


def test_certified_curves_needs_inputs():
    with pytest.raises(ValueError):
        certified_curves(lambda gs: [0] * len(gs), [], [], 3, 0, 2)


def test_subgraph_augment_counts():
    rng = np.random.default_rng(0)
    graphs = [random_graph(rng, 6, label=1) for _ in range(4)]
    out = subgraph_augment(graphs, [10, 20, 30], np.random.default_rng(1))
    assert len(out) == 4 * (1 + 3)
    assert all(g.label == 1 for g in out)
    assert subgraph_augment(graphs, [], np.random.default_rng(1)) == graphs


def test_uncertifiable_tally_is_negative():
    # a caller-supplied tally whose y is not the argmax
    assert defense.certified_perturbation_size(VoteTally((1, 5), 0, 1)) < 0
