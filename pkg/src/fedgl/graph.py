"""Graph data model, dataset ingestion, synthetic datasets and client splits."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, SplitError, StructuralError

log = logging.getLogger(__name__)

DEFAULT_DEGREE_CAP = 50


@dataclass(frozen=True, eq=False)
class Graph:
    adj: np.ndarray
    feats: np.ndarray
    label: int

    def __post_init__(self):
        adj = np.array(self.adj, dtype=np.float64)
        feats = np.array(self.feats, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise StructuralError(f"adjacency must be square, got {adj.shape}")
        if feats.ndim != 2 or feats.shape[0] != adj.shape[0]:
            raise StructuralError(f"features need {adj.shape[0]} rows, got {feats.shape}")
        if not np.array_equal(adj, adj.T):
            raise StructuralError("adjacency is not symmetric")
        if np.any(np.diag(adj) != 0):
            raise StructuralError("adjacency has self-loops")
        if not np.all((adj == 0) | (adj == 1)):
            raise StructuralError("adjacency must be binary")
        adj.flags.writeable = False
        feats.flags.writeable = False
        object.__setattr__(self, "adj", adj)
        object.__setattr__(self, "feats", feats)
        object.__setattr__(self, "label", int(self.label))

    @property
    def n(self):
        return self.adj.shape[0]

    @property
    def d(self):
        return self.feats.shape[1]

    @property
    def num_edges(self):
        return int(np.triu(self.adj, 1).sum())

    def edges(self):
        """Undirected edges as (u, v) with u < v, row-major order."""
        u, v = np.nonzero(np.triu(self.adj, 1))
        return list(zip(u.tolist(), v.tolist()))

    def replace(self, adj=None, feats=None, label=None):
        return Graph(self.adj if adj is None else adj,
                     self.feats if feats is None else feats,
                     self.label if label is None else label)

    def same_as(self, other):
        return (self.label == other.label and np.array_equal(self.adj, other.adj)
                and np.array_equal(self.feats, other.feats))


@dataclass(frozen=True)
class Dataset:
    graphs: tuple
    num_classes: int
    d: int
    n_max: int
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        for i, g in enumerate(self.graphs):
            if not 0 <= g.label < self.num_classes:
                raise StructuralError(f"graph {i}: label {g.label} outside 0..{self.num_classes - 1}")
            if g.d != self.d:
                raise StructuralError(f"graph {i}: feature width {g.d} != {self.d}")
            if g.n > self.n_max:
                raise StructuralError(f"graph {i}: {g.n} nodes exceeds n_max={self.n_max}")

    @classmethod
    def from_graphs(cls, graphs, num_classes=None, name="dataset"):
        graphs = list(graphs)
        if not graphs:
            raise StructuralError("a dataset needs at least one graph")
        if num_classes is None:
            num_classes = max(g.label for g in graphs) + 1
        return cls(tuple(graphs), num_classes, graphs[0].d, max(g.n for g in graphs), name)

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def labels(self):
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def subset(self, indices):
        return [self.graphs[i] for i in indices]


@dataclass(frozen=True)
class ClientSplit:
    clients: tuple  # tuple of tuples of training-graph indices
    scheme: str

    def __len__(self):
        return len(self.clients)


def degree_one_hot(adj, cap=DEFAULT_DEGREE_CAP):
    """One-hot node degree, degrees >= cap share the last column (width cap + 1)."""
    deg = np.minimum(np.asarray(adj).sum(axis=1).astype(int), cap)
    out = np.zeros((len(deg), cap + 1))
    out[np.arange(len(deg)), deg] = 1.0
    return out


# --- TUDataset flat files ---------------------------------------------------

_SPLIT = re.compile(r"[,\s]+")


def _read_rows(path, width=None, kind=float):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p for p in _SPLIT.split(line) if p]
            try:
                vals = [kind(p) for p in parts]
            except ValueError:
                raise ParseError(path, lineno, f"cannot parse {line!r}") from None
            if width is not None and len(vals) != width:
                raise ParseError(path, lineno, f"expected {width} values, got {len(vals)}")
            rows.append(vals)
    return rows


def _find(directory, suffix):
    hits = sorted(directory.glob(f"*_{suffix}.txt"))
    return hits[0] if hits else None


def load_tu_dataset(directory, degree_cap=DEFAULT_DEGREE_CAP):
    """Read a TUDataset directory (``DS_A.txt``, ``DS_graph_indicator.txt``, ...).

    Node labels become one-hot features, node attributes are used as-is, and
    featureless datasets fall back to capped degree one-hot features.  Graph
    labels are remapped to 0..L-1 in sorted order of the original values.
    """
    directory = Path(directory)
    a_path = _find(directory, "A")
    ind_path = _find(directory, "graph_indicator")
    lab_path = _find(directory, "graph_labels")
    if a_path is None or ind_path is None or lab_path is None:
        raise StructuralError(f"{directory}: missing *_A.txt, *_graph_indicator.txt or *_graph_labels.txt")
    name = a_path.name[: -len("_A.txt")]

    indicator = [r[0] for r in _read_rows(ind_path, 1, int)]
    raw_labels = [r[0] for r in _read_rows(lab_path, 1, int)]
    edges = _read_rows(a_path, 2, int)

    graph_ids = sorted(set(indicator))
    if graph_ids != list(range(1, len(raw_labels) + 1)):
        raise StructuralError(f"{ind_path}: graph ids must be 1..{len(raw_labels)}")
    node_graph = np.array(indicator) - 1
    counts = np.bincount(node_graph, minlength=len(raw_labels))
    offsets = np.concatenate([[0], np.cumsum(counts)])
    if np.any(np.diff(node_graph) < 0):
        raise StructuralError(f"{ind_path}: nodes must be grouped by graph")

    adjs = [np.zeros((c, c)) for c in counts]
    for lineno, (u, v) in enumerate(edges, start=1):
        u, v = u - 1, v - 1
        if not (0 <= u < len(node_graph) and 0 <= v < len(node_graph)):
            raise StructuralError(f"{a_path}:{lineno}: node id out of range")
        g = node_graph[u]
        if node_graph[v] != g:
            raise StructuralError(f"{a_path}:{lineno}: edge ({u + 1}, {v + 1}) spans graphs {g + 1} and {node_graph[v] + 1}")
        if u == v:
            continue
        lu, lv = u - offsets[g], v - offsets[g]
        adjs[g][lu, lv] = adjs[g][lv, lu] = 1.0

    nl_path = _find(directory, "node_labels")
    na_path = _find(directory, "node_attributes")
    if nl_path is not None:
        node_labels = np.array([r[0] for r in _read_rows(nl_path, 1, int)])
        if len(node_labels) != len(node_graph):
            raise StructuralError(f"{nl_path}: {len(node_labels)} rows for {len(node_graph)} nodes")
        values = np.unique(node_labels)
        onehot = (node_labels[:, None] == values[None, :]).astype(np.float64)
        all_feats = onehot
    elif na_path is not None:
        all_feats = np.array(_read_rows(na_path, None, float), dtype=np.float64)
        if all_feats.shape[0] != len(node_graph):
            raise StructuralError(f"{na_path}: {all_feats.shape[0]} rows for {len(node_graph)} nodes")
    else:
        all_feats = None

    label_values = sorted(set(raw_labels))
    remap = {v: i for i, v in enumerate(label_values)}
    graphs = []
    for g, adj in enumerate(adjs):
        if all_feats is None:
            feats = degree_one_hot(adj, degree_cap)
        else:
            feats = all_feats[offsets[g]:offsets[g + 1]]
        graphs.append(Graph(adj, feats, remap[raw_labels[g]]))
    return Dataset.from_graphs(graphs, num_classes=len(label_values), name=name)


# --- single-file serialisation ---------------------------------------------
#
# Format (version 1), whitespace separated, '#' starts a comment line:
#
#   fedgl-graphs 1
#   classes <L> dim <d>
#   graph <n> <num_edges> <label>
#   <u> <v>            # num_edges lines, 0-based, u < v
#   <x_1 ... x_d>      # n lines of feature values (repr floats)
#   ...repeated per graph

def save_graphs(path, dataset):
    lines = ["fedgl-graphs 1", f"classes {dataset.num_classes} dim {dataset.d}"]
    for g in dataset.graphs:
        edges = g.edges()
        lines.append(f"graph {g.n} {len(edges)} {g.label}")
        lines.extend(f"{u} {v}" for u, v in edges)
        lines.extend(" ".join(repr(float(x)) for x in row) for row in g.feats)
    Path(path).write_text("\n".join(lines) + "\n")


def load_graphs(path, name=None):
    path = Path(path)
    tokens = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if line.strip() and not line.lstrip().startswith("#"):
            tokens.append((lineno, line.split()))
    if not tokens or tokens[0][1] != ["fedgl-graphs", "1"]:
        raise ParseError(path, tokens[0][0] if tokens else 1, "missing 'fedgl-graphs 1' header")
    lineno, head = tokens[1]
    if len(head) != 4 or head[0] != "classes" or head[2] != "dim":
        raise ParseError(path, lineno, "expected 'classes <L> dim <d>'")
    num_classes, d = int(head[1]), int(head[3])
    graphs, pos = [], 2
    try:
        while pos < len(tokens):
            lineno, rec = tokens[pos]
            if rec[0] != "graph" or len(rec) != 4:
                raise ParseError(path, lineno, "expected 'graph <n> <edges> <label>'")
            n, m, label = int(rec[1]), int(rec[2]), int(rec[3])
            adj = np.zeros((n, n))
            for lineno, rec in tokens[pos + 1:pos + 1 + m]:
                u, v = (int(x) for x in rec)
                if not (0 <= u < n and 0 <= v < n):
                    raise StructuralError(f"{path}:{lineno}: edge node outside graph of {n} nodes")
                adj[u, v] = adj[v, u] = 1.0
            pos += 1 + m
            feats = np.array([[float(x) for x in r] for _, r in tokens[pos:pos + n]]).reshape(n, d)
            pos += n
            graphs.append(Graph(adj, feats, label))
    except (ValueError, IndexError) as exc:
        raise ParseError(path, tokens[min(pos, len(tokens) - 1)][0], str(exc)) from None
    return Dataset.from_graphs(graphs, num_classes=num_classes, name=name or path.stem)


# --- synthetic datasets ------------------------------------------------------

@dataclass(frozen=True)
class FamilySpec:
    """One generative family (one class).

    kind: "er" (G(n, p) with p = param) or "pa" (preferential attachment, each
    new node attaches ``param`` edges).  ``weight`` sets the class share.
    """
    kind: str
    n_range: tuple
    param: float
    weight: float = 1.0


@dataclass(frozen=True)
class ClassSpec:
    families: tuple
    degree_cap: int = 10
    label_noise: float = 0.0

    @classmethod
    def from_dict(cls, raw):
        fams = tuple(FamilySpec(f["kind"], tuple(f["n_range"]), float(f["param"]), float(f.get("weight", 1.0)))
                     for f in raw["families"])
        return cls(fams, int(raw.get("degree_cap", 10)), float(raw.get("label_noise", 0.0)))


DEFAULT_CLASS_SPEC = ClassSpec((FamilySpec("er", (12, 24), 0.16), FamilySpec("pa", (12, 24), 1.0)), degree_cap=10)

# Two-class surrogate sized like MUTAG (188 graphs, 2:1 class ratio, ~18 nodes).
MUTAG_LIKE_SPEC = ClassSpec(
    (FamilySpec("er", (10, 28), 0.14, weight=2.0), FamilySpec("pa", (10, 28), 1.0, weight=1.0)),
    degree_cap=7,
    label_noise=0.2,
)


def _er(n, p, rng):
    upper = np.triu(rng.random((n, n)) < p, 1)
    return (upper | upper.T).astype(np.float64)


def _pa(n, m, rng):
    m = max(1, int(round(m)))
    adj = np.zeros((n, n))
    deg = np.zeros(n)
    for v in range(1, n):
        k = min(m, v)
        w = deg[:v] + 1.0
        targets = rng.choice(v, size=k, replace=False, p=w / w.sum())
        adj[v, targets] = adj[targets, v] = 1.0
        deg[targets] += 1
        deg[v] += k
    return adj


_GENERATORS = {"er": _er, "pa": _pa}


def generate_synthetic_dataset(count, class_spec=DEFAULT_CLASS_SPEC, seed=0, name="synthetic"):
    """Deterministic multi-family dataset; class ``i`` is drawn from family ``i``."""
    if isinstance(class_spec, dict):
        class_spec = ClassSpec.from_dict(class_spec)
    fams = class_spec.families
    if len(fams) < 2:
        raise ConfigError("class spec needs at least two families")
    for f in fams:
        lo, hi = f.n_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"empty node-count range {f.n_range}")
        if f.kind not in _GENERATORS:
            raise ConfigError(f"unknown family kind {f.kind!r}")
    rng = np.random.default_rng(seed)
    weights = np.array([f.weight for f in fams])
    per_class = np.floor(count * weights / weights.sum()).astype(int)
    per_class[np.argsort(-weights, kind="stable")[: count - per_class.sum()]] += 1
    labels = np.repeat(np.arange(len(fams)), per_class)
    rng.shuffle(labels)
    graphs = []
    for c in labels:
        f = fams[c]
        n = int(rng.integers(f.n_range[0], f.n_range[1] + 1))
        adj = _GENERATORS[f.kind](n, f.param, rng)
        label = int(c)
        if class_spec.label_noise > 0 and rng.random() < class_spec.label_noise:
            label = int(rng.choice([k for k in range(len(fams)) if k != c]))
        graphs.append(Graph(adj, degree_one_hot(adj, class_spec.degree_cap), label))
    return Dataset.from_graphs(graphs, num_classes=len(fams), name=name)


# --- splits --------------------------------------------------------------------

def split_train_test(dataset, test_fraction, seed=0):
    """Stratified split; returns (train indices, test indices), each sorted."""
    if not 0 < test_fraction < 1:
        raise SplitError(f"test fraction must lie in (0, 1), got {test_fraction}")
    labels = dataset.labels if isinstance(dataset, Dataset) else np.asarray([g.label for g in dataset])
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    members = [np.flatnonzero(labels == c) for c in classes]
    for c, idx in zip(classes, members):
        if len(idx) < 2:
            raise SplitError(f"class {c} has {len(idx)} graph(s); need at least 2 to split")
    # overall test count first, then largest-remainder allocation across classes
    total = int(np.floor(len(labels) * test_fraction + 0.5))
    quota = np.array([len(idx) * test_fraction for idx in members])
    take = np.floor(quota).astype(int)
    order = sorted(range(len(classes)), key=lambda j: (-(quota[j] - take[j]), j))
    for j in order[:max(0, total - int(take.sum()))]:
        take[j] += 1
    train, test = [], []
    for idx, k in zip(members, take):
        idx = rng.permutation(idx)
        k = min(max(int(k), 1), len(idx) - 1)
        test.extend(idx[:k].tolist())
        train.extend(idx[k:].tolist())
    return sorted(train), sorted(test)


SCHEMES = ("iid", "non-iid-single-label", "imbalanced")


def distribute_to_clients(train_indices, num_clients, scheme="iid", seed=0, labels=None, skew=0.9):
    """Partition training indices across clients.

    ``labels`` (indexed like the dataset) is required for the label-aware
    schemes.  For "imbalanced", client ``i`` draws a fraction ``skew`` of its
    graphs from its home label ``i mod L`` and the rest from the other labels.
    """
    if num_clients < 1:
        raise ConfigError("need at least one client")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown distribution scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    train = np.array(sorted(train_indices), dtype=np.int64)
    if scheme == "iid":
        perm = rng.permutation(train)
        parts = np.array_split(perm, num_clients)
        return ClientSplit(tuple(tuple(sorted(p.tolist())) for p in parts), scheme)

    if labels is None:
        raise ConfigError(f"scheme {scheme!r} needs graph labels")
    labels = np.asarray(labels)
    classes = sorted(np.unique(labels[train]).tolist())
    L = len(classes)
    if scheme == "non-iid-single-label":
        if num_clients < L:
            raise ConfigError(f"non-iid needs at least as many clients ({num_clients}) as labels ({L})")
        parts = [[] for _ in range(num_clients)]
        for j, c in enumerate(classes):
            owners = [i for i in range(num_clients) if i % L == j]
            idx = rng.permutation(train[labels[train] == c])
            for o, chunk in zip(owners, np.array_split(idx, len(owners))):
                parts[o].extend(chunk.tolist())
        return ClientSplit(tuple(tuple(sorted(p)) for p in parts), scheme)

    # imbalanced
    if not 0 <= skew <= 1:
        raise ConfigError(f"skew must lie in [0, 1], got {skew}")
    pools = {c: list(rng.permutation(train[labels[train] == c])) for c in classes}
    sizes = [len(p) for p in np.array_split(np.arange(len(train)), num_clients)]
    parts = [[] for _ in range(num_clients)]
    for i in range(num_clients):
        home = classes[i % L]
        want = {c: 0 for c in classes}
        want[home] = int(round(sizes[i] * skew)) if L > 1 else sizes[i]
        rest = sizes[i] - want[home]
        others = [c for c in classes if c != home]
        for k in range(rest):
            want[others[k % len(others)]] += 1
        for c in classes:
            take = min(want[c], len(pools[c]))
            parts[i].extend(int(x) for x in pools[c][:take])
            del pools[c][:take]
    leftovers = [int(x) for c in classes for x in pools[c]]
    for k, x in enumerate(leftovers):
        parts[k % num_clients].append(x)
    return ClientSplit(tuple(tuple(sorted(p)) for p in parts), scheme)


def perturbation_size(g, g_tilde):
    """Changed feature rows plus changed unordered node pairs."""
    a1, a2 = (g.adj, g_tilde.adj)
    if a1.shape != a2.shape:
        raise StructuralError(f"node count mismatch: {a1.shape[0]} vs {a2.shape[0]}")
    rows = int(np.any(g.feats != g_tilde.feats, axis=1).sum())
    pairs = int(np.triu(a1 != a2, 1).sum())
    return rows + pairs
