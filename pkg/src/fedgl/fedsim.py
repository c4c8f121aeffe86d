"""In-process FedAvg simulation with benign and malicious clients."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import gin
from .attack import (
    AttackConfig,
    GeneratorConfig,
    TriggerGenerator,
    inject_trigger,
    make_trigger_pool,
    node_importance,
    place_rand_trigger,
    random_location,
    select_location,
    train_generator_step,
    trigger_shape,
)
from .defense import subgraph_augment
from .errors import FedGLError, RoundError

log = logging.getLogger(__name__)

# independent RNG streams per (seed, round, client)
STREAM_SELECT = 0
STREAM_TRAIN = 1
STREAM_TRIGGER = 2
STREAM_GENERATOR = 3
STREAM_AUGMENT = 4
SERVER = -1


def stream_rng(seed, rnd, client, stream):
    # numpy seeds must be non-negative; shift the server id
    return np.random.default_rng([int(seed), int(rnd), int(client) + 1, int(stream)])


@dataclass(frozen=True)
class FedConfig:
    num_clients: int = 20
    select_frac: float = 0.5
    rounds: int = 200
    local_epochs: int = 1
    lr: float = 1e-2
    batch_size: int = 32
    hidden: int = 32
    num_layers: int = 3
    split: str = "iid"
    seed: int = 0
    attack: AttackConfig = field(default_factory=AttackConfig)

    def num_malicious(self):
        if self.attack.kind == "none":
            return 0
        return int(np.floor(self.attack.rho * self.num_clients + 1e-9))

    def num_selected(self, pool=None):
        pool = self.num_clients if pool is None else pool
        return int(np.floor(self.select_frac * pool + 1e-9))

    def validate(self, num_classes=None):
        errors = []
        if self.num_clients < 1:
            errors.append(f"fed.num_clients must be >= 1, got {self.num_clients}")
        if not 0 < self.select_frac <= 1:
            errors.append(f"fed.select_frac must lie in (0, 1], got {self.select_frac}")
        if self.rounds < 0:
            errors.append(f"fed.rounds must be >= 0, got {self.rounds}")
        if self.split not in ("iid", "non-iid-single-label", "imbalanced"):
            errors.append(f"fed.split must be iid, non-iid-single-label or imbalanced, got {self.split!r}")
        return errors + self.attack.validate(num_classes)


@dataclass
class Client:
    idx: int
    graphs: list
    malicious: bool = False
    poisoned: tuple = ()             # indices into graphs, fixed at setup
    generator: TriggerGenerator | None = None
    shape: object = None             # TriggerShape for the random baselines

    @property
    def clean_graphs(self):
        skip = set(self.poisoned)
        return [g for i, g in enumerate(self.graphs) if i not in skip]


@dataclass
class RoundLog:
    round: int
    selected: tuple
    checksum: str
    ma: float | None = None
    ba: float | None = None


def malicious_ids(config):
    perm = stream_rng(config.seed, 0, SERVER, STREAM_SELECT).permutation(config.num_clients)
    return sorted(int(i) for i in perm[:config.num_malicious()])


def setup_clients(config, client_graphs, n_max, d):
    """Client objects with fixed poisoned subsets and attack state."""
    atk = config.attack
    bad = set(malicious_ids(config))
    clients = []
    for i, graphs in enumerate(client_graphs):
        c = Client(i, list(graphs), malicious=i in bad)
        if c.malicious:
            rng = stream_rng(config.seed, 0, i, STREAM_TRIGGER)
            eligible = [j for j, g in enumerate(graphs) if g.n >= atk.n_tri]
            k = int(np.floor(atk.poison_rate * len(graphs) + 0.5))
            k = min(k, len(eligible))
            c.poisoned = tuple(sorted(int(j) for j in rng.choice(eligible, size=k, replace=False))) if k else ()
            if atk.kind == "opt-gdba":
                gcfg = GeneratorConfig(n_max, d, config.num_clients)
                c.generator = TriggerGenerator.init(gcfg, i, stream_rng(config.seed, 0, i, STREAM_GENERATOR))
        clients.append(c)
    bad_clients = [c for c in clients if c.malicious]
    if atk.kind in ("rand-gcba", "rand-gdba") and bad_clients:
        pools = [np.vstack([g.feats for g in c.graphs]) if c.graphs else None for c in bad_clients]
        shapes = make_trigger_pool(atk, pools, d, stream_rng(config.seed, 0, SERVER, STREAM_TRIGGER))
        for c, s in zip(bad_clients, shapes):
            c.shape = s
    return clients


def opt_locations(client, atk, rng):
    locs = []
    for j in client.poisoned:
        g = client.graphs[j]
        scores = node_importance(client.generator, g).s
        msize = atk.n_star if atk.scheme == "customized" else atk.n_tri
        locs.append(select_location(scores, atk.scheme, atk.n_tri, msize, rng, atk.gap_B, atk.gap_K))
    return locs


def backdoored_graphs(client, atk, rng):
    """(backdoored graphs labelled y_B, trigger locations) for this round."""
    out, locs = [], []
    if atk.kind == "opt-gdba":
        locs = opt_locations(client, atk, rng)
        for j, loc in zip(client.poisoned, locs):
            trig = trigger_shape(client.generator, client.graphs[j], loc)
            out.append(inject_trigger(client.graphs[j], trig, label=atk.y_B))
    else:
        for j in client.poisoned:
            g = client.graphs[j]
            loc = random_location(g, client.shape.n_tri, rng)
            locs.append(loc)
            trig = place_rand_trigger(client.shape, g, loc, atk.rand_features == "keep")
            out.append(inject_trigger(g, trig, label=atk.y_B))
    return out, locs


def client_update(model, client, config, rnd, benign_only=False):
    """Local update of one client; malicious ones also step their generator."""
    atk = config.attack
    train_rng = stream_rng(config.seed, rnd, client.idx, STREAM_TRAIN)
    if not client.malicious or benign_only or not client.poisoned:
        return gin.train_local(model, client.graphs, config.local_epochs, config.lr, train_rng, config.batch_size)
    trig_rng = stream_rng(config.seed, rnd, client.idx, STREAM_TRIGGER)
    bd, locs = backdoored_graphs(client, atk, trig_rng)
    local = gin.train_local(model, client.clean_graphs + bd, config.local_epochs, config.lr, train_rng,
                            config.batch_size)
    if atk.kind == "opt-gdba":
        gen_rng = stream_rng(config.seed, rnd, client.idx, STREAM_GENERATOR)
        sources = [client.graphs[j] for j in client.poisoned]
        for _ in range(atk.gen_steps):
            train_generator_step(client.generator, local, sources, locs, atk.y_B, atk.gen_lr, gen_rng,
                                 use_gate=atk.score_gate)
    return local


def select_clients(config, rnd, pool):
    k = config.num_selected(len(pool))
    if k < 1:
        raise RoundError(f"round {rnd}: select_frac={config.select_frac} selects no client out of {len(pool)}")
    rng = stream_rng(config.seed, rnd, SERVER, STREAM_SELECT)
    return tuple(sorted(int(pool[i]) for i in rng.choice(len(pool), size=k, replace=False)))


def run_round(model, clients, config, rnd, pool=None, benign_only=False, update_fn=None):
    """One FedAvg round; returns (new global model, selected client ids)."""
    pool = [c.idx for c in clients] if pool is None else list(pool)
    by_idx = {c.idx: c for c in clients}
    selected = select_clients(config, rnd, pool)
    update_fn = update_fn or client_update
    vectors = []
    for i in selected:
        try:
            local = update_fn(model, by_idx[i], config, rnd, benign_only)
        except FedGLError as exc:
            raise type(exc)(f"round {rnd}, client {i}: {exc}") from exc
        vectors.append(local.to_vector())
    return gin.GinModel.from_vector(model.config, ad.average_params(vectors)), selected


def initial_model(config, d, num_classes):
    gcfg = gin.GinConfig(d, num_classes, config.hidden, config.num_layers)
    return gin.GinModel.init(gcfg, stream_rng(config.seed, 0, SERVER, STREAM_TRAIN))


def run_training(config, clients, d, num_classes, eval_fn=None, eval_every=0, model=None):
    """Full backdoored FedGL training.

    Returns (final model, round logs, {client id: generator}).  ``eval_fn(model)``
    -> (ma, ba) is called every ``eval_every`` rounds when given.
    """
    model = initial_model(config, d, num_classes) if model is None else model
    logs = []
    for rnd in range(1, config.rounds + 1):
        model, selected = run_round(model, clients, config, rnd)
        entry = RoundLog(rnd, selected, model.checksum())
        if eval_fn is not None and eval_every and (rnd % eval_every == 0 or rnd == config.rounds):
            entry.ma, entry.ba = eval_fn(model)
        logs.append(entry)
        log.debug("round %d selected %s", rnd, selected)
    gens = {c.idx: c.generator for c in clients if c.generator is not None}
    return model, logs, gens


def finetune_clean(model, clients, config, extra_rounds, start_round=None):
    """Continue FedAvg for ``extra_rounds`` over the benign clients' clean graphs."""
    benign = [c for c in clients if not c.malicious]
    start = config.rounds if start_round is None else start_round
    for r in range(1, extra_rounds + 1):
        model, _ = run_round(model, benign, config, start + r, benign_only=True)
    return model


def finetune_with_subgraphs(model, clients, config, t_set, extra_rounds, start_round=None):
    """Clean finetuning where every benign graph also contributes one random
    subgraph per T in ``t_set``, labelled like its source graph."""
    benign = []
    for c in clients:
        if c.malicious:
            continue
        rng = stream_rng(config.seed, 0, c.idx, STREAM_AUGMENT)
        benign.append(Client(c.idx, subgraph_augment(c.graphs, list(t_set), rng)))
    start = config.rounds if start_round is None else start_round
    for r in range(1, extra_rounds + 1):
        model, _ = run_round(model, benign, config, start + r, benign_only=True)
    return model


@dataclass(frozen=True)
class TriggerSizes:
    avg_n_tri: float
    avg_e_tri: float
    count: int


def trigger_size_stats(clients, config):
    """Average trigger node/edge counts over the malicious clients' poisoned
    training graphs, using the final generators (or the fixed random shapes)."""
    atk = config.attack
    n_sum = e_sum = count = 0
    for c in clients:
        if not c.malicious or not c.poisoned:
            continue
        if atk.kind == "opt-gdba":
            rng = stream_rng(config.seed, config.rounds + 1, c.idx, STREAM_TRIGGER)
            for j, loc in zip(c.poisoned, opt_locations(c, atk, rng)):
                t = trigger_shape(c.generator, c.graphs[j], loc)
                n_sum += t.n_tri
                e_sum += t.e_tri
                count += 1
        elif c.shape is not None:
            n_sum += c.shape.n_tri * len(c.poisoned)
            e_sum += c.shape.e_tri * len(c.poisoned)
            count += len(c.poisoned)
    if count == 0:
        return TriggerSizes(0.0, 0.0, 0)
    return TriggerSizes(n_sum / count, e_sum / count, count)
