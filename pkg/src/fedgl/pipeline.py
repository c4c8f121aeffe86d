"""End-to-end experiment pipelines shared by the CLI and the acceptance suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import fedsim, gin
from .attack import GeneratorConfig, TriggerGenerator, build_backdoor_testset
from .defense import CertifiedReport, certified_curves, certified_ma_curve
from .graph import distribute_to_clients, generate_synthetic_dataset, load_graphs, load_tu_dataset, split_train_test

log = logging.getLogger(__name__)

# stream ids for test-time randomness (trigger placement on test graphs)
STREAM_TEST = 7


@dataclass
class Experiment:
    config: object
    dataset: object
    train_idx: list
    test_idx: list
    clients: list

    @property
    def test_graphs(self):
        return [self.dataset.graphs[i] for i in self.test_idx]

    @property
    def d(self):
        return self.dataset.d

    @property
    def num_classes(self):
        return self.dataset.num_classes


@dataclass
class AttackMetrics:
    ma: float
    ba_all: float | None
    ba_nontarget: float | None
    avg_n_tri: float | None
    avg_e_tri: float | None
    n_test: int
    n_backdoor: int
    skipped: int

    def row(self):
        return {
            "ma": self.ma, "ba_all": self.ba_all, "ba_nontarget": self.ba_nontarget,
            "avg_n_tri": self.avg_n_tri, "avg_e_tri": self.avg_e_tri,
            "n_test": self.n_test, "n_backdoor": self.n_backdoor, "skipped": self.skipped,
        }


def load_dataset(cfg):
    d = cfg.dataset
    if d.source == "synthetic":
        return generate_synthetic_dataset(d.count, cfg.class_spec(), seed=d.generator_seed,
                                          name=f"synthetic-{d.synthetic}-{d.count}")
    if d.source == "tu":
        return load_tu_dataset(d.path, degree_cap=d.degree_cap)
    return load_graphs(d.path)


def prepare(cfg, dataset=None):
    """Dataset, stratified split and initialised clients for ``cfg``."""
    ds = load_dataset(cfg) if dataset is None else dataset
    fed = cfg.fed
    train_idx, test_idx = split_train_test(ds, cfg.dataset.test_fraction, seed=cfg.seed)
    split = distribute_to_clients(train_idx, fed.num_clients, fed.split, seed=cfg.seed, labels=ds.labels)
    client_graphs = [[ds.graphs[i] for i in c] for c in split.clients]
    clients = fedsim.setup_clients(fed, client_graphs, ds.n_max, ds.d)
    return Experiment(cfg, ds, train_idx, test_idx, clients)


def train(exp, eval_every=0):
    """Run federated training; returns (model, round logs, generators)."""
    def eval_fn(model):
        ma = gin.accuracy(model, exp.test_graphs)
        gens = {c.idx: c.generator for c in exp.clients if c.generator is not None}
        testset = backdoor_testset(exp, gens)
        if testset is None or not testset.pairs:
            return ma, None
        return ma, backdoor_accuracy(model, testset, exp.config.attack.y_B)[0]

    return fedsim.run_training(exp.config.fed, exp.clients, exp.d, exp.num_classes, eval_fn, eval_every)


def rand_shapes(exp):
    return [c.shape for c in exp.clients if c.malicious and c.shape is not None]


def backdoor_testset(exp, generators):
    atk = exp.config.attack
    if atk.kind == "none" or exp.config.fed.num_malicious() == 0:
        return None
    rng = fedsim.stream_rng(exp.config.seed, 0, fedsim.SERVER, STREAM_TEST)
    gens = [generators[k] for k in sorted(generators)] if generators else None
    return build_backdoor_testset(exp.test_graphs, atk.kind, atk.n_tri, rng, generators=gens,
                                  shapes=rand_shapes(exp), keep_features=atk.rand_features == "keep")


def backdoor_accuracy(model, testset, y_B):
    """(BA over all backdoored test graphs, BA over those whose true label is not y_B)."""
    pred = gin.predict_batch(model, testset.backdoored)
    labels = np.array([g.label for g, _ in testset.pairs])
    ba_all = float(np.mean(pred == y_B)) if len(pred) else float("nan")
    mask = labels != y_B
    ba_nt = float(np.mean(pred[mask] == y_B)) if mask.any() else float("nan")
    return ba_all, ba_nt


def attack_metrics(exp, model, generators, testset=None):
    atk = exp.config.attack
    test = exp.test_graphs
    ma = gin.accuracy(model, test)
    testset = backdoor_testset(exp, generators) if testset is None else testset
    if testset is None:
        return AttackMetrics(ma, None, None, None, None, len(test), 0, 0)
    ba_all, ba_nt = backdoor_accuracy(model, testset, atk.y_B)
    sizes = fedsim.trigger_size_stats(exp.clients, exp.config.fed)
    return AttackMetrics(ma, ba_all, ba_nt, sizes.avg_n_tri, sizes.avg_e_tri, len(test),
                         len(testset.pairs), testset.skipped)


def successful_pairs(model, testset, y_B):
    """Pairs whose clean label differs from y_B and whose backdoored copy is predicted y_B."""
    pred = gin.predict_batch(model, testset.backdoored)
    return [(c, b) for (c, b), p in zip(testset.pairs, pred) if c.label != y_B and p == y_B]


def certify(exp, model, generators, T_values, successful_only=True):
    """One certified report per T.

    Backdoored pairs are restricted to successfully backdoored graphs when
    ``successful_only``.  With no pairs left the clean curve is still computed
    and the backdoor fields are NaN.
    """
    atk = exp.config.attack
    testset = backdoor_testset(exp, generators)
    pairs = []
    if testset is not None:
        pairs = successful_pairs(model, testset, atk.y_B) if successful_only else list(testset.pairs)

    def predict_fn(graphs):
        return gin.predict_batch(model, graphs)

    reports = []
    for T in T_values:
        if pairs:
            reports.append(certified_curves(predict_fn, exp.test_graphs, pairs, int(T), atk.y_B, exp.num_classes))
            continue
        grid, curve, max_m = certified_ma_curve(predict_fn, exp.test_graphs, int(T), exp.num_classes)
        reports.append(CertifiedReport(
            T=int(T), m_grid=grid, certified_ma=curve, certified_ba=float("nan"),
            backdoored_ma=float("nan"), ensemble_ma=curve[0], max_m_star=max_m,
            n_clean=len(exp.test_graphs), n_backdoor=0))
    return reports


def finetune(exp, model, rounds, t_set=()):
    fed = exp.config.fed
    if t_set:
        return fedsim.finetune_with_subgraphs(model, exp.clients, fed, t_set, rounds)
    return fedsim.finetune_clean(model, exp.clients, fed, rounds)


# --- checkpoints -------------------------------------------------------------

def save_model(path, model):
    ad.save_params(path, model.to_vector())


def load_model(path, exp):
    fed = exp.config.fed
    gcfg = gin.GinConfig(exp.d, exp.num_classes, fed.hidden, fed.num_layers)
    return gin.GinModel.from_vector(gcfg, ad.load_params(path))


def save_generator(path, gen):
    ad.save_params(path, gen.to_vector())


def attach_generators(exp, generators):
    """Install loaded generators on their malicious clients."""
    for c in exp.clients:
        if c.idx in generators:
            c.generator = generators[c.idx]


def load_generator(path, exp, client_idx):
    gcfg = GeneratorConfig(exp.dataset.n_max, exp.d, exp.config.fed.num_clients)
    return TriggerGenerator(gcfg, ad.unflatten(ad.load_params(path)), client_idx)
