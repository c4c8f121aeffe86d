"""Attack configuration, per-client trigger state and backdoored test sets."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .generator import global_trigger
from .trigger import Trigger, TriggerShape, complete_edges, inject_trigger, rand_er_trigger, random_location

log = logging.getLogger(__name__)

ATTACK_KINDS = ("none", "rand-gcba", "rand-gdba", "opt-gdba")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "none"
    scheme: str = "definable"      # opt-gdba location learning: definable | customized
    rho: float = 0.2
    n_tri: int = 4
    n_star: int = 5                # size cap for the customized scheme
    e_tri: int = 6                 # edges of the random ER triggers
    poison_rate: float = 0.5
    y_B: int = 1
    gen_lr: float = 1e-2
    gen_steps: int = 1
    gap_B: int = 10
    gap_K: int = 10
    score_gate: bool = True
    rand_features: str = "keep"    # random baselines: keep the host's feature rows or "resample"

    def validate(self, num_classes=None):
        errors = []
        if self.kind not in ATTACK_KINDS:
            errors.append(f"attack.kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if self.scheme not in ("definable", "customized"):
            errors.append(f"attack.scheme must be definable or customized, got {self.scheme!r}")
        if not 0 <= self.rho <= 1:
            errors.append(f"attack.rho must lie in [0, 1], got {self.rho}")
        if not 0 <= self.poison_rate <= 1:
            errors.append(f"attack.poison_rate must lie in [0, 1], got {self.poison_rate}")
        if self.n_tri < 1 or self.n_star < 1:
            errors.append("attack.n_tri and attack.n_star must be >= 1")
        if not 0 <= self.e_tri <= self.n_tri * (self.n_tri - 1) // 2:
            errors.append(f"attack.e_tri={self.e_tri} outside [0, {self.n_tri * (self.n_tri - 1) // 2}]")
        if self.rand_features not in ("keep", "resample"):
            errors.append(f"attack.rand_features must be keep or resample, got {self.rand_features!r}")
        if num_classes is not None and not 0 <= self.y_B < num_classes:
            errors.append(f"attack.y_B={self.y_B} outside 0..{num_classes - 1}")
        return errors


def fairness_holds(rho_c, e_c, rho_d, e_d, tol=1e-9):
    """Equal total trigger edges across the centralized and distributed baselines."""
    return abs(rho_c * e_c - rho_d * e_d) <= tol


def check_fairness(gcba, gdba):
    if not fairness_holds(gcba.rho, gcba.e_tri, gdba.rho, gdba.e_tri):
        raise ConfigError(
            f"fairness violated: rho_c*e_c = {gcba.rho * gcba.e_tri} != rho_d*e_d = {gdba.rho * gdba.e_tri}")


def make_trigger_pool(cfg, feature_pools, d, rng):
    """One ER shape per malicious client (distinct draws), or one shared complete
    shape for the centralized baseline."""
    if cfg.kind == "rand-gcba":
        pool = feature_pools[0] if feature_pools else None
        shared = rand_er_trigger(cfg.n_tri, cfg.e_tri, d, rng, pool)
        return [shared for _ in feature_pools]
    return [rand_er_trigger(cfg.n_tri, cfg.e_tri, d, rng, fp) for fp in feature_pools]


def combined_rand_trigger(shapes, n_tri):
    """Complete n_tri-node test trigger whose row j comes from local trigger j mod k."""
    k = len(shapes)
    feats = np.vstack([shapes[j % k].feat_matrix[j % shapes[j % k].n_tri] for j in range(n_tri)])
    return TriggerShape(complete_edges(n_tri), feats)


def place_rand_trigger(shape, graph, nodes, keep_features=True):
    """Random-baseline trigger at ``nodes``; with ``keep_features`` only the
    connections are replaced and the host graph's feature rows stay."""
    if keep_features:
        return Trigger(tuple(nodes), shape.edge_matrix, graph.feats[list(nodes)])
    return Trigger.place(shape, nodes)


@dataclass
class BackdoorTestSet:
    pairs: list            # (clean graph, backdoored graph) with clean label kept
    skipped: int
    triggers: list

    @property
    def backdoored(self):
        return [b for _, b in self.pairs]


def build_backdoor_testset(graphs, kind, n_tri, rng, generators=None, shapes=None, keep_features=True):
    """Inject a complete n_tri-node global trigger into every test graph.

    Random baselines place it uniformly at random; the optimized attack places
    it on the top-scored nodes of the combined generators.  Graphs with fewer
    than n_tri nodes are skipped.
    """
    pairs, triggers, skipped = [], [], 0
    if kind in ("rand-gcba", "rand-gdba"):
        shape = combined_rand_trigger(shapes, n_tri)
    for g in graphs:
        if g.n < n_tri:
            skipped += 1
            continue
        if kind == "opt-gdba":
            trig = global_trigger(generators, g, n_tri)
        elif kind in ("rand-gcba", "rand-gdba"):
            trig = place_rand_trigger(shape, g, random_location(g, n_tri, rng), keep_features)
        else:
            raise ConfigError(f"no backdoored test set for attack kind {kind!r}")
        pairs.append((g, inject_trigger(g, trig)))
        triggers.append(trig)
    if skipped:
        log.warning("skipped %d test graph(s) smaller than n_tri=%d", skipped, n_tri)
    return BackdoorTestSet(pairs, skipped, triggers)
