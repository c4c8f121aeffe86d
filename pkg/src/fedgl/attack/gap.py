"""Customized trigger location: gap statistic over 1-D k-means of node scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trigger import definable_trigger_location

DEFAULT_B = 10
DEFAULT_K = 10
_FLOOR = 1e-300


def kmeans_1d(x, k, max_iter=100, tol=1e-6):
    """Lloyd's algorithm on a 1-D sample with quantile initialisation.

    Returns (labels, centers, dispersion) where dispersion is the summed
    squared distance of each point to its assigned center.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    k = min(k, len(x))
    centers = np.quantile(x, (np.arange(k) + 0.5) / k)
    labels = np.zeros(len(x), dtype=np.int64)
    for _ in range(max_iter):
        labels = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        new = centers.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new[j] = members.mean()
        moved = np.max(np.abs(new - centers))
        centers = new
        if moved < tol:
            break
    labels = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
    disp = float(np.sum((x - centers[labels]) ** 2))
    return labels, centers, disp


@dataclass(frozen=True)
class GapResult:
    k_hat: int
    gaps: np.ndarray       # index k-1 holds Gap(k)
    s_prime: np.ndarray    # index k-1 holds s'_k
    dispersions: np.ndarray


def gap_statistic(x, K, B, rng, se_form="tibshirani", dispersion_fn=None):
    """Gap(k) for k = 1..K with B uniform [0, 1] reference samples per k.

    ``se_form`` picks s'_k: "tibshirani" is sd(k) * sqrt(1 + 1/B); "literal"
    is sqrt((1 + B)/B * sd(k)).  ``dispersion_fn(sample, k)`` replaces the
    k-means dispersion (used by tests with an exact solver).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if dispersion_fn is None:
        dispersion_fn = lambda s, k: kmeans_1d(s, k)[2]
    gaps, sprime, disps = np.zeros(K), np.zeros(K), np.zeros(K)
    for k in range(1, K + 1):
        vk = max(dispersion_fn(x, k), _FLOOR)
        ref = np.array([np.log(max(dispersion_fn(rng.random(len(x)), k), _FLOOR)) for _ in range(B)])
        gaps[k - 1] = ref.mean() - np.log(vk)
        sd = np.sqrt(np.mean((ref - ref.mean()) ** 2))
        if se_form == "literal":
            sprime[k - 1] = np.sqrt((1.0 + B) / B * sd)
        else:
            sprime[k - 1] = sd * np.sqrt((1.0 + B) / B)
        disps[k - 1] = vk
    k_hat = K
    for k in range(1, K):
        if gaps[k - 1] - gaps[k] + sprime[k] >= 0:
            k_hat = k
            break
    return GapResult(k_hat, gaps, sprime, disps)


def customized_trigger_location(scores, msize, B=DEFAULT_B, K=DEFAULT_K, rng=None, se_form="tibshirani"):
    """Nodes of the highest-mean k-means cluster of the scores, at most ``msize``.

    The number of clusters comes from the gap statistic.  Members are returned
    by descending score (smaller index on ties).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = len(scores)
    if rng is None:
        rng = np.random.default_rng(0)
    if n == 0:
        return []
    if n == 1 or np.all(scores == scores[0]):
        return definable_trigger_location(scores, min(n, msize))
    total = np.abs(scores).sum()
    s = scores / total if total > 0 else scores
    res = gap_statistic(s, min(K, n), B, rng, se_form=se_form)
    labels, centers, _ = kmeans_1d(s, res.k_hat)
    means = [s[labels == j].mean() if np.any(labels == j) else -np.inf for j in range(len(centers))]
    best = int(np.argmax(means))
    members = np.flatnonzero(labels == best)
    order = np.lexsort((members, -scores[members]))
    return [int(v) for v in members[order][:msize]]
