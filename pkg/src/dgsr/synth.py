"""Synthetic sequences with a planted user preference and planted transitions.

Items are split into clusters. Every user prefers one cluster, and clusters
follow a cyclic Markov chain (``c -> c+1`` with probability ``1 - stay_prob``,
``c -> c`` otherwise). Each step picks

* with probability ``alpha_trans`` an item from a successor cluster of the
  previous item,
* with probability ``alpha_pref`` an item from the user's preferred cluster,
* otherwise any item.

The first item has no predecessor, so the transition branch falls back to the
preferred cluster. ``popularity_skew > 0`` replaces uniform choice within a
cluster by Zipf-like weights ``(rank + 1) ** -skew`` to create a long tail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 500
    n_items: int = 200
    seq_len_range: tuple[int, int] = (20, 20)
    n_user_clusters: int = 5
    n_item_clusters: int = 5
    alpha_pref: float = 0.45
    alpha_trans: float = 0.45
    stay_prob: float = 0.2
    popularity_skew: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.alpha_pref <= 1 and 0 <= self.alpha_trans <= 1):
            raise ValueError("alpha_pref and alpha_trans must lie in [0, 1]")
        if self.alpha_pref + self.alpha_trans > 1 + 1e-12:
            raise ValueError("alpha_pref + alpha_trans must be <= 1")
        lo, hi = self.seq_len_range
        if lo < 1 or hi < lo:
            raise ValueError("seq_len_range must satisfy 1 <= lo <= hi")
        if self.n_item_clusters < 1 or self.n_items < self.n_item_clusters:
            raise ValueError("need at least one item per item cluster")
        if self.n_user_clusters < 1:
            raise ValueError("n_user_clusters must be >= 1")


@dataclass
class SynthCorpus:
    """Generated sequences plus the planted structure that produced them."""

    sequences: list[np.ndarray]
    user_cluster: np.ndarray
    preferred_item_cluster: np.ndarray
    item_cluster: np.ndarray
    transition: np.ndarray

    def to_tsv(self) -> str:
        return "".join(
            f"s{u}\tu{u}\ti{item}\t{t}\n"
            for u, seq in enumerate(self.sequences)
            for t, item in enumerate(seq.tolist())
        )


def transition_matrix(n_clusters: int, stay_prob: float = 0.2) -> np.ndarray:
    m = np.zeros((n_clusters, n_clusters))
    for c in range(n_clusters):
        m[c, c] += stay_prob
        m[c, (c + 1) % n_clusters] += 1.0 - stay_prob
    return m


def simulate(config: SynthConfig) -> SynthCorpus:
    rng = np.random.default_rng(config.seed)
    n_clusters = config.n_item_clusters
    item_cluster = rng.permutation(np.arange(config.n_items) % n_clusters)
    members = [np.flatnonzero(item_cluster == c) for c in range(n_clusters)]

    weights = np.ones(config.n_items)
    if config.popularity_skew > 0:
        weights = np.empty(config.n_items)
        for m in members:
            weights[m] = (rng.permutation(len(m)) + 1.0) ** -config.popularity_skew
    member_p = [weights[m] / weights[m].sum() for m in members]
    global_p = weights / weights.sum()

    trans = transition_matrix(n_clusters, config.stay_prob)
    user_cluster = rng.integers(config.n_user_clusters, size=config.n_users)
    preferred = user_cluster % n_clusters

    def from_cluster(c: int) -> int:
        return int(rng.choice(members[c], p=member_p[c]))

    lo, hi = config.seq_len_range
    sequences = []
    for u in range(config.n_users):
        length = int(rng.integers(lo, hi + 1))
        seq = np.empty(length, dtype=np.int64)
        prev = -1
        for t in range(length):
            r = rng.random()
            if r < config.alpha_trans and prev >= 0:
                item = from_cluster(int(rng.choice(n_clusters, p=trans[item_cluster[prev]])))
            elif r < config.alpha_trans + config.alpha_pref:
                item = from_cluster(int(preferred[u]))
            else:
                item = int(rng.choice(config.n_items, p=global_p))
            seq[t] = prev = item
        sequences.append(seq)
    return SynthCorpus(sequences, user_cluster, preferred, item_cluster, trans)


def generate(config: SynthConfig) -> str:
    """Canonical corpus TSV (``sequence, user, item, timestamp``) for ``config``."""
    return simulate(config).to_tsv()
