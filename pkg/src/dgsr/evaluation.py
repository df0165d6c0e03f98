"""Sampled top-n evaluation: Recall@n, MRR@n and NDCG@n.

Each held-out triplet is ranked against ``negatives`` sampled items the
user never interacted with (and that differ from the anchor). Ties count
against the positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import PropagatedState, VariantConfig, score_batch

DEFAULT_BUCKET_EDGES = (0, 1, 2, 5, 10, 20)


class PoolExhaustedError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    n: int = 10
    negatives: int = 100
    seed: int = 0
    bucket_edges: tuple[float, ...] = DEFAULT_BUCKET_EDGES

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.n > self.negatives + 1:
            raise ValueError("cutoff n exceeds the candidate count")


@dataclass
class Bucket:
    lo: float
    hi: float
    recall: float = 0.0
    mrr: float = 0.0
    ndcg: float = 0.0
    count: int = 0


@dataclass
class MetricsReport:
    recall: float
    mrr: float
    ndcg: float
    n: int
    negatives: int
    sample_count: int
    buckets: list[Bucket] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "recall": self.recall,
            "mrr": self.mrr,
            "ndcg": self.ndcg,
            "n": self.n,
            "negatives": self.negatives,
            "sample_count": self.sample_count,
            "buckets": [
                {
                    "lo": b.lo,
                    "hi": None if math.isinf(b.hi) else b.hi,
                    "recall": b.recall,
                    "mrr": b.mrr,
                    "ndcg": b.ndcg,
                    "count": b.count,
                }
                for b in self.buckets
            ],
        }


def sample_eval_negatives(rng: np.random.Generator, user_items, anchor: int, count: int, n_items: int, positive: int | None = None) -> np.ndarray:
    """``count`` distinct items outside the user's history, the anchor and the positive."""
    banned = np.unique(np.concatenate([np.asarray(user_items, dtype=np.int64), [anchor], [] if positive is None else [positive]]))
    banned = banned[(banned >= 0) & (banned < n_items)]
    pool_size = n_items - len(banned)
    if pool_size < count:
        raise PoolExhaustedError(f"only {pool_size} admissible negatives, need {count}")
    if pool_size < 2 * count:
        pool = np.setdiff1d(np.arange(n_items), banned, assume_unique=True)
        return rng.choice(pool, size=count, replace=False)
    picked: list[int] = []
    seen = set(banned.tolist())
    while len(picked) < count:
        for j in rng.integers(0, n_items, size=2 * (count - len(picked))).tolist():
            if j not in seen:
                seen.add(j)
                picked.append(j)
                if len(picked) == count:
                    break
    return np.array(picked, dtype=np.int64)


def build_candidates(triplets, user_items, n_items: int, negatives: int = 100, seed: int = 0) -> np.ndarray:
    """Candidate matrix with the positive in column 0.

    Row ``k`` draws from its own generator seeded by ``(seed, k)``, so the
    negatives for a sample do not depend on which other samples are evaluated.
    """
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    cand = np.empty((len(triplets), negatives + 1), dtype=np.int64)
    for k, (u, l, i) in enumerate(triplets.tolist()):
        rng = np.random.default_rng([seed, k])
        cand[k, 0] = i
        cand[k, 1:] = sample_eval_negatives(rng, user_items[u], l, negatives, n_items, positive=i)
    return cand


def rank_of_positive(scores, positive_index: int = 0) -> int:
    scores = np.asarray(scores)
    pos = scores[positive_index]
    ahead = np.count_nonzero(scores >= pos) - 1  # the positive itself matches
    return int(ahead) + 1


def ranks_from_scores(scores: np.ndarray) -> np.ndarray:
    """Row-wise :func:`rank_of_positive` for a matrix with positives in column 0."""
    return np.count_nonzero(scores[:, 1:] >= scores[:, :1], axis=1) + 1


def metrics_at_n(rank, n: int = 10):
    """(recall, mrr, ndcg) for one or many ranks; single relevant item."""
    rank = np.asarray(rank)
    if np.any(rank < 1):
        raise ValueError("rank must be >= 1")
    hit = rank <= n
    recall = hit.astype(np.float64)
    mrr = np.where(hit, 1.0 / rank, 0.0)
    ndcg = np.where(hit, 1.0 / np.log2(rank + 1.0), 0.0)
    if rank.ndim == 0:
        return float(recall), float(mrr), float(ndcg)
    return recall, mrr, ndcg


def report_from_ranks(ranks, n: int, negatives: int, item_counts=None, bucket_edges=DEFAULT_BUCKET_EDGES) -> MetricsReport:
    ranks = np.asarray(ranks)
    recall, mrr, ndcg = metrics_at_n(ranks, n) if len(ranks) else (np.zeros(0),) * 3
    mean = (lambda x: float(x.mean()) if len(x) else 0.0)
    report = MetricsReport(mean(recall), mean(mrr), mean(ndcg), n, negatives, len(ranks))
    if item_counts is not None:
        item_counts = np.asarray(item_counts)
        edges = list(bucket_edges) + [math.inf]
        for lo, hi in zip(edges[:-1], edges[1:]):
            sel = (item_counts >= lo) & (item_counts < hi)
            report.buckets.append(
                Bucket(lo, hi, mean(recall[sel]), mean(mrr[sel]), mean(ndcg[sel]), int(sel.sum()))
            )
    return report


def evaluate(
    prop: PropagatedState,
    triplets,
    user_items,
    variant: VariantConfig,
    config: EvalConfig = EvalConfig(),
    item_train_counts=None,
    candidates: np.ndarray | None = None,
) -> MetricsReport:
    """Rank every held-out triplet among sampled negatives and average the metrics.

    ``candidates`` may be passed in to reuse a fixed negative set across calls
    (the trainer does this for per-epoch validation).
    """
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    n_items = prop.item_ui.shape[0]
    if candidates is None:
        candidates = build_candidates(triplets, user_items, n_items, config.negatives, config.seed)
    scores = score_batch(prop, triplets[:, 0], triplets[:, 1], candidates, variant)
    ranks = ranks_from_scores(scores)
    counts = None if item_train_counts is None else np.asarray(item_train_counts)[triplets[:, 2]]
    return report_from_ranks(ranks, config.n, candidates.shape[1] - 1, counts, config.bucket_edges)
