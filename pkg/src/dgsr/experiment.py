"""In-memory train-then-evaluate helpers for comparing variants."""

from __future__ import annotations

import dataclasses

import numpy as np

from .corpus import SequenceDataset, build_splits, ingest
from .evaluation import EvalConfig, MetricsReport, evaluate, report_from_ranks
from .model import VariantConfig, forward
from .synth import SynthConfig, generate
from .train import Graphs, TrainConfig, build_graphs, fit


def synthetic_dataset(config: SynthConfig, min_seq_len: int = 3, min_item_freq: int = 1) -> SequenceDataset:
    return build_splits(ingest(generate(config), min_seq_len, min_item_freq), min_seq_len)


def train_and_evaluate(
    dataset: SequenceDataset,
    graphs: Graphs,
    variant: VariantConfig,
    config: TrainConfig,
    eval_config: EvalConfig = EvalConfig(),
    seeds: tuple[int, ...] = (0,),
    split: str = "test",
) -> MetricsReport:
    """Mean metrics over independent training runs, one per seed.

    All runs share the evaluation negatives, so per-sample metrics are paired
    across seeds and across variants evaluated with the same ``eval_config``.
    """
    triplets = dataset.test if split == "test" else dataset.valid
    counts = dataset.item_train_counts()
    reports = []
    for seed in seeds:
        run_cfg = dataclasses.replace(config, variant=variant, seed=seed)
        result = fit(dataset, graphs, run_cfg)
        prop = forward(result.state, graphs.ui, graphs.ii, variant)
        reports.append(evaluate(prop, triplets, dataset.user_items, variant, eval_config, counts))
    return average_reports(reports)


def average_reports(reports: list[MetricsReport]) -> MetricsReport:
    if len(reports) == 1:
        return reports[0]
    first = reports[0]
    out = dataclasses.replace(
        first,
        recall=float(np.mean([r.recall for r in reports])),
        mrr=float(np.mean([r.mrr for r in reports])),
        ndcg=float(np.mean([r.ndcg for r in reports])),
        buckets=[dataclasses.replace(b) for b in first.buckets],
    )
    for k, b in enumerate(out.buckets):
        b.recall = float(np.mean([r.buckets[k].recall for r in reports]))
        b.mrr = float(np.mean([r.buckets[k].mrr for r in reports]))
        b.ndcg = float(np.mean([r.buckets[k].ndcg for r in reports]))
    return out


__all__ = ["synthetic_dataset", "train_and_evaluate", "average_reports", "build_graphs", "report_from_ranks"]
