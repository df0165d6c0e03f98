"""Acceptance suite: one test per end-to-end criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Training runs share one protocol: Adam, learning rate 0.01, batch 1024,
L2 1e-5, 100 epochs, d=10, corpus seed 0, evaluation seed 0, metrics
averaged over training seeds 0, 1 and 2.
"""

import math
import time

import numpy as np
import pytest

from dgsr.cli import main
from dgsr.evaluation import EvalConfig, metrics_at_n, rank_of_positive, ranks_from_scores
from dgsr.experiment import synthetic_dataset, train_and_evaluate
from dgsr.graph import bigraph_from_edges, propagate
from dgsr.model import TABLES, VariantConfig, forward, init_state, score_batch
from dgsr.synth import SynthConfig, generate
from dgsr.train import TrainConfig, build_graphs, loss_and_grad
from tests.test_evaluation import sort_rank
from tests.test_graph import dense_oracle, random_graph
from tests.test_train import GRAD_VARIANTS, central_difference, max_rel_error, small_instance

PROTOCOL = TrainConfig(learning_rate=0.01, batch_size=1024, reg_lambda=1e-5, max_epochs=100, dim=10, optimizer="adam")
SEEDS = (0, 1, 2)
RESULTS: list[str] = []


def record(name: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def test_oracle_equivalence():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(120):
        n_l, n_r, edges = random_graph(rng, max_nodes=50)
        layers, dim = int(rng.integers(0, 4)), int(rng.integers(1, 9))
        g = bigraph_from_edges([a for a, _ in edges], [b for _, b in edges], n_l, n_r)
        x, y = rng.normal(size=(n_l, dim)), rng.normal(size=(n_r, dim))
        got = propagate(g, x, y, layers)
        want = dense_oracle(edges, n_l, n_r, x, y, layers)
        worst = max(worst, float(np.abs(got[0] - want[0]).max()), float(np.abs(got[1] - want[1]).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 10
    assert record("oracle equivalence", ok, f"120 graphs, max abs err {worst:.2e}, {elapsed:.1f}s")


def test_gradient_correctness():
    rng = np.random.default_rng(77)
    start = time.perf_counter()
    worst = 0.0
    for variant in GRAD_VARIANTS:
        state, graphs, quads = small_instance(rng)
        _, grads = loss_and_grad(state, graphs, quads, variant, 1e-3)
        numeric = central_difference(state, graphs, quads, variant, 1e-3)
        worst = max(worst, *(max_rel_error(grads[n], numeric[n]) for n in TABLES))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 30
    assert record("gradient correctness", ok, f"{len(GRAD_VARIANTS)} variants, max rel err {worst:.2e}, {elapsed:.1f}s")


def test_fpmc_reduction():
    rng = np.random.default_rng(5)
    n_users, n_items, dim = 50, 80, 10
    state = init_state(n_users, n_items, dim, seed=3, std=1.0)
    trip = np.column_stack([rng.integers(0, n_users, 300), rng.integers(0, n_items, 300), rng.integers(0, n_items, 300)])
    graphs_ui = bigraph_from_edges(trip[:, 0], trip[:, 2], n_users, n_items)
    graphs_ii = bigraph_from_edges(trip[:, 1], trip[:, 2], n_items, n_items)
    prop = forward(state, graphs_ui, graphs_ii, VariantConfig(True, True, 0, 0))
    u, l, i = rng.integers(0, n_users, 10_000), rng.integers(0, n_items, 10_000), rng.integers(0, n_items, 10_000)
    got = score_batch(prop, u, l, i, VariantConfig(True, True, 0, 0))
    direct = np.array(
        [
            sum(a * b for a, b in zip(state.user[uu], state.item_ui[ii]))
            + sum(a * b for a, b in zip(state.anchor[ll], state.item_ii[ii]))
            for uu, ll, ii in zip(u, l, i)
        ]
    )
    mismatches = int(np.count_nonzero(got != direct))
    assert record("FPMC reduction", mismatches == 0, f"{mismatches} of 10000 scores differ bitwise")


def test_metric_correctness():
    rng = np.random.default_rng(11)
    disagreements = 0
    for _ in range(10_000):
        size = int(rng.integers(1, 102))
        scores = rng.integers(0, 20, size).tolist()  # coarse values force ties
        idx = int(rng.integers(0, size))
        disagreements += rank_of_positive(scores, idx) != sort_rank(scores, idx)
    recall, _, _ = metrics_at_n(ranks_from_scores(rng.random((10_000, 101))), 10)
    p = 10 / 101
    sigma = math.sqrt(p * (1 - p) / 10_000)
    ok = disagreements == 0 and abs(recall.mean() - p) <= 3 * sigma
    assert record(
        "metric correctness",
        ok,
        f"{disagreements} rank disagreements; random Recall@10 {recall.mean():.4f} vs {p:.4f} +/- {3 * sigma:.4f}",
    )


@pytest.fixture(scope="module")
def planted_reports():
    ds = synthetic_dataset(SynthConfig(seed=0))
    graphs = build_graphs(ds)
    reports, seconds = {}, {}
    for name in ("mf", "fmc", "fpmc", "dgsr"):
        start = time.perf_counter()
        reports[name] = train_and_evaluate(ds, graphs, VariantConfig.from_name(name), PROTOCOL, seeds=SEEDS)
        seconds[name] = (time.perf_counter() - start) / len(SEEDS)
    return reports, seconds


def test_planted_fpmc_beats_mf_and_fmc(planted_reports):
    r, _ = planted_reports
    ok = r["fpmc"].ndcg > r["mf"].ndcg and r["fpmc"].ndcg > r["fmc"].ndcg
    detail = f"NDCG@10 FPMC {r['fpmc'].ndcg:.4f}, MF {r['mf'].ndcg:.4f}, FMC {r['fmc'].ndcg:.4f}"
    assert record("planted (a) FPMC > MF, FMC", ok, detail)


def test_planted_dgsr_beats_fpmc(planted_reports):
    r, _ = planted_reports
    gain = r["dgsr"].ndcg / r["fpmc"].ndcg - 1
    detail = f"NDCG@10 DGSR {r['dgsr'].ndcg:.4f} vs FPMC {r['fpmc'].ndcg:.4f} ({gain:+.1%}, need >= +5%)"
    assert record("planted (b) DGSR >= 1.05 x FPMC", gain >= 0.05, detail)


def test_planted_all_beat_random(planted_reports):
    r, seconds = planted_reports
    floor = 3 * 0.099
    slow = [k for k, s in seconds.items() if s >= 300]
    ok = all(rep.recall >= floor for rep in r.values()) and not slow
    detail = ", ".join(f"{k} {rep.recall:.4f}" for k, rep in r.items())
    detail += f" (floor {floor:.3f}); slowest run {max(seconds.values()):.0f}s"
    assert record("planted (c) Recall@10 >= 3 x random", ok, detail)


def test_layer_sweep_trend():
    ds = synthetic_dataset(SynthConfig(seed=0, alpha_pref=0.1, alpha_trans=0.8))
    graphs = build_graphs(ds)
    ndcg = [
        train_and_evaluate(ds, graphs, VariantConfig(False, True, 0, k), PROTOCOL, seeds=SEEDS).ndcg for k in range(3)
    ]
    dips = [ndcg[k + 1] / ndcg[k] - 1 for k in range(2)]
    ok = all(d >= -0.01 for d in dips)
    detail = "FMC+II NDCG@10 by K: " + ", ".join(f"{v:.4f}" for v in ndcg)
    detail += "; step changes " + ", ".join(f"{d:+.1%}" for d in dips)
    assert record("layer-sweep trend", ok, detail)


def _relative_gain(new: float, base: float) -> float:
    if base == 0:
        return math.inf if new > 0 else 0.0
    return new / base - 1


def test_sparsity_direction():
    ds = synthetic_dataset(SynthConfig(seed=0, popularity_skew=1.5))
    graphs = build_graphs(ds)
    ecfg = EvalConfig(bucket_edges=(0, 10))
    fpmc = train_and_evaluate(ds, graphs, VariantConfig.from_name("fpmc"), PROTOCOL, ecfg, seeds=SEEDS)
    dgsr = train_and_evaluate(ds, graphs, VariantConfig.from_name("dgsr"), PROTOCOL, ecfg, seeds=SEEDS)
    rare_gain = _relative_gain(dgsr.buckets[0].ndcg, fpmc.buckets[0].ndcg)
    common_gain = _relative_gain(dgsr.buckets[1].ndcg, fpmc.buckets[1].ndcg)
    ok = fpmc.buckets[0].count > 0 and rare_gain >= common_gain
    detail = (
        f"gain on <10 ({fpmc.buckets[0].count} samples) {rare_gain:+.1%}, "
        f"on >=10 ({fpmc.buckets[1].count} samples) {common_gain:+.1%}"
    )
    assert record("sparsity direction", ok, detail)


def test_training_determinism(tmp_path):
    raw = tmp_path / "raw.tsv"
    raw.write_text(generate(SynthConfig(n_users=100, seed=4)))
    assert main(["prepare", str(raw), "--out", str(tmp_path / "data"), "--min-seq-len", "3", "--min-item-freq", "1"]) == 0
    for name in ("a", "b"):
        argv = ["train", "--data", str(tmp_path / "data"), "--epochs", "5", "--seed", "3", "--out", str(tmp_path / name)]
        assert main(argv) == 0
    a = (tmp_path / "a" / "history.jsonl").read_bytes()
    b = (tmp_path / "b" / "history.jsonl").read_bytes()
    assert record("determinism", a == b and len(a) > 0, f"history files {'identical' if a == b else 'differ'} ({len(a)} bytes)")
