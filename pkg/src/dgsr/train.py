"""BPR training of the four embedding tables.

Gradients are derived by hand: scatter the per-triplet margin gradient onto
the propagated tables, then pull it back to the base tables with the
adjoint of the graph propagation. Regularization is squared L2 on the base
rows a batch touches, for the enabled terms only.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .corpus import SequenceDataset
from .evaluation import EvalConfig, build_candidates, evaluate
from .graph import NormalizedBigraph, build_ii_graph, build_ui_graph, propagate_transpose
from .model import TABLES, EmbeddingState, PropagatedState, VariantConfig, forward, init_state, score_batch

log = logging.getLogger(__name__)


class UnsampleableError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class Graphs:
    ui: NormalizedBigraph | None
    ii: NormalizedBigraph | None


def build_graphs(dataset: SequenceDataset, include_valid_edges: bool = False) -> Graphs:
    ii_source = dataset.train
    if include_valid_edges:
        ii_source = np.concatenate([dataset.train, dataset.valid])
    return Graphs(
        ui=build_ui_graph(dataset.train, dataset.valid, dataset.n_users, dataset.n_items, include_valid_edges),
        ii=build_ii_graph(ii_source, dataset.n_items),
    )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 5000
    reg_lambda: float = 1e-5
    max_epochs: int = 250
    seed: int = 0
    dim: int = 10
    variant: VariantConfig = field(default_factory=VariantConfig)
    optimizer: str = "sgd"
    # "batch": re-propagate before every step; "epoch": reuse one forward pass
    # per epoch for scoring (an approximation, faster on large graphs)
    refresh: str = "batch"
    include_valid_edges: bool = False
    eval: EvalConfig = field(default_factory=EvalConfig)
    record_timing: bool = False

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> list[str]:
        errors = []
        if not self.learning_rate >= 0:
            errors.append("learning_rate must be >= 0")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if not self.reg_lambda >= 0:
            errors.append("reg_lambda must be >= 0")
        if self.max_epochs < 0:
            errors.append("max_epochs must be >= 0")
        if self.dim < 1:
            errors.append("dim must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            errors.append(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.refresh not in ("batch", "epoch"):
            errors.append(f"refresh must be 'batch' or 'epoch', got {self.refresh!r}")
        return errors


# -- negatives -----------------------------------------------------------------

def sample_negative(rng: np.random.Generator, user_items, n_items: int) -> int:
    """One item drawn uniformly from those the user never interacted with."""
    seen = set(np.asarray(user_items).tolist())
    if len(seen) >= n_items:
        raise UnsampleableError("user has interacted with every item")
    while True:
        j = int(rng.integers(n_items))
        if j not in seen:
            return j


def seen_matrix(user_items, n_items: int) -> sp.csr_matrix:
    indptr = np.zeros(len(user_items) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(x) for x in user_items])
    indices = np.concatenate(user_items).astype(np.int64) if len(user_items) else np.empty(0, np.int64)
    m = sp.csr_matrix((np.ones(len(indices), dtype=bool), indices, indptr), shape=(len(user_items), n_items))
    m.sum_duplicates()
    return m


def sample_negatives(rng: np.random.Generator, users, seen: sp.csr_matrix) -> np.ndarray:
    """Vectorized rejection sampling: one negative per entry of ``users``."""
    users = np.asarray(users, dtype=np.int64)
    n_items = seen.shape[1]
    full = np.flatnonzero(np.diff(seen.indptr) >= n_items)
    if np.isin(users, full).any():
        raise UnsampleableError("a user in the batch has interacted with every item")
    out = rng.integers(n_items, size=len(users))
    bad = np.flatnonzero(np.asarray(seen[users, out]).ravel())
    while len(bad):
        out[bad] = rng.integers(n_items, size=len(bad))
        bad = bad[np.asarray(seen[users[bad], out[bad]]).ravel()]
    return out


# -- loss and gradients ----------------------------------------------------------

def bpr_loss(y_pos, y_neg):
    """-ln sigmoid(y_pos - y_neg), written as softplus to avoid overflow."""
    return np.logaddexp(0.0, -(np.asarray(y_pos) - np.asarray(y_neg)))


def _touched_rows(batch: np.ndarray, variant: VariantConfig) -> dict[str, np.ndarray]:
    u, l, i, j = batch.T
    rows = {}
    if variant.use_ui:
        rows["user"] = np.unique(u)
        rows["item_ui"] = np.unique(np.concatenate([i, j]))
    if variant.use_ii:
        rows["anchor"] = np.unique(l)
        rows["item_ii"] = np.unique(np.concatenate([i, j]))
    return rows


def objective(state: EmbeddingState, graphs: Graphs, batch, variant: VariantConfig, reg_lambda: float) -> float:
    """Mean batch BPR loss plus the L2 penalty; forward pass only."""
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 4)
    prop = forward(state, graphs.ui, graphs.ii, variant)
    scores = score_batch(prop, batch[:, 0], batch[:, 1], batch[:, 2:], variant)
    loss = float(bpr_loss(scores[:, 0], scores[:, 1]).mean())
    for name, rows in _touched_rows(batch, variant).items():
        loss += reg_lambda * float(np.sum(getattr(state, name)[rows] ** 2))
    return loss


def loss_and_grad(
    state: EmbeddingState,
    graphs: Graphs,
    batch,
    variant: VariantConfig,
    reg_lambda: float,
    prop: PropagatedState | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 4)
    if prop is None:
        prop = forward(state, graphs.ui, graphs.ii, variant)
    u, l, i, j = batch.T
    size = len(batch)

    margin = np.zeros(size)
    if variant.use_ui:
        margin += np.einsum("bd,bd->b", prop.user[u], prop.item_ui[i] - prop.item_ui[j])
    if variant.use_ii:
        margin += np.einsum("bd,bd->b", prop.anchor[l], prop.item_ii[i] - prop.item_ii[j])
    loss = float(bpr_loss(margin, 0.0).mean())
    coef = (-expit(-margin) / size)[:, None]

    grads = {name: np.zeros_like(getattr(state, name)) for name in TABLES}
    if variant.use_ui:
        g_user = np.zeros_like(prop.user)
        g_item = np.zeros_like(prop.item_ui)
        np.add.at(g_user, u, coef * (prop.item_ui[i] - prop.item_ui[j]))
        np.add.at(g_item, i, coef * prop.user[u])
        np.add.at(g_item, j, -coef * prop.user[u])
        if variant.ui_layers:
            g_user, g_item = propagate_transpose(graphs.ui, g_user, g_item, variant.ui_layers)
        grads["user"], grads["item_ui"] = g_user, g_item
    if variant.use_ii:
        g_anchor = np.zeros_like(prop.anchor)
        g_item = np.zeros_like(prop.item_ii)
        np.add.at(g_anchor, l, coef * (prop.item_ii[i] - prop.item_ii[j]))
        np.add.at(g_item, i, coef * prop.anchor[l])
        np.add.at(g_item, j, -coef * prop.anchor[l])
        if variant.ii_layers:
            g_anchor, g_item = propagate_transpose(graphs.ii, g_anchor, g_item, variant.ii_layers)
        grads["anchor"], grads["item_ii"] = g_anchor, g_item

    if reg_lambda:
        for name, rows in _touched_rows(batch, variant).items():
            table = getattr(state, name)
            loss += reg_lambda * float(np.sum(table[rows] ** 2))
            grads[name][rows] += 2.0 * reg_lambda * table[rows]
    return loss, grads


# -- optimizers --------------------------------------------------------------------

class SGD:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def update(self, state: EmbeddingState, grads: dict[str, np.ndarray]) -> EmbeddingState:
        return EmbeddingState(*(getattr(state, n) - self.learning_rate * grads[n] for n in TABLES))


class Adam:
    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, state: EmbeddingState, grads: dict[str, np.ndarray]) -> EmbeddingState:
        self.t += 1
        new = []
        for n in TABLES:
            g = grads[n]
            m = self.m.setdefault(n, np.zeros_like(g))
            v = self.v.setdefault(n, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            new.append(getattr(state, n) - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps))
        return EmbeddingState(*new)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(config.learning_rate)
    return SGD(config.learning_rate)


def step(
    state: EmbeddingState,
    graphs: Graphs,
    batch,
    config: TrainConfig,
    optimizer=None,
    prop: PropagatedState | None = None,
) -> tuple[EmbeddingState, float]:
    """One optimizer update on a batch of (u, l, i, j) rows."""
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 4)
    if len(batch) == 0:
        raise ValueError("empty batch")
    loss, grads = loss_and_grad(state, graphs, batch, config.variant, config.reg_lambda, prop=prop)
    if not math.isfinite(loss):
        worst = {n: float(np.abs(getattr(state, n)).max()) for n in TABLES}
        raise TrainingDivergedError(f"non-finite loss {loss}; max |entry| per table: {worst}")
    optimizer = optimizer or SGD(config.learning_rate)
    return optimizer.update(state, grads), loss


# -- epoch loop ----------------------------------------------------------------------

@dataclass
class FitResult:
    state: EmbeddingState
    history: list[dict]
    best_epoch: int
    best_valid_ndcg: float
    last_state: EmbeddingState


def fit(
    dataset: SequenceDataset,
    graphs: Graphs,
    config: TrainConfig,
    state: EmbeddingState | None = None,
    history_path: Path | None = None,
) -> FitResult:
    """Train for ``config.max_epochs`` and keep the best-validation-NDCG checkpoint.

    Every epoch shuffles the training triplets, draws one fresh negative per
    positive, runs the batches and evaluates on the validation split with a
    fixed negative set.
    """
    rng = np.random.default_rng(config.seed)
    if state is None:
        state = init_state(dataset.n_users, dataset.n_items, config.dim, seed=config.seed)
    variant = config.variant
    optimizer = make_optimizer(config)
    seen = seen_matrix(dataset.user_items, dataset.n_items)
    valid_candidates = build_candidates(
        dataset.valid, dataset.user_items, dataset.n_items, config.eval.negatives, config.eval.seed
    )

    best, best_ndcg, best_epoch = state, -math.inf, 0
    history: list[dict] = []
    sink = open(history_path, "w", encoding="utf-8") if history_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(dataset.train))
            positives = dataset.train[order]
            negs = sample_negatives(rng, positives[:, 0], seen)
            quads = np.column_stack([positives, negs])
            prop = forward(state, graphs.ui, graphs.ii, variant) if config.refresh == "epoch" else None
            total = 0.0
            for start in range(0, len(quads), config.batch_size):
                batch = quads[start : start + config.batch_size]
                state, loss = step(state, graphs, batch, config, optimizer, prop=prop)
                total += loss * len(batch)
            train_loss = total / max(len(quads), 1)

            report = evaluate(
                forward(state, graphs.ui, graphs.ii, variant),
                dataset.valid,
                dataset.user_items,
                variant,
                config.eval,
                candidates=valid_candidates,
            )
            record = {
                "epoch": epoch,
                "train_loss": train_loss,
                "valid_recall": report.recall,
                "valid_mrr": report.mrr,
                "valid_ndcg": report.ndcg,
                "wall_time_ms": round((time.perf_counter() - t0) * 1000, 3) if config.record_timing else None,
            }
            history.append(record)
            if sink:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
            log.debug("epoch %d loss %.5f valid ndcg %.4f", epoch, train_loss, report.ndcg)
            if report.ndcg > best_ndcg:
                best, best_ndcg, best_epoch = state, report.ndcg, epoch
    finally:
        if sink:
            sink.close()
    return FitResult(best, history, best_epoch, best_ndcg, state)
