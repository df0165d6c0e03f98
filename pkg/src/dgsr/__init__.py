"""Dual-graph sequential recommendation."""

from .corpus import InteractionLog, SequenceDataset, build_splits, ingest
from .evaluation import EvalConfig, MetricsReport, evaluate
from .graph import NormalizedBigraph, build_ii_graph, build_ui_graph, propagate, propagate_transpose
from .model import EmbeddingState, PropagatedState, VariantConfig, forward, init_state, score, score_batch
from .synth import SynthConfig, generate
from .train import TrainConfig, build_graphs, fit

__version__ = "0.1.0"
