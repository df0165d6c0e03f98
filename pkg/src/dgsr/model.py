"""Embedding tables, dual-graph forward pass and triplet scoring.

A triplet (user u, anchor l, target i) is scored as

    <user*[u], item_ui*[i]> + <anchor*[l], item_ii*[i]>

where the starred tables are the base tables after light convolution over
the user-item graph (first pair) and the transition graph (second pair).
Switching either term off or setting its layer count to zero recovers the
factorization baselines:

=========  ======  ======  =========  =========
variant    ui      ii      ui_layers  ii_layers
=========  ======  ======  =========  =========
mf         on      off     0          -
fmc        off     on      -          0
fpmc       on      on      0          0
dgsr       on      on      >0         >0
=========  ======  ======  =========  =========

``mf`` with ``ui_layers > 0`` is LightGCN-style MF; ``fmc`` with
``ii_layers > 0`` is FMC on the transition graph.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import NormalizedBigraph, propagate

CHECKPOINT_VERSION = 1
TABLES = ("user", "item_ui", "anchor", "item_ii")
INIT_STD = 0.01


@dataclass(frozen=True)
class VariantConfig:
    use_ui: bool = True
    use_ii: bool = True
    ui_layers: int = 0
    ii_layers: int = 0

    def __post_init__(self):
        if not (self.use_ui or self.use_ii):
            raise ValueError("at least one of the u-i and i-i terms must be enabled")
        if self.ui_layers < 0 or self.ii_layers < 0:
            raise ValueError("layer counts must be >= 0")

    @classmethod
    def from_name(cls, name: str, ui_layers: int | None = None, ii_layers: int | None = None) -> "VariantConfig":
        name = name.lower()
        defaults = {
            "mf": (True, False, 0, 0),
            "lightgcn": (True, False, 1, 0),
            "fmc": (False, True, 0, 0),
            "fpmc": (True, True, 0, 0),
            "dgsr": (True, True, 2, 2),
        }
        if name not in defaults:
            raise ValueError(f"unknown variant {name!r}; expected one of {sorted(defaults)}")
        use_ui, use_ii, k_ui, k_ii = defaults[name]
        return cls(
            use_ui=use_ui,
            use_ii=use_ii,
            ui_layers=k_ui if ui_layers is None else ui_layers,
            ii_layers=k_ii if ii_layers is None else ii_layers,
        )

    @property
    def label(self) -> str:
        parts = []
        if self.use_ui:
            parts.append("MF" if not self.use_ii else "FPMC")
        elif self.use_ii:
            parts.append("FMC")
        if self.use_ui and self.ui_layers:
            parts.append(f"UI{self.ui_layers}")
        if self.use_ii and self.ii_layers:
            parts.append(f"II{self.ii_layers}")
        return "+".join(parts)


@dataclass
class EmbeddingState:
    user: np.ndarray
    item_ui: np.ndarray
    anchor: np.ndarray
    item_ii: np.ndarray

    @property
    def dim(self) -> int:
        return self.user.shape[1]

    @property
    def n_users(self) -> int:
        return self.user.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_ui.shape[0]

    def tables(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TABLES}

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(*(getattr(self, name).copy() for name in TABLES))

    def allclose(self, other: "EmbeddingState", **kw) -> bool:
        return all(np.allclose(getattr(self, n), getattr(other, n), **kw) for n in TABLES)

    def equal(self, other: "EmbeddingState") -> bool:
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in TABLES)


@dataclass
class PropagatedState:
    user: np.ndarray
    item_ui: np.ndarray
    anchor: np.ndarray
    item_ii: np.ndarray


def init_state(n_users: int, n_items: int, dim: int, seed: int = 0, std: float = INIT_STD) -> EmbeddingState:
    """Four independent N(0, std^2) tables from one seeded generator."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    return EmbeddingState(
        user=rng.normal(0.0, std, size=(n_users, dim)),
        item_ui=rng.normal(0.0, std, size=(n_items, dim)),
        anchor=rng.normal(0.0, std, size=(n_items, dim)),
        item_ii=rng.normal(0.0, std, size=(n_items, dim)),
    )


def forward(
    state: EmbeddingState,
    ui_graph: NormalizedBigraph | None,
    ii_graph: NormalizedBigraph | None,
    variant: VariantConfig,
) -> PropagatedState:
    user, item_ui = state.user, state.item_ui
    anchor, item_ii = state.anchor, state.item_ii
    if variant.use_ui and variant.ui_layers > 0:
        if ui_graph is None:
            raise ValueError("variant needs the user-item graph")
        user, item_ui = propagate(ui_graph, user, item_ui, variant.ui_layers)
    if variant.use_ii and variant.ii_layers > 0:
        if ii_graph is None:
            raise ValueError("variant needs the transition graph")
        anchor, item_ii = propagate(ii_graph, anchor, item_ii, variant.ii_layers)
    return PropagatedState(user, item_ui, anchor, item_ii)


def rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Inner product over the last axis, accumulated left to right.

    The fixed order makes batched and single-triplet scores bitwise equal.
    """
    acc = a[..., 0] * b[..., 0]
    for k in range(1, a.shape[-1]):
        acc = acc + a[..., k] * b[..., k]
    return acc


def score(prop: PropagatedState, u: int, l: int, i: int, variant: VariantConfig) -> float:
    return float(score_batch(prop, [u], [l], [[i]], variant)[0, 0])


def score_batch(prop: PropagatedState, users, anchors, candidates, variant: VariantConfig) -> np.ndarray:
    """Scores of shape ``(batch, n_candidates)``; a 1-D ``candidates`` is one column per row."""
    users = np.asarray(users)
    anchors = np.asarray(anchors)
    candidates = np.asarray(candidates)
    squeeze = candidates.ndim == 1
    if squeeze:
        candidates = candidates[:, None]
    if users.shape != anchors.shape or users.ndim != 1 or candidates.shape[0] != users.shape[0]:
        raise ValueError(
            f"misaligned batch: users {users.shape}, anchors {anchors.shape}, candidates {candidates.shape}"
        )
    n_users, n_items = prop.user.shape[0], prop.item_ui.shape[0]
    if users.size and (users.min() < 0 or users.max() >= n_users):
        raise IndexError("user index out of range")
    if anchors.size and (anchors.min() < 0 or anchors.max() >= n_items):
        raise IndexError("anchor index out of range")
    if candidates.size and (candidates.min() < 0 or candidates.max() >= n_items):
        raise IndexError("candidate index out of range")
    ui = ii = None
    if variant.use_ui:
        ui = rowdot(prop.user[users][:, None, :], prop.item_ui[candidates])
    if variant.use_ii:
        ii = rowdot(prop.anchor[anchors][:, None, :], prop.item_ii[candidates])
    out = ui + ii if ui is not None and ii is not None else (ui if ui is not None else ii)
    return out[:, 0] if squeeze else out


def save_checkpoint(path: Path, state: EmbeddingState, variant: VariantConfig, seed: int, **extra) -> None:
    """Write an ``.npz`` holding the four tables and a JSON ``meta`` record."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "n_users": state.n_users,
        "n_items": state.n_items,
        "dim": state.dim,
        "variant": asdict(variant),
        "seed": seed,
        **extra,
    }
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **state.tables())


def load_checkpoint(path: Path) -> tuple[EmbeddingState, VariantConfig, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')!r}")
        state = EmbeddingState(*(data[name].copy() for name in TABLES))
    return state, VariantConfig(**meta["variant"]), meta
