"""Global bipartite graphs and light graph convolution over them.

Both graphs share one representation: a left node set, a right node set and
a deduplicated, symmetrically normalized edge set stored in CSR form for
both orientations. The user-item graph has users on the left and items on
the right; the transition graph has anchor copies of items on the left and
target copies on the right.

Propagation alternates between the two sides::

    left_k  = A   @ right_{k-1}
    right_k = A.T @ left_{k-1}

and returns the plain sum of layers ``0..K``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class NormalizedBigraph:
    left_count: int
    right_count: int
    forward: sp.csr_matrix  # left x right, entries 1/sqrt(d_left * d_right)
    backward: sp.csr_matrix  # right x left, same edges
    left_degrees: np.ndarray
    right_degrees: np.ndarray

    @property
    def n_edges(self) -> int:
        return self.forward.nnz

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(left, right, coefficient) arrays in row-major order."""
        coo = self.forward.tocoo()
        return coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data

    def dense(self) -> np.ndarray:
        return self.forward.toarray()


def bigraph_from_edges(left, right, left_count: int, right_count: int) -> NormalizedBigraph:
    left = np.asarray(left, dtype=np.int64).ravel()
    right = np.asarray(right, dtype=np.int64).ravel()
    if left.shape != right.shape:
        raise ValueError("edge endpoint arrays differ in length")
    if left.size and (left.min() < 0 or left.max() >= left_count):
        raise IndexError(f"left index out of range [0, {left_count})")
    if right.size and (right.min() < 0 or right.max() >= right_count):
        raise IndexError(f"right index out of range [0, {right_count})")

    pairs = np.unique(np.column_stack([left, right]), axis=0) if left.size else np.empty((0, 2), np.int64)
    rows, cols = pairs[:, 0], pairs[:, 1]
    left_deg = np.bincount(rows, minlength=left_count)
    right_deg = np.bincount(cols, minlength=right_count)
    coef = 1.0 / (np.sqrt(left_deg[rows].astype(np.float64)) * np.sqrt(right_deg[cols].astype(np.float64)))

    fwd = sp.csr_matrix((coef, (rows, cols)), shape=(left_count, right_count))
    bwd = fwd.T.tocsr()
    fwd.sort_indices()
    bwd.sort_indices()
    return NormalizedBigraph(left_count, right_count, fwd, bwd, left_deg, right_deg)


def build_ui_graph(
    train_triplets,
    valid_context,
    n_users: int,
    n_items: int,
    include_valid_edges: bool = False,
) -> NormalizedBigraph:
    """User-item interaction graph from training-visible interactions.

    Every item referenced by a training triplet (anchor or target) becomes an
    edge to its user. Anchors of ``valid_context`` triplets are earlier
    interactions and always count; their targets only with
    ``include_valid_edges``.
    """
    train = np.asarray(train_triplets, dtype=np.int64).reshape(-1, 3)
    valid = np.asarray(valid_context if valid_context is not None else [], dtype=np.int64).reshape(-1, 3)
    users = [train[:, 0], train[:, 0], valid[:, 0]]
    items = [train[:, 1], train[:, 2], valid[:, 1]]
    if include_valid_edges:
        users.append(valid[:, 0])
        items.append(valid[:, 2])
    return bigraph_from_edges(np.concatenate(users), np.concatenate(items), n_users, n_items)


def build_ii_graph(train_triplets, n_items: int) -> NormalizedBigraph:
    """Anchor -> target transition graph over all observed training transitions."""
    train = np.asarray(train_triplets, dtype=np.int64).reshape(-1, 3)
    return bigraph_from_edges(train[:, 1], train[:, 2], n_items, n_items)


def _check_shapes(graph: NormalizedBigraph, left: np.ndarray, right: np.ndarray) -> None:
    if left.ndim != 2 or right.ndim != 2:
        raise ValueError("embeddings must be 2-D")
    if left.shape[0] != graph.left_count or right.shape[0] != graph.right_count:
        raise ValueError(
            f"embedding rows {left.shape[0]}/{right.shape[0]} do not match "
            f"node counts {graph.left_count}/{graph.right_count}"
        )
    if left.shape[1] != right.shape[1]:
        raise ValueError(f"embedding widths differ: {left.shape[1]} vs {right.shape[1]}")


def _as_float(x) -> np.ndarray:
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(np.float64)


def _layer_sum(a: sp.csr_matrix, a_t: sp.csr_matrix, left, right, layers: int):
    out_left, out_right = left.copy(), right.copy()
    cur_left, cur_right = left, right
    for _ in range(layers):
        cur_left, cur_right = a @ cur_right, a_t @ cur_left
        out_left += cur_left
        out_right += cur_right
    return out_left, out_right


def propagate(graph: NormalizedBigraph, left_emb, right_emb, layers: int):
    """Sum of ``layers + 1`` light-convolution layers on both sides.

    Isolated nodes receive nothing from layer 1 on, so their output equals
    their input row. ``layers == 0`` returns copies of the inputs.
    """
    if layers < 0:
        raise ValueError("layers must be >= 0")
    left_emb = _as_float(left_emb)
    right_emb = _as_float(right_emb)
    _check_shapes(graph, left_emb, right_emb)
    return _layer_sum(graph.forward, graph.backward, left_emb, right_emb, layers)


def propagate_transpose(graph: NormalizedBigraph, left_grad, right_grad, layers: int):
    """Adjoint of :func:`propagate`, used to push gradients back to base tables.

    The one-step operator on stacked ``[left; right]`` is ``[[0, A], [A.T, 0]]``.
    Its transpose swaps the orientations, ``[[0, (A.T).T], [A.T, 0]]``,
    which is the same operator, so the layer sum is self-adjoint.
    """
    if layers < 0:
        raise ValueError("layers must be >= 0")
    left_grad = _as_float(left_grad)
    right_grad = _as_float(right_grad)
    _check_shapes(graph, left_grad, right_grad)
    # backward.T holds exactly the edges and coefficients of forward
    return _layer_sum(graph.forward, graph.backward, left_grad, right_grad, layers)


def dump_edges(graph: NormalizedBigraph, path: Path) -> None:
    left, right, coef = graph.edges()
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, c in zip(left.tolist(), right.tolist(), coef.tolist()):
            fh.write(f"{a}\t{b}\t{c!r}\n")
