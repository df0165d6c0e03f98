"""Interaction-log ingestion and the leave-last-two-out split.

Input is a headerless UTF-8 TSV with columns
``sequence_id, user_id, item_id, timestamp``. A sequence id groups the
events that form one chronological sequence; several sequences may belong
to the same user. Splitting is driven by sequences, embeddings by users.
"""

from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

Triplet = tuple[int, int, int]


class CorpusError(Exception):
    """Base class for corpus problems."""


class CorpusParseError(CorpusError):
    def __init__(self, line_no: int, message: str, source: str = "<input>"):
        super().__init__(f"{source}:{line_no}: {message}")
        self.line_no = line_no
        self.source = source


class EmptyCorpusError(CorpusError):
    pass


class SplitError(CorpusError):
    pass


@dataclass(frozen=True)
class InteractionLog:
    """Events after filtering, with dense ids assigned in first-appearance order.

    The event arrays are aligned and kept in input-line order.
    """

    sequence_ids: np.ndarray
    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    sequence_vocab: list[str]
    user_vocab: list[str]
    item_vocab: list[str]

    @property
    def n_users(self) -> int:
        return len(self.user_vocab)

    @property
    def n_items(self) -> int:
        return len(self.item_vocab)

    @property
    def n_sequences(self) -> int:
        return len(self.sequence_vocab)

    @property
    def events(self) -> list[tuple[int, int, int]]:
        return list(zip(self.users.tolist(), self.items.tolist(), self.timestamps.tolist()))

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class SequenceDataset:
    """Chronological sequences plus their train / valid / test triplets."""

    sequence_users: np.ndarray
    sequences: list[np.ndarray]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    n_users: int
    n_items: int
    min_seq_len: int = 3
    user_items: list[np.ndarray] = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.user_items is None:
            object.__setattr__(
                self,
                "user_items",
                _user_item_sets(self.sequence_users, self.sequences, self.n_users),
            )

    def item_train_counts(self) -> np.ndarray:
        """Occurrences of each item in the training portion of the sequences."""
        counts = np.zeros(self.n_items, dtype=np.int64)
        for seq in self.sequences:
            np.add.at(counts, seq[:-2], 1)
        return counts


def _user_item_sets(sequence_users, sequences, n_users) -> list[np.ndarray]:
    buckets: list[list[np.ndarray]] = [[] for _ in range(n_users)]
    for u, seq in zip(sequence_users.tolist(), sequences):
        buckets[u].append(seq)
    return [
        np.unique(np.concatenate(b)) if b else np.empty(0, dtype=np.int64)
        for b in buckets
    ]


def _parse_lines(stream: Iterable[str], source: str):
    rows = []
    for line_no, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise CorpusParseError(line_no, f"expected 4 tab-separated columns, got {len(parts)}", source)
        seq_raw, user_raw, item_raw, ts_raw = parts
        if not seq_raw or not user_raw or not item_raw:
            raise CorpusParseError(line_no, "empty identifier", source)
        try:
            ts = int(ts_raw)
        except ValueError:
            raise CorpusParseError(line_no, f"timestamp {ts_raw!r} is not an integer", source) from None
        rows.append((seq_raw, user_raw, item_raw, ts))
    return rows


def ingest(
    raw_events: TextIO | Iterable[str] | str,
    min_seq_len: int = 7,
    min_item_freq: int = 5,
    source: str = "<input>",
) -> InteractionLog:
    """Parse, filter and densely re-index a raw event stream.

    Items seen fewer than ``min_item_freq`` times are dropped first, then
    sequences left with fewer than ``min_seq_len`` events.
    """
    if min_seq_len < 1:
        raise ValueError("min_seq_len must be >= 1")
    if isinstance(raw_events, str):
        raw_events = io.StringIO(raw_events)
    rows = _parse_lines(raw_events, source)

    freq = Counter(r[2] for r in rows)
    rows = [r for r in rows if freq[r[2]] >= min_item_freq]
    seq_len = Counter(r[0] for r in rows)
    rows = [r for r in rows if seq_len[r[0]] >= min_seq_len]
    if not rows:
        raise EmptyCorpusError("no events left after filtering")

    seq_vocab: dict[str, int] = {}
    user_vocab: dict[str, int] = {}
    item_vocab: dict[str, int] = {}
    seq_owner: dict[str, str] = {}
    cols = np.empty((4, len(rows)), dtype=np.int64)
    for k, (s, u, i, ts) in enumerate(rows):
        if seq_owner.setdefault(s, u) != u:
            raise CorpusError(f"sequence {s!r} belongs to more than one user")
        cols[0, k] = seq_vocab.setdefault(s, len(seq_vocab))
        cols[1, k] = user_vocab.setdefault(u, len(user_vocab))
        cols[2, k] = item_vocab.setdefault(i, len(item_vocab))
        cols[3, k] = ts
    return InteractionLog(
        sequence_ids=cols[0],
        users=cols[1],
        items=cols[2],
        timestamps=cols[3],
        sequence_vocab=list(seq_vocab),
        user_vocab=list(user_vocab),
        item_vocab=list(item_vocab),
    )


def ordered_sequences(log: InteractionLog) -> tuple[np.ndarray, list[np.ndarray]]:
    """Group events by sequence, sorted by timestamp; ties keep input order."""
    order = np.lexsort((np.arange(len(log)), log.timestamps, log.sequence_ids))
    seq_sorted = log.sequence_ids[order]
    bounds = np.flatnonzero(np.diff(seq_sorted)) + 1
    sequences = np.split(log.items[order], bounds)
    sequence_users = np.zeros(log.n_sequences, dtype=np.int64)
    sequence_users[log.sequence_ids] = log.users
    return sequence_users, sequences


def transition_triplets(sequence_users: Sequence[int], sequences: Sequence[np.ndarray]) -> np.ndarray:
    """All consecutive (user, anchor, target) triplets, no split applied."""
    parts = [
        np.column_stack([np.full(len(s) - 1, u), s[:-1], s[1:]])
        for u, s in zip(sequence_users, sequences)
        if len(s) > 1
    ]
    if not parts:
        return np.empty((0, 3), dtype=np.int64)
    return np.concatenate(parts).astype(np.int64)


def build_splits(log: InteractionLog, min_seq_len: int = 3) -> SequenceDataset:
    sequence_users, sequences = ordered_sequences(log)
    floor = max(min_seq_len, 3)
    short = [k for k, s in enumerate(sequences) if len(s) < floor]
    if short:
        raise SplitError(
            f"{len(short)} sequence(s) shorter than {floor}, e.g. {log.sequence_vocab[short[0]]!r}"
        )
    train = transition_triplets(sequence_users, [s[:-2] for s in sequences])
    valid = np.array([(u, s[-3], s[-2]) for u, s in zip(sequence_users, sequences)], dtype=np.int64)
    test = np.array([(u, s[-2], s[-1]) for u, s in zip(sequence_users, sequences)], dtype=np.int64)
    return SequenceDataset(
        sequence_users=sequence_users,
        sequences=sequences,
        train=train,
        valid=valid,
        test=test,
        n_users=log.n_users,
        n_items=log.n_items,
        min_seq_len=min_seq_len,
    )


def sample_sequences(log: InteractionLog, k: int, seed: int = 0) -> InteractionLog:
    """Keep ``k`` sequences chosen uniformly without replacement, re-indexing densely."""
    if k >= log.n_sequences:
        return log
    rng = np.random.default_rng(seed)
    keep = np.zeros(log.n_sequences, dtype=bool)
    keep[rng.choice(log.n_sequences, size=k, replace=False)] = True
    mask = keep[log.sequence_ids]
    lines = format_corpus(log, mask)
    return ingest(lines, min_seq_len=1, min_item_freq=1)


def format_corpus(log: InteractionLog, mask: np.ndarray | None = None) -> list[str]:
    idx = np.arange(len(log)) if mask is None else np.flatnonzero(mask)
    return [
        f"{log.sequence_vocab[log.sequence_ids[k]]}\t{log.user_vocab[log.users[k]]}\t"
        f"{log.item_vocab[log.items[k]]}\t{log.timestamps[k]}\n"
        for k in idx
    ]


def write_corpus(log: InteractionLog, path: Path) -> None:
    """Write the log back out in the canonical input format (raw ids)."""
    Path(path).write_text("".join(format_corpus(log)), encoding="utf-8")


def dataset_stats(log: InteractionLog, dataset: SequenceDataset | None = None) -> dict:
    stats = {
        "users": log.n_users,
        "items": log.n_items,
        "sequences": log.n_sequences,
        "actions": len(log),
        "avg_actions_per_user": round(len(log) / log.n_users, 4),
        "avg_actions_per_item": round(len(log) / log.n_items, 4),
    }
    if dataset is not None:
        stats.update(train=len(dataset.train), valid=len(dataset.valid), test=len(dataset.test))
    return stats


# -- canonical split files ---------------------------------------------------

def _write_triplets(path: Path, triplets: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, l, i in triplets.tolist():
            fh.write(f"{u}\t{l}\t{i}\n")


def _read_triplets(path: Path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        return np.empty((0, 3), dtype=np.int64)
    return np.loadtxt(io.StringIO(text), dtype=np.int64, delimiter="\t", ndmin=2)


def write_dataset(log: InteractionLog, dataset: SequenceDataset, out_dir: Path) -> None:
    """Emit split files, vocabularies and the ordered sequences.

    ``sequences.tsv`` (``user<TAB>space-separated items``, one row per
    sequence) lets :func:`load_dataset` rebuild the dataset exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_triplets(out / "train.tsv", dataset.train)
    _write_triplets(out / "valid.tsv", dataset.valid)
    _write_triplets(out / "test.tsv", dataset.test)
    for name, vocab in (("vocab_users.tsv", log.user_vocab), ("vocab_items.tsv", log.item_vocab)):
        (out / name).write_text("".join(f"{k}\t{raw}\n" for k, raw in enumerate(vocab)), encoding="utf-8")
    with open(out / "sequences.tsv", "w", encoding="utf-8") as fh:
        for u, seq in zip(dataset.sequence_users.tolist(), dataset.sequences):
            fh.write(f"{u}\t{' '.join(map(str, seq.tolist()))}\n")


def load_dataset(data_dir: Path) -> SequenceDataset:
    d = Path(data_dir)
    n_users = sum(1 for _ in open(d / "vocab_users.tsv", encoding="utf-8"))
    n_items = sum(1 for _ in open(d / "vocab_items.tsv", encoding="utf-8"))
    sequence_users, sequences = [], []
    for line in open(d / "sequences.tsv", encoding="utf-8"):
        u, items = line.rstrip("\n").split("\t")
        sequence_users.append(int(u))
        sequences.append(np.array(items.split(), dtype=np.int64))
    return SequenceDataset(
        sequence_users=np.array(sequence_users, dtype=np.int64),
        sequences=sequences,
        train=_read_triplets(d / "train.tsv"),
        valid=_read_triplets(d / "valid.tsv"),
        test=_read_triplets(d / "test.tsv"),
        n_users=n_users,
        n_items=n_items,
        min_seq_len=min(len(s) for s in sequences),
    )
