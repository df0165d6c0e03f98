import numpy as np
import pytest

from dgsr.corpus import ingest, ordered_sequences, transition_triplets

# two users, u1 = [i1, i2, i3] and u2 = [i4, i1]
TOY_TSV = "s1\tu1\ti1\t1\ns1\tu1\ti2\t2\ns1\tu1\ti3\t3\ns2\tu2\ti4\t1\ns2\tu2\ti1\t2\n"


@pytest.fixture
def toy_log():
    return ingest(TOY_TSV, min_seq_len=2, min_item_freq=1)


@pytest.fixture
def toy_triplets(toy_log):
    users, seqs = ordered_sequences(toy_log)
    return transition_triplets(users, seqs)


@pytest.fixture
def toy_ids(toy_log):
    ids = {name: toy_log.user_vocab.index(name) for name in ("u1", "u2")}
    ids.update({name: toy_log.item_vocab.index(name) for name in ("i1", "i2", "i3", "i4")})
    return ids


@pytest.fixture
def toy_split_log():
    rows = [
        ("a", "x", "p", 0), ("a", "x", "q", 1), ("a", "x", "r", 2), ("a", "x", "s", 3), ("a", "x", "p", 4),
        ("b", "y", "q", 0), ("b", "y", "s", 1), ("b", "y", "t", 2), ("b", "y", "q", 3),
        ("c", "z", "t", 0), ("c", "z", "p", 1), ("c", "z", "r", 2),
    ]
    return ingest("".join(f"{s}\t{u}\t{i}\t{t}\n" for s, u, i, t in rows), min_seq_len=3, min_item_freq=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
