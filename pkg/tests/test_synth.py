import math

import numpy as np
import pytest

from dgsr.corpus import ingest
from dgsr.synth import SynthConfig, generate, simulate, transition_matrix


def test_transition_matrix_rows():
    m = transition_matrix(5, 0.2)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    assert m[4, 0] == pytest.approx(0.8) and m[2, 2] == pytest.approx(0.2)


def test_pure_preference():
    corpus = simulate(SynthConfig(n_users=50, alpha_pref=1.0, alpha_trans=0.0, seed=1))
    for u, seq in enumerate(corpus.sequences):
        assert set(corpus.item_cluster[seq].tolist()) == {corpus.preferred_item_cluster[u]}


def test_pure_transition():
    corpus = simulate(SynthConfig(n_users=50, alpha_pref=0.0, alpha_trans=1.0, stay_prob=0.2, seed=2))
    for seq in corpus.sequences:
        clusters = corpus.item_cluster[seq]
        steps = (clusters[1:] - clusters[:-1]) % 5
        assert set(steps.tolist()) <= {0, 1}


def test_uniform_when_no_signal():
    cfg = SynthConfig(n_users=2000, n_items=50, alpha_pref=0.0, alpha_trans=0.0, seed=3)
    items = np.concatenate(simulate(cfg).sequences)
    counts = np.bincount(items, minlength=50)
    expected = len(items) / 50
    sigma = math.sqrt(expected * (1 - 1 / 50))
    assert np.all(np.abs(counts - expected) <= 5 * sigma)


def test_popularity_skew_creates_tail():
    flat = np.bincount(np.concatenate(simulate(SynthConfig(seed=4)).sequences), minlength=200)
    skewed = np.bincount(np.concatenate(simulate(SynthConfig(seed=4, popularity_skew=1.5)).sequences), minlength=200)
    assert (skewed < 10).sum() > (flat < 10).sum()
    assert skewed.max() > flat.max()


def test_deterministic():
    assert generate(SynthConfig(n_users=30, seed=9)) == generate(SynthConfig(n_users=30, seed=9))
    assert generate(SynthConfig(n_users=30, seed=9)) != generate(SynthConfig(n_users=30, seed=10))


def test_lengths_in_range():
    corpus = simulate(SynthConfig(n_users=100, seq_len_range=(5, 9), seed=5))
    lengths = [len(s) for s in corpus.sequences]
    assert min(lengths) >= 5 and max(lengths) <= 9


def test_round_trip_through_ingest():
    cfg = SynthConfig(n_users=80, seed=6)
    corpus = simulate(cfg)
    log = ingest(corpus.to_tsv(), min_seq_len=3, min_item_freq=1)
    assert log.n_users == 80
    assert len(log) == sum(len(s) for s in corpus.sequences)


@pytest.mark.parametrize(
    "kwargs",
    [dict(alpha_pref=0.7, alpha_trans=0.5), dict(alpha_pref=-0.1), dict(seq_len_range=(5, 2)), dict(n_items=3)],
)
def test_invalid_configs(kwargs):
    with pytest.raises(ValueError):
        SynthConfig(**kwargs)
