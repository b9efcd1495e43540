"""Noise-policy contracts: determinism, length preservation, special-token
immunity, and the tf-idf preference property."""
import numpy as np
import pytest

from flitext.augment import (AugmentPolicy, augment, build_tfidf_table, smoothed_idf)
from flitext.errors import ConfigError, DataError
from flitext.models import CLS_ID, PAD_ID

VOCAB = 40


def seq(n=12, start=3):
    return [CLS_ID] + [start + (i % (VOCAB - start)) for i in range(n - 1)]


def test_policy_validation():
    with pytest.raises(ConfigError):
        AugmentPolicy(kind="swap_adjacent")
    with pytest.raises(ConfigError):
        AugmentPolicy(rate=1.5)


def test_rate_zero_is_identity():
    tokens = seq()
    for kind in ("token_dropout", "uniform_replace"):
        out = augment(tokens, AugmentPolicy(kind=kind, rate=0.0, seed=1), vocab_size=VOCAB)
        assert out == tokens


def test_rate_one_token_dropout_pads_everything_perturbable():
    tokens = seq()
    out = augment(tokens, AugmentPolicy(kind="token_dropout", rate=1.0, seed=1))
    assert out[0] == CLS_ID
    assert all(t == PAD_ID for t in out[1:])


def test_same_seed_reproduces_different_seeds_differ():
    tokens = seq(50)
    policy = AugmentPolicy(kind="uniform_replace", rate=0.5, seed=3)
    a = augment(tokens, policy, vocab_size=VOCAB)
    b = augment(tokens, policy, vocab_size=VOCAB)
    assert a == b
    outs = {tuple(augment(tokens, policy, vocab_size=VOCAB, seed=s)) for s in range(100)}
    assert len(outs) >= 99  # distinct with overwhelming probability


def test_length_preserved_and_specials_immune():
    tokens = [CLS_ID, 5, PAD_ID, 6, PAD_ID]
    for kind in ("token_dropout", "uniform_replace"):
        out = augment(tokens, AugmentPolicy(kind=kind, rate=1.0, seed=2), vocab_size=VOCAB)
        assert len(out) == len(tokens)
        assert out[0] == CLS_ID
        assert out[2] == PAD_ID and out[4] == PAD_ID


def test_uniform_replace_never_introduces_reserved_ids():
    tokens = seq(30)
    out = augment(tokens, AugmentPolicy(kind="uniform_replace", rate=1.0, seed=4),
                  vocab_size=VOCAB)
    assert all(t >= 3 for t in out[1:])


def test_empty_sequence_rejected():
    with pytest.raises(DataError):
        augment([], AugmentPolicy(), vocab_size=VOCAB)


def test_tfidf_needs_table():
    with pytest.raises(ConfigError):
        augment(seq(), AugmentPolicy(kind="tfidf_replace", rate=0.5), vocab_size=VOCAB)


def test_idf_minimum_for_everywhere_token():
    # token 3 in every doc; 4 and 5 in one doc each
    docs = [[3, 4], [3, 5]]
    idf = smoothed_idf(docs, vocab_size=6)
    assert idf[3] == pytest.approx(np.log(3 / 3) + 1)  # the minimum value
    assert idf[3] < idf[4] == idf[5]


def test_tfidf_scores_normalized():
    rng = np.random.default_rng(5)
    docs = [rng.integers(3, VOCAB, size=12).tolist() for _ in range(30)]
    scores = build_tfidf_table(docs, VOCAB)
    assert scores.min() >= 0.0 and scores.max() <= 1.0 + 1e-12
    assert np.all(scores[:3] == 0.0)


def test_tfidf_empty_corpus_rejected():
    with pytest.raises(DataError):
        build_tfidf_table([], VOCAB)


def test_tfidf_rank_property_monte_carlo():
    """A low-score token must be perturbed strictly more often than a
    high-score one (10^4 trials, 5 sigma)."""
    table = np.zeros(VOCAB)
    lo_tok, hi_tok = 10, 20
    table[lo_tok], table[hi_tok] = 0.1, 0.9
    tokens = [CLS_ID, lo_tok, hi_tok]
    policy = AugmentPolicy(kind="tfidf_replace", rate=0.5, seed=0)
    trials = 10_000
    hits_lo = hits_hi = 0
    for s in range(trials):
        out = augment(tokens, policy, vocab_size=VOCAB, tfidf=table, seed=[6, s])
        hits_lo += out[1] != lo_tok
        hits_hi += out[2] != hi_tok
    # expected replace probabilities: rate*(1-score)
    p_lo, p_hi = 0.5 * 0.9, 0.5 * 0.1
    sigma = np.sqrt(p_lo * (1 - p_lo) / trials + p_hi * (1 - p_hi) / trials)
    assert hits_lo / trials - hits_hi / trials > (p_lo - p_hi) - 5 * sigma
    assert hits_lo > hits_hi
