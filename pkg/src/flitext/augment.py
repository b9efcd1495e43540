"""Deterministic token-level noise generators for the consistency branch.

These stand in for back-translation: the consistency objective only needs a
seeded, roughly semantics-preserving noise channel. The classification token
(position 0) and pad positions are never perturbed, and length is preserved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .models import CLS_ID, PAD_ID

AUGMENT_KINDS = ("token_dropout", "uniform_replace", "tfidf_replace")

FIRST_REGULAR_ID = 3  # ids below this are reserved (pad, cls, unk)


@dataclass
class AugmentPolicy:
    kind: str = "token_dropout"
    rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in AUGMENT_KINDS:
            raise ConfigError(f"augment kind must be one of {AUGMENT_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"augment rate must be in [0, 1], got {self.rate}")


def _rng(policy: AugmentPolicy, seed_override):
    seed = policy.seed if seed_override is None else seed_override
    return np.random.default_rng(seed)


def _perturbable(tokens):
    """Mask of positions that may change: not position 0, not pad, not cls."""
    ids = np.asarray(tokens)
    mask = (ids != PAD_ID) & (ids != CLS_ID)
    mask[0] = False
    return mask


def augment(tokens, policy: AugmentPolicy, vocab_size=None, tfidf=None, seed=None):
    """Return a noised copy of `tokens` (same length).

    token_dropout: each perturbable token becomes pad with prob rate.
    uniform_replace: swapped for a uniformly random non-reserved vocab id.
    tfidf_replace: swap probability is rate * (1 - normalized tf-idf score),
    so low-information tokens are replaced preferentially; needs `tfidf`.
    Identical (policy, seed, input) always produce identical output.
    """
    if not len(tokens):
        raise DataError("cannot augment an empty token sequence")
    rng = _rng(policy, seed)
    out = np.array(tokens, dtype=np.int64)
    mask = _perturbable(out)
    if policy.kind == "token_dropout":
        hit = mask & (rng.random(out.shape) < policy.rate)
        out[hit] = PAD_ID
        return out.tolist()
    if vocab_size is None or vocab_size <= FIRST_REGULAR_ID:
        raise ConfigError(f"{policy.kind} needs vocab_size > {FIRST_REGULAR_ID}")
    if policy.kind == "uniform_replace":
        hit = mask & (rng.random(out.shape) < policy.rate)
    else:  # tfidf_replace
        if tfidf is None:
            raise ConfigError("tfidf_replace needs a tf-idf score table")
        scores = np.asarray(tfidf, dtype=float)
        tok_scores = np.where(out < scores.shape[0], scores[np.minimum(out, scores.shape[0] - 1)], 0.0)
        hit = mask & (rng.random(out.shape) < policy.rate * (1.0 - tok_scores))
    replacements = rng.integers(FIRST_REGULAR_ID, vocab_size, size=out.shape)
    out[hit] = replacements[hit]
    return out.tolist()


def _term_stats(docs, vocab_size):
    docs = list(docs)
    if not docs:
        raise DataError("cannot build a tf-idf table from an empty corpus")
    counts = np.zeros(vocab_size, dtype=float)
    doc_freq = np.zeros(vocab_size, dtype=float)
    for doc in docs:
        ids = np.asarray(doc, dtype=np.int64)
        ids = ids[ids >= FIRST_REGULAR_ID]
        if ids.size:
            occ = np.bincount(ids, minlength=vocab_size)[:vocab_size]
            counts += occ
            doc_freq += occ > 0
    return counts, doc_freq, len(docs)


def smoothed_idf(docs, vocab_size):
    """idf = ln((1+D)/(1+df)) + 1; tokens in every document get the minimum."""
    _, doc_freq, n_docs = _term_stats(docs, vocab_size)
    return np.log((1.0 + n_docs) / (1.0 + doc_freq)) + 1.0


def build_tfidf_table(docs, vocab_size):
    """Per-token-id tf-idf scores normalized to [0, 1] over the corpus.

    tf is the corpus-level term frequency; idf is the smoothed form above.
    Reserved ids and tokens absent from the corpus score 0.
    """
    docs = list(docs)
    counts, doc_freq, n_docs = _term_stats(docs, vocab_size)
    total = counts.sum()
    if total == 0:
        raise DataError("corpus contains no regular tokens")
    tf = counts / total
    idf = np.log((1.0 + n_docs) / (1.0 + doc_freq)) + 1.0
    scores = tf * idf
    scores[:FIRST_REGULAR_ID] = 0.0
    top = scores.max()
    if top > 0:
        scores = scores / top
    return scores
