"""Tokenization, vocabulary, dataset ingestion, synthetic-corpus generation,
embedding initialization, and batch assembly.

Datasets are line-delimited JSON records {"label": int|null, "text": str};
records with a null label route to the unlabeled pool regardless of file.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentPolicy, augment
from .errors import ConfigError, DataError
from .models import CLS_ID, PAD_ID, UNK_ID

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

_RESERVED = ("<pad>", "<cls>", "<unk>")

# fixed tags for derived rng streams
_SHUF_LABELED = 101
_SHUF_UNLABELED = 102
_AUGMENT = 103


def tokenize(text):
    """Lowercase, whitespace split, punctuation broken out as its own tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Bijective token<->id map with reserved ids 0=pad, 1=cls, 2=unk;
    remaining ids are frequency-ordered (ties break lexicographically)."""

    def __init__(self, tokens=()):
        self.id_to_token = list(_RESERVED)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        for t in tokens:
            self.add(t)

    def add(self, token):
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)
        return self.token_to_id[token]

    @classmethod
    def build(cls, texts, max_size=None):
        counts = {}
        for text in texts:
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        if max_size is not None:
            ordered = ordered[: max(0, max_size - len(_RESERVED))]
        return cls(ordered)

    def __len__(self):
        return len(self.id_to_token)

    def encode_tokens(self, tokens):
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        """Drop pads and the classification token; unknown ids are an error."""
        toks = []
        for i in ids:
            if i in (PAD_ID, CLS_ID):
                continue
            if not 0 <= i < len(self.id_to_token):
                raise DataError(f"id {i} outside vocabulary of size {len(self.id_to_token)}")
            toks.append(self.id_to_token[i])
        return " ".join(toks)


def tokenize_and_encode(text, vocab: Vocab, max_len, min_len=1):
    """Prepend the classification token, map tokens to ids (unknown -> unk),
    truncate to max_len, pad up to min_len."""
    ids = [CLS_ID] + vocab.encode_tokens(tokenize(text))
    ids = ids[:max_len]
    if len(ids) < min_len:
        ids = ids + [PAD_ID] * (min_len - len(ids))
    return ids


def pad_to(ids, length):
    if len(ids) >= length:
        return list(ids)
    return list(ids) + [PAD_ID] * (length - len(ids))


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Class-keyword injection corpus. Each example draws background tokens
    uniformly and injects keywords at injection_rate; an injected keyword
    comes from another class's set with probability contamination (cross-class
    noise evidence), otherwise from the example's own class. Labeled-split
    labels are flipped at label_noise. Dev/test stay clean."""

    classes: int = 2
    vocab_size: int = 120
    keywords_per_class: int = 6
    seq_len: tuple = (8, 16)
    injection_rate: float = 0.25
    contamination: float = 0.0
    label_noise: float = 0.0
    n_labeled: int = 20
    n_unlabeled: int = 2000
    n_dev: int = 200
    n_test: int = 400
    seed: int = 0
    keywords: list | None = None

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if not 0.0 < self.injection_rate <= 1.0:
            raise ConfigError(f"injection_rate must be in (0, 1], got {self.injection_rate}")
        if not 0.0 <= self.contamination < 0.5:
            raise ConfigError(f"contamination must be in [0, 0.5), got {self.contamination}")
        if not 0.0 <= self.label_noise < 1.0:
            raise ConfigError(f"label_noise must be in [0, 1), got {self.label_noise}")
        self.seq_len = tuple(self.seq_len)
        if len(self.seq_len) != 2 or self.seq_len[0] < 1 or self.seq_len[0] > self.seq_len[1]:
            raise ConfigError(f"seq_len must be (lo, hi) with 1 <= lo <= hi, got {self.seq_len}")
        if self.keywords is None:
            self.keywords = [
                [f"k{c}w{i}" for i in range(self.keywords_per_class)]
                for c in range(self.classes)
            ]
        if len(self.keywords) != self.classes:
            raise ConfigError(f"need one keyword set per class ({self.classes}), got {len(self.keywords)}")
        flat = [w for ks in self.keywords for w in ks]
        if len(set(flat)) != len(flat):
            raise ConfigError("class keyword sets must be pairwise disjoint")


def _synth_example(spec: SyntheticSpec, label, background, rng):
    length = int(rng.integers(spec.seq_len[0], spec.seq_len[1] + 1))
    words = []
    for _ in range(length):
        if rng.random() < spec.injection_rate:
            c = label
            if spec.contamination > 0 and rng.random() < spec.contamination:
                shift = int(rng.integers(1, spec.classes))
                c = (label + shift) % spec.classes
            ks = spec.keywords[c]
            words.append(ks[int(rng.integers(0, len(ks)))])
        else:
            words.append(background[int(rng.integers(0, len(background)))])
    return " ".join(words)


def generate_synthetic_records(spec: SyntheticSpec):
    """Deterministic {"train","unlabeled","dev","test"} record lists.

    Sequences are deduplicated across all splits so no training item can
    recur in dev/test.
    """
    rng = np.random.default_rng(spec.seed)
    background = [f"w{i:03d}" for i in range(spec.vocab_size)]
    seen = set()

    def fresh(label):
        for _ in range(1000):
            text = _synth_example(spec, label, background, rng)
            if text not in seen:
                seen.add(text)
                return text
        raise DataError("synthetic spec too tight: could not draw a fresh example in 1000 tries")

    def draw(count, labeled, noisy):
        out = []
        for _ in range(count):
            y = int(rng.integers(0, spec.classes))
            text = fresh(y)
            if not labeled:
                out.append({"label": None, "text": text})
                continue
            shown = y
            if noisy and spec.label_noise > 0 and rng.random() < spec.label_noise:
                shift = int(rng.integers(1, spec.classes))
                shown = (y + shift) % spec.classes
            out.append({"label": shown, "text": text})
        return out

    return {
        "train": draw(spec.n_labeled, labeled=True, noisy=True),
        "unlabeled": draw(spec.n_unlabeled, labeled=False, noisy=False),
        "dev": draw(spec.n_dev, labeled=True, noisy=False),
        "test": draw(spec.n_test, labeled=True, noisy=False),
    }


# ---------------------------------------------------------------------------
# bundles
# ---------------------------------------------------------------------------

@dataclass
class DatasetBundle:
    labeled: list = field(default_factory=list)        # (ids, label)
    unlabeled: list = field(default_factory=list)      # ids
    dev: list = field(default_factory=list)
    test: list = field(default_factory=list)
    vocab: Vocab = field(default_factory=Vocab)

    @property
    def n(self):
        return len(self.labeled)

    @property
    def m(self):
        return len(self.unlabeled)

    @property
    def classes(self):
        labels = [y for _, y in self.labeled] + [y for _, y in self.dev] + [y for _, y in self.test]
        return (max(labels) + 1) if labels else 0


def _check_record(rec, where):
    if not isinstance(rec, dict) or "text" not in rec or "label" not in rec:
        raise DataError(f'{where}: record must be {{"label": int|null, "text": str}}')
    if not isinstance(rec["text"], str):
        raise DataError(f"{where}: text must be a string")
    if rec["label"] is not None and not isinstance(rec["label"], int):
        raise DataError(f"{where}: label must be an int or null")
    if rec["label"] is not None and rec["label"] < 0:
        raise DataError(f"{where}: label must be >= 0")


def bundle_from_records(records, max_len, max_vocab=None) -> DatasetBundle:
    """Build the vocabulary from train+unlabeled text, encode every split,
    and verify the test split never overlaps a training pool."""
    for split in ("train", "unlabeled", "dev", "test"):
        for i, rec in enumerate(records.get(split, [])):
            _check_record(rec, f"{split}[{i}]")
    train_texts = [r["text"] for r in records.get("train", [])]
    unlab_texts = [r["text"] for r in records.get("unlabeled", []) if r["label"] is None]
    vocab = Vocab.build(train_texts + unlab_texts, max_size=max_vocab)

    def enc(text):
        return tokenize_and_encode(text, vocab, max_len)

    bundle = DatasetBundle(vocab=vocab)
    for rec in records.get("train", []):
        if rec["label"] is None:
            bundle.unlabeled.append(enc(rec["text"]))
        else:
            bundle.labeled.append((enc(rec["text"]), rec["label"]))
    for rec in records.get("unlabeled", []):
        if rec["label"] is None:
            bundle.unlabeled.append(enc(rec["text"]))
        else:
            bundle.labeled.append((enc(rec["text"]), rec["label"]))
    for rec in records.get("dev", []):
        if rec["label"] is None:
            raise DataError("dev split records must be labeled")
        bundle.dev.append((enc(rec["text"]), rec["label"]))
    for rec in records.get("test", []):
        if rec["label"] is None:
            raise DataError("test split records must be labeled")
        bundle.test.append((enc(rec["text"]), rec["label"]))

    train_hashes = {tuple(ids) for ids, _ in bundle.labeled} | {tuple(ids) for ids in bundle.unlabeled}
    for ids, _ in bundle.test:
        if tuple(ids) in train_hashes:
            raise DataError("a test-split example also appears in a training pool")
    return bundle


def generate_synthetic(spec: SyntheticSpec, max_len) -> DatasetBundle:
    return bundle_from_records(generate_synthetic_records(spec), max_len)


def load_jsonl(path):
    """One JSON record per line; malformed lines are reported by number."""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
            _check_record(rec, f"{path}:{lineno}")
            records.append(rec)
    return records


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def load_bundle(train_path, dev_path, test_path, max_len, unlabeled_path=None,
                max_vocab=None) -> DatasetBundle:
    records = {
        "train": load_jsonl(train_path),
        "unlabeled": load_jsonl(unlabeled_path) if unlabeled_path else [],
        "dev": load_jsonl(dev_path),
        "test": load_jsonl(test_path),
    }
    return bundle_from_records(records, max_len, max_vocab=max_vocab)


def load_embeddings(path, vocab: Vocab, dim, seed=0):
    """Standard text word-vector format: token then `dim` floats per line.

    Tokens present in the vocabulary take their file rows; everything else is
    seeded uniform(-0.05, 0.05); the pad row is forced to zero.
    """
    rng = np.random.default_rng([seed, 7])
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ConfigError(
                    f"{path}:{lineno}: expected {dim} values for {token!r}, got {len(values)}"
                )
            if token in vocab.token_to_id:
                try:
                    matrix[vocab.token_to_id[token]] = [float(v) for v in values]
                except ValueError as e:
                    raise DataError(f"{path}:{lineno}: non-numeric embedding value") from e
    matrix[PAD_ID] = 0.0
    return matrix


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def _chunks(seq, size):
    return [seq[i : i + size] for i in range(0, len(seq), size)]


def steps_per_epoch(bundle: DatasetBundle, labeled_batch, unsup_ratio, supervised=False):
    labeled_steps = math.ceil(len(bundle.labeled) / labeled_batch)
    if supervised:
        return labeled_steps
    return max(labeled_steps,
               math.ceil(len(bundle.unlabeled) / (labeled_batch * unsup_ratio)))


def make_batches(bundle: DatasetBundle, labeled_batch, unsup_ratio, policy: AugmentPolicy,
                 seed, epoch, min_len=1, tfidf=None, supervised=False):
    """Assemble one epoch of (labeled batch, unlabeled pair batch) steps.

    Both pools reshuffle per epoch under derived seeds. Steps per epoch is
    whichever pool implies more (labeled at labeled_batch, unlabeled at
    labeled_batch * unsup_ratio); the shorter pool cycles through its shuffled
    order. When the labeled pool alone sets the step count its last batch may
    be ragged; when it is cycled every batch is full. Each unlabeled item u is
    paired with a = augment(u) under a per-item derived seed; batches pad to
    the batch maximum, floored at min_len.
    """
    if labeled_batch < 1:
        raise ConfigError(f"labeled batch size must be >= 1, got {labeled_batch}")
    if not bundle.labeled:
        raise DataError("empty labeled pool")
    if not supervised and not bundle.unlabeled:
        raise DataError("semi-supervised batching needs a nonempty unlabeled pool")

    rng_l = np.random.default_rng([seed, _SHUF_LABELED, epoch])
    order_l = rng_l.permutation(len(bundle.labeled))
    labeled = [bundle.labeled[i] for i in order_l]
    labeled_steps = math.ceil(len(labeled) / labeled_batch)

    batch_u = labeled_batch * unsup_ratio
    unlabeled_order = []
    steps = labeled_steps
    if not supervised:
        rng_u = np.random.default_rng([seed, _SHUF_UNLABELED, epoch])
        unlabeled_order = rng_u.permutation(len(bundle.unlabeled))
        steps = max(labeled_steps, math.ceil(len(unlabeled_order) / batch_u))

    if steps > labeled_steps:
        reps = math.ceil(steps * labeled_batch / len(labeled))
        extended = labeled * reps
        labeled_batches = [extended[s * labeled_batch : (s + 1) * labeled_batch]
                           for s in range(steps)]
    else:
        labeled_batches = _chunks(labeled, labeled_batch)

    out = []
    cursor = 0
    for step_items in labeled_batches:
        width = max([min_len] + [len(ids) for ids, _ in step_items])
        lab_batch = ([pad_to(ids, width) for ids, _ in step_items],
                     [y for _, y in step_items])
        if supervised:
            out.append((lab_batch, None))
            continue
        pairs = []
        for _ in range(batch_u):
            u = bundle.unlabeled[unlabeled_order[cursor % len(unlabeled_order)]]
            a = augment(u, policy, vocab_size=len(bundle.vocab), tfidf=tfidf,
                        seed=[seed, _AUGMENT, epoch, cursor])
            pairs.append((u, a))
            cursor += 1
        uw = max([min_len] + [len(u) for u, _ in pairs])
        out.append((lab_batch, [(pad_to(u, uw), pad_to(a, uw)) for u, a in pairs]))
    return out
