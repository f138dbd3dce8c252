"""Dataset loading, validation, class splits, and slot-value dictionaries.

The on-disk format is one JSON object per line with fields ``tokens``
(array of strings), ``intent`` (string), optional ``slots`` (array of BIO
tags, same length as tokens), and optional ``id`` (auto-assigned from the
line index when absent). Files are UTF-8.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np


class DatasetFormatError(Exception):
    """Malformed record; carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BioValidationError(DatasetFormatError):
    """Invalid BIO tag sequence; carries utterance id and token position."""

    def __init__(self, message, utterance_id=None, position=None, line=None):
        self.utterance_id = utterance_id
        self.position = position
        if utterance_id is not None:
            message = f"utterance {utterance_id!r}, position {position}: {message}"
        super().__init__(message, line=line)


@dataclass(frozen=True)
class Vocab:
    """Bidirectional label <-> integer id map (ids assigned by sorted label)."""

    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.labels)})

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "Vocab":
        return cls(tuple(sorted(set(labels))))

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self._index

    def id(self, label: str) -> int:
        return self._index[label]

    def label(self, idx: int) -> str:
        return self.labels[idx]


@dataclass(frozen=True)
class Utterance:
    """One token sequence with an intent id and optional aligned slot ids."""

    tokens: tuple
    intent: int
    slots: Optional[tuple]  # None marks an intent-only utterance
    id: str

    def __post_init__(self):
        if self.slots is not None and len(self.slots) != len(self.tokens):
            raise DatasetFormatError(
                f"utterance {self.id!r}: {len(self.slots)} slots for "
                f"{len(self.tokens)} tokens"
            )


@dataclass(frozen=True)
class Dataset:
    utterances: tuple
    intent_vocab: Vocab
    slot_vocab: Vocab

    def intent_counts(self) -> dict:
        counts = {}
        for u in self.utterances:
            counts[u.intent] = counts.get(u.intent, 0) + 1
        return counts

    def by_intent(self, intent_id: int) -> list:
        return [u for u in self.utterances if u.intent == intent_id]

    def slot_label(self, idx: int) -> str:
        return self.slot_vocab.label(idx)


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint intent-id sets for meta-train / meta-test / dev."""

    meta_train: frozenset
    meta_test: frozenset
    dev: frozenset
    seed: int

    def __post_init__(self):
        if self.meta_train & self.meta_test or self.meta_train & self.dev or self.meta_test & self.dev:
            raise ValueError("split sets must be pairwise disjoint")
        if len(self.meta_train) < 3 or len(self.meta_test) < 3:
            raise ValueError("meta_train and meta_test each need >= 3 intents")


@dataclass(frozen=True)
class SlotValueDict:
    """slot type -> tuple of distinct observed values (token tuples)."""

    entries: dict


def validate_bio(labels, utterance_id="?", line=None) -> None:
    """Raise BioValidationError unless labels form a valid BIO sequence."""
    prev_type = None
    for pos, tag in enumerate(labels):
        if tag == "O":
            prev_type = None
        elif tag.startswith("B-") and len(tag) > 2:
            prev_type = tag[2:]
        elif tag.startswith("I-") and len(tag) > 2:
            if prev_type != tag[2:]:
                raise BioValidationError(
                    f"I-{tag[2:]} not preceded by B-{tag[2:]} or I-{tag[2:]}",
                    utterance_id=utterance_id, position=pos, line=line,
                )
        else:
            raise BioValidationError(
                f"unknown tag {tag!r}", utterance_id=utterance_id,
                position=pos, line=line,
            )


def bio_spans(labels):
    """(start, end_inclusive, type) spans of a valid BIO label sequence."""
    spans = []
    start = None
    cur = None
    for i, tag in enumerate(labels):
        if tag.startswith("B-"):
            if start is not None:
                spans.append((start, i - 1, cur))
            start, cur = i, tag[2:]
        elif tag.startswith("I-") and start is not None and cur == tag[2:]:
            continue
        else:
            if start is not None:
                spans.append((start, i - 1, cur))
            start, cur = None, None
    if start is not None:
        spans.append((start, len(labels) - 1, cur))
    return spans


def load_dataset(path) -> Dataset:
    """Load and validate a line-oriented dataset file."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"invalid JSON ({e.msg})", line=lineno) from e
            if not isinstance(rec, dict):
                raise DatasetFormatError("record is not an object", line=lineno)
            records.append((lineno, rec))
    return _dataset_from_records(records)


def _dataset_from_records(records) -> Dataset:
    intent_labels = set()
    slot_labels = set()
    raw = []
    seen_ids = set()
    for lineno, rec in records:
        tokens = rec.get("tokens")
        intent = rec.get("intent")
        if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
            raise DatasetFormatError("field 'tokens' must be a non-empty string array", line=lineno)
        if not isinstance(intent, str):
            raise DatasetFormatError("field 'intent' must be a string", line=lineno)
        uid = rec.get("id")
        if uid is None:
            uid = str(lineno - 1)
        elif not isinstance(uid, str):
            raise DatasetFormatError("field 'id' must be a string", line=lineno)
        if uid in seen_ids:
            raise DatasetFormatError(f"duplicate utterance id {uid!r}", line=lineno)
        seen_ids.add(uid)
        slots = rec.get("slots")
        if slots is not None:
            if not isinstance(slots, list) or not all(isinstance(s, str) for s in slots):
                raise DatasetFormatError("field 'slots' must be a string array", line=lineno)
            if len(slots) != len(tokens):
                raise DatasetFormatError(
                    f"{len(slots)} slots for {len(tokens)} tokens", line=lineno)
            validate_bio(slots, utterance_id=uid, line=lineno)
            slot_labels.update(slots)
        intent_labels.add(intent)
        raw.append((tokens, intent, slots, uid))

    intent_vocab = Vocab.from_labels(intent_labels)
    slot_vocab = Vocab.from_labels(slot_labels)
    utterances = tuple(
        Utterance(
            tokens=tuple(tokens),
            intent=intent_vocab.id(intent),
            slots=None if slots is None else tuple(slot_vocab.id(s) for s in slots),
            id=uid,
        )
        for tokens, intent, slots, uid in raw
    )
    return Dataset(utterances=utterances, intent_vocab=intent_vocab, slot_vocab=slot_vocab)


def dataset_records(dataset: Dataset):
    """Dataset back into plain record dicts (inverse of loading)."""
    out = []
    for u in dataset.utterances:
        rec = {"tokens": list(u.tokens), "intent": dataset.intent_vocab.label(u.intent), "id": u.id}
        if u.slots is not None:
            rec["slots"] = [dataset.slot_vocab.label(s) for s in u.slots]
        out.append(rec)
    return out


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in dataset_records(dataset):
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def build_token_vocab(dataset: Dataset, unk: str = "<unk>") -> Vocab:
    """Token vocabulary over the whole dataset, with a reserved UNK label.

    Covers all splits so unseen few-shot classes keep distinct (randomly
    initialised) token embeddings; only genuinely novel tokens map to UNK.
    """
    tokens = {t for u in dataset.utterances for t in u.tokens}
    tokens.discard(unk)
    return Vocab(tuple([unk] + sorted(tokens)))


def token_ids(vocab: Vocab, tokens, unk: str = "<unk>") -> list:
    """Map tokens to ids, sending out-of-vocabulary tokens to UNK."""
    fallback = vocab.id(unk)
    return [vocab.id(t) if t in vocab else fallback for t in tokens]


def make_split_snips_style(dataset: Dataset, n_train: int = 4, n_test: int = 3,
                           seed: int = 0) -> SplitSpec:
    """Random n_train / n_test intent partition; leftovers become dev."""
    if n_train < 3 or n_test < 3:
        raise ValueError("each split needs at least 3 intent classes")
    classes = sorted(set(u.intent for u in dataset.utterances))
    if n_train + n_test > len(classes):
        raise ValueError(
            f"need {n_train + n_test} intent classes, dataset has {len(classes)}")
    rng = np.random.default_rng(seed)
    perm = [classes[i] for i in rng.permutation(len(classes))]
    return SplitSpec(
        meta_train=frozenset(perm[:n_train]),
        meta_test=frozenset(perm[n_train:n_train + n_test]),
        dev=frozenset(perm[n_train + n_test:]),
        seed=seed,
    )


def make_split_atis_style(dataset: Dataset, min_count: int = 15, n_train: int = 5,
                          n_test: int = 7, seed: int = 0) -> SplitSpec:
    """Filter to classes with strictly more than ``min_count`` examples,
    then partition into n_train / n_test / remainder-as-dev."""
    if n_train < 3 or n_test < 3:
        raise ValueError("each split needs at least 3 intent classes")
    counts = dataset.intent_counts()
    eligible = sorted(c for c, n in counts.items() if n > min_count)
    if n_train + n_test > len(eligible):
        raise ValueError(
            f"only {len(eligible)} classes have more than {min_count} examples; "
            f"need {n_train + n_test}")
    rng = np.random.default_rng(seed)
    perm = [eligible[i] for i in rng.permutation(len(eligible))]
    return SplitSpec(
        meta_train=frozenset(perm[:n_train]),
        meta_test=frozenset(perm[n_train:n_train + n_test]),
        dev=frozenset(perm[n_train + n_test:]),
        seed=seed,
    )


def save_split(split: SplitSpec, dataset: Dataset, path) -> None:
    rec = {
        "meta_train": sorted(dataset.intent_vocab.label(i) for i in split.meta_train),
        "meta_test": sorted(dataset.intent_vocab.label(i) for i in split.meta_test),
        "dev": sorted(dataset.intent_vocab.label(i) for i in split.dev),
        "seed": split.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(rec) + "\n")


def load_split(dataset: Dataset, path) -> SplitSpec:
    with open(path, encoding="utf-8") as fh:
        rec = json.loads(fh.read())
    def ids(key):
        try:
            return frozenset(dataset.intent_vocab.id(s) for s in rec[key])
        except KeyError as e:
            raise DatasetFormatError(f"split references unknown intent {e}") from e
    return SplitSpec(meta_train=ids("meta_train"), meta_test=ids("meta_test"),
                     dev=ids("dev"), seed=int(rec.get("seed", 0)))


def build_slot_value_dict(dataset: Dataset, split: SplitSpec) -> SlotValueDict:
    """Distinct slot-span values observed in meta-train-intent utterances.

    Keys are bare slot types (no B-/I- prefix); values are whole token
    sequences, first-seen order, deduplicated.
    """
    entries = {}
    for u in dataset.utterances:
        if u.intent not in split.meta_train or u.slots is None:
            continue
        labels = [dataset.slot_vocab.label(s) for s in u.slots]
        for start, end, stype in bio_spans(labels):
            value = tuple(u.tokens[start:end + 1])
            bucket = entries.setdefault(stype, [])
            if value not in bucket:
                bucket.append(value)
    return SlotValueDict(entries={k: tuple(v) for k, v in entries.items()})
