"""Episodic sampling with dynamic way and frequency-proportional shots.

Each episode draws a class subset (the way), a target support size under
the kmax budget, allocates support shots proportionally to class frequency
with largest-remainder rounding (floor 1, cap class size - 1), and fills
query sets from the leftovers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, Utterance


class SamplingError(Exception):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    kmax: int = 20
    max_query_per_class: int = 10
    min_way: int = 3

    def __post_init__(self):
        if self.kmax < self.min_way:
            raise ValueError("kmax must be at least min_way")
        if self.min_way < 1 or self.max_query_per_class < 1:
            raise ValueError("min_way and max_query_per_class must be positive")


@dataclass(frozen=True)
class Episode:
    support: tuple
    query: tuple
    intent_classes: tuple
    kmax: int


def _allocate_shots(class_ids, freqs, target, quota_weights):
    """Largest-remainder apportionment of ``target`` support shots.

    Bounds: every class gets at least 1 and at most freq - 1. Remainder
    ties break toward the lower class id.
    """
    total_w = sum(quota_weights)
    quotas = [target * w / total_w for w in quota_weights]
    caps = [f - 1 for f in freqs]
    shots = [min(max(int(q), 1), cap) for q, cap in zip(quotas, caps)]
    target = min(max(target, len(class_ids)), sum(caps))

    while sum(shots) < target:
        best = None
        for i, cid in enumerate(class_ids):
            if shots[i] >= caps[i]:
                continue
            key = (-(quotas[i] - shots[i]), cid)
            if best is None or key < best[0]:
                best = (key, i)
        shots[best[1]] += 1
    while sum(shots) > target:
        worst = None
        for i, cid in enumerate(class_ids):
            if shots[i] <= 1:
                continue
            # smallest remainder loses a unit; lower ids win ties (keep theirs)
            key = (quotas[i] - shots[i], -cid)
            if worst is None or key < worst[0]:
                worst = (key, i)
        shots[worst[1]] -= 1
    return shots


def class_index(dataset: Dataset) -> dict:
    """intent id -> list of utterances; precompute for bulk sampling."""
    members = {}
    for u in dataset.utterances:
        members.setdefault(u.intent, []).append(u)
    return members


def sample_episode(dataset: Dataset, classes, cfg: SamplerConfig,
                   rng: np.random.Generator, max_retries: int = 20,
                   index: dict | None = None) -> Episode:
    """Draw one support/query episode over the given intent-id pool."""
    pool = sorted(classes)
    if len(pool) < cfg.min_way:
        raise SamplingError(
            f"need at least {cfg.min_way} classes, got {len(pool)}")
    all_members = index if index is not None else class_index(dataset)
    members = {c: all_members.get(c, []) for c in pool}

    high = min(len(pool), cfg.kmax)
    for _ in range(max_retries + 1):
        way = int(rng.integers(cfg.min_way, high + 1))
        chosen = sorted(int(pool[i]) for i in rng.choice(len(pool), size=way, replace=False))
        if all(len(members[c]) >= 2 for c in chosen):
            break
    else:
        raise SamplingError("could not sample a class subset where every "
                            "class has at least 2 examples")

    target = int(rng.integers(way, cfg.kmax + 1))
    freqs = [len(members[c]) for c in chosen]
    shots = _allocate_shots(chosen, freqs, target, freqs)

    support, query = [], []
    for c, n_shot in zip(chosen, shots):
        utts = members[c]
        perm = rng.permutation(len(utts))
        support.extend(utts[i] for i in perm[:n_shot])
        n_query = min(cfg.max_query_per_class, len(utts) - n_shot)
        query.extend(utts[i] for i in perm[n_shot:n_shot + n_query])

    return Episode(support=tuple(support), query=tuple(query),
                   intent_classes=tuple(chosen), kmax=cfg.kmax)


@dataclass(frozen=True)
class ShotStatistics:
    mean_intent_shots: float
    mean_slot_shots: float | None  # typed (non-O) classes only
    intent_pairs: int
    slot_pairs: int


def slot_shot_statistics(episodes, dataset: Dataset) -> ShotStatistics:
    """Mean support shots per intent class and per typed slot class.

    Intent shots count support utterances per (episode, intent) pair; slot
    shots count support token occurrences per (episode, typed slot class)
    pair. The O class is excluded: it is background, not a slot.
    """
    if not episodes:
        raise ValueError("empty episode list")
    o_id = dataset.slot_vocab.id("O") if "O" in dataset.slot_vocab else None
    intent_total = intent_pairs = 0
    slot_total = slot_pairs = 0
    for ep in episodes:
        per_intent = {}
        per_slot = {}
        for u in ep.support:
            per_intent[u.intent] = per_intent.get(u.intent, 0) + 1
            if u.slots is None:
                continue
            for s in u.slots:
                if s == o_id:
                    continue
                per_slot[s] = per_slot.get(s, 0) + 1
        intent_total += sum(per_intent.values())
        intent_pairs += len(per_intent)
        slot_total += sum(per_slot.values())
        slot_pairs += len(per_slot)
    return ShotStatistics(
        mean_intent_shots=intent_total / intent_pairs,
        mean_slot_shots=(slot_total / slot_pairs) if slot_pairs else None,
        intent_pairs=intent_pairs,
        slot_pairs=slot_pairs,
    )


def save_episode(episode: Episode, dataset: Dataset, path) -> None:
    """Serialize in the corpus record format plus a role field."""
    with open(path, "w", encoding="utf-8") as fh:
        for role, utts in (("support", episode.support), ("query", episode.query)):
            for u in utts:
                rec = {"tokens": list(u.tokens),
                       "intent": dataset.intent_vocab.label(u.intent),
                       "id": u.id, "role": role}
                if u.slots is not None:
                    rec["slots"] = [dataset.slot_vocab.label(s) for s in u.slots]
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_episode(dataset: Dataset, path, kmax: int) -> Episode:
    support, query = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            u = Utterance(
                tokens=tuple(rec["tokens"]),
                intent=dataset.intent_vocab.id(rec["intent"]),
                slots=None if "slots" not in rec else tuple(
                    dataset.slot_vocab.id(s) for s in rec["slots"]),
                id=rec["id"],
            )
            (support if rec["role"] == "support" else query).append(u)
    classes = tuple(sorted(set(u.intent for u in support)))
    return Episode(support=tuple(support), query=tuple(query),
                   intent_classes=classes, kmax=kmax)
