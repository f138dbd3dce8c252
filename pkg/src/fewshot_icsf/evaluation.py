"""Prediction metrics, multi-episode evaluation, and seed aggregation.

Span F1 follows exact-boundary, exact-type matching, micro-averaged within
an episode; episodes where neither gold nor prediction contain any span
are excluded from the F1 mean and counted separately. Reported spreads
are sample standard deviations over per-seed means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .augment import AugmentResources, AugmentationConfig, apply_augmentation
from .corpus import Dataset, SplitSpec, bio_spans, token_ids
from .encoder import EncoderParams, encode
from .episode import SamplerConfig, sample_episode
from .protonet import compute_prototypes, predict_intent, predict_slots
from .syntax import SyntaxConfig, annotate, concat_features, SyntaxMode
from .trainer import (RunResources, _RNG_EVAL, derived_rng, encode_utterances,
                      _with_slot_features)


def ic_accuracy(predictions, gold) -> float:
    """Exact-match fraction over query utterances."""
    if len(predictions) != len(gold):
        raise ValueError("prediction/gold length mismatch")
    if not gold:
        raise ValueError("empty query set")
    return sum(1 for p, g in zip(predictions, gold) if p == g) / len(gold)


def span_counts(pred_labels, gold_labels) -> tuple:
    """(tp, fp, fn) over exact (start, end, type) span matches."""
    if len(pred_labels) != len(gold_labels):
        raise ValueError("prediction/gold length mismatch")
    pred = bio_spans(pred_labels)
    gold = list(bio_spans(gold_labels))
    tp = fp = 0
    for s in pred:
        if s in gold:
            tp += 1
            gold.remove(s)
        else:
            fp += 1
    return tp, fp, len(gold)


def slot_f1(pred_seqs, gold_seqs):
    """Micro span F1 across utterances; None when no spans exist anywhere."""
    tp = fp = fn = 0
    for pred, gold in zip(pred_seqs, gold_seqs):
        a, b, c = span_counts(pred, gold)
        tp, fp, fn = tp + a, fp + b, fn + c
    if tp + fp + fn == 0:
        return None
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class EpisodeMetrics:
    ic_accuracy: float
    slot_f1: float | None
    support_size: int
    query_size: int


def evaluate(params: EncoderParams, dataset: Dataset, split: SplitSpec,
             sampler_cfg: SamplerConfig, n_episodes: int,
             resources: RunResources,
             test_augmentation: AugmentationConfig | None = None,
             syntax: SyntaxConfig | None = None,
             seed: int = 0) -> list:
    """Score ``n_episodes`` test episodes with frozen parameters.

    Support sets are optionally augmented first (meta-test levels only);
    prototypes come from the (augmented) support, predictions from the
    untouched query set. Episode sampling and augmentation use separate
    seed streams, so variants with and without test-time augmentation are
    scored on identical episodes.
    """
    rng = derived_rng(seed, _RNG_EVAL)
    aug_rng = derived_rng(seed, _RNG_EVAL + 1)
    out = []
    for _ in range(n_episodes):
        ep = sample_episode(dataset, split.meta_test, sampler_cfg, rng,
                            index=resources.index)
        if test_augmentation is not None:
            ep = apply_augmentation(ep, "meta-test", test_augmentation,
                                    resources.augment, aug_rng)
        with ad.no_grad():
            enc_sup = encode_utterances(params, ep.support, resources.token_vocab)
            if syntax is not None and syntax.wants_concat:
                ann_sup = [annotate(u.tokens, resources.tagger) for u, _ in enc_sup]
                protos = compute_prototypes(
                    _with_slot_features(enc_sup, ann_sup, syntax))
            else:
                protos = compute_prototypes(enc_sup)

            pred_intents, gold_intents = [], []
            pred_seqs, gold_seqs = [], []
            for u in ep.query:
                enc = encode(params, token_ids(resources.token_vocab, u.tokens))
                pred_intents.append(predict_intent(protos, enc.utterance_embedding))
                gold_intents.append(u.intent)
                if u.slots is None or protos.slot_matrix is None:
                    continue
                toks = enc.token_embeddings
                if syntax is not None and syntax.wants_concat:
                    ann = annotate(u.tokens, resources.tagger)
                    toks = concat_features(
                        toks, ann,
                        SyntaxMode.FEATURE_CONCAT in syntax.mode,
                        SyntaxMode.NOUN_CHUNK_FEATURES in syntax.mode)
                pred_seqs.append(predict_slots(protos, toks, dataset.slot_vocab))
                gold_seqs.append([dataset.slot_vocab.label(s) for s in u.slots])

        out.append(EpisodeMetrics(
            ic_accuracy=ic_accuracy(pred_intents, gold_intents),
            slot_f1=slot_f1(pred_seqs, gold_seqs),
            support_size=len(ep.support), query_size=len(ep.query)))
    return out


@dataclass(frozen=True)
class SeedResult:
    seed: int
    ic_mean: float
    sf_mean: float | None
    n_episodes: int
    n_excluded_f1: int


def summarize_episodes(metrics, seed: int = 0) -> SeedResult:
    """Per-seed means; no-span episodes drop out of the F1 mean."""
    if not metrics:
        raise ValueError("no episode metrics to summarize")
    f1s = [m.slot_f1 for m in metrics if m.slot_f1 is not None]
    return SeedResult(
        seed=seed,
        ic_mean=float(np.mean([m.ic_accuracy for m in metrics])),
        sf_mean=float(np.mean(f1s)) if f1s else None,
        n_episodes=len(metrics),
        n_excluded_f1=len(metrics) - len(f1s),
    )


@dataclass(frozen=True)
class MetricsSummary:
    ic_mean: float
    ic_std: float
    sf_mean: float
    sf_std: float
    n_episodes: int
    n_seeds: int
    per_seed: tuple


def _mean_std(values) -> tuple:
    mean = float(np.mean(values))
    std = 0.0 if len(values) < 2 else float(np.std(values, ddof=1))
    return mean, std


def aggregate(seed_results) -> MetricsSummary:
    """Mean and sample std (n - 1) of per-seed means; one seed gives std 0."""
    seed_results = list(seed_results)
    if not seed_results:
        raise ValueError("need at least one seed result")
    ic_mean, ic_std = _mean_std([r.ic_mean for r in seed_results])
    sf_values = [r.sf_mean for r in seed_results if r.sf_mean is not None]
    if sf_values:
        sf_mean, sf_std = _mean_std(sf_values)
    else:
        sf_mean, sf_std = math.nan, 0.0
    return MetricsSummary(
        ic_mean=ic_mean, ic_std=ic_std, sf_mean=sf_mean, sf_std=sf_std,
        n_episodes=sum(r.n_episodes for r in seed_results),
        n_seeds=len(seed_results), per_seed=tuple(seed_results))
