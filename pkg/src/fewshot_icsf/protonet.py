"""Class prototypes and distance-softmax losses for joint IC and SF.

Intent prototypes average utterance-level embeddings per intent class;
slot prototypes average token-level embeddings per slot class over the
whole support set. Queries are scored by a softmax over negated distances
to the available prototypes; classes absent from the support set are
simply excluded from the softmax.

Squared Euclidean distance is the default; plain Euclidean is available
behind the ``squared=False`` switch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class PrototypeError(Exception):
    pass


@dataclass
class PrototypeSet:
    """Per-class centroids, ids sorted ascending, with contributor counts."""

    intent_ids: tuple
    intent_matrix: Tensor | None  # (n_intents, d)
    intent_counts: tuple
    slot_ids: tuple
    slot_matrix: Tensor | None    # (n_slots, d_slot)
    slot_counts: tuple

    def intent_row(self, intent_id: int) -> int:
        return self.intent_ids.index(intent_id)

    def slot_row(self, slot_id: int) -> int:
        return self.slot_ids.index(slot_id)


@dataclass
class LossBreakdown:
    """Per-component episode loss; ``total`` carries the gradient graph."""

    l_ic: float
    l_slots: float
    l_contrastive_ic: float = 0.0
    l_contrastive_sf: float = 0.0
    l_pos: float = 0.0
    l_total: float = 0.0
    skipped_slot_tokens: int = 0
    total_tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def log_record(self) -> dict:
        return {"l_ic": self.l_ic, "l_slots": self.l_slots,
                "l_cl_ic": self.l_contrastive_ic, "l_cl_sf": self.l_contrastive_sf,
                "l_pos": self.l_pos, "l_total": self.l_total}


def _grouped_means(rows: Tensor, labels) -> tuple:
    """Mean embedding per label; returns (ids, matrix, counts)."""
    by_label = {}
    for i, lab in enumerate(labels):
        by_label.setdefault(int(lab), []).append(i)
    ids = tuple(sorted(by_label))
    means = [ad.take_rows(rows, by_label[c]).mean(axis=0, keepdims=True)
             for c in ids]
    counts = tuple(len(by_label[c]) for c in ids)
    return ids, ad.concat(means, axis=0), counts


def compute_prototypes(encoded_support) -> PrototypeSet:
    """Build intent and slot prototypes from (Utterance, EncoderOutput) pairs.

    Intent-only utterances contribute to intent prototypes only. A class
    with no contributors is absent from the result, never a zero vector.
    """
    if not encoded_support:
        raise PrototypeError("empty support set")
    utt_rows = ad.concat(
        [out.utterance_embedding.reshape((1, -1)) for _, out in encoded_support],
        axis=0)
    intent_labels = [u.intent for u, _ in encoded_support]
    intent_ids, intent_matrix, intent_counts = _grouped_means(utt_rows, intent_labels)

    token_parts = []
    slot_labels = []
    for u, out in encoded_support:
        if u.slots is None:
            continue
        token_parts.append(out.token_embeddings)
        slot_labels.extend(u.slots)
    if token_parts:
        slot_ids, slot_matrix, slot_counts = _grouped_means(
            ad.concat(token_parts, axis=0), slot_labels)
    else:
        slot_ids, slot_matrix, slot_counts = (), None, ()
    return PrototypeSet(intent_ids=intent_ids, intent_matrix=intent_matrix,
                        intent_counts=intent_counts, slot_ids=slot_ids,
                        slot_matrix=slot_matrix, slot_counts=slot_counts)


def distances(queries: Tensor, protos: Tensor, squared: bool = True) -> Tensor:
    """Pairwise (squared) Euclidean distances, shape (m, n_protos)."""
    q2 = (queries * queries).sum(axis=1, keepdims=True)
    p2 = (protos * protos).sum(axis=1, keepdims=True)
    d2 = q2 + p2.T - 2.0 * (queries @ protos.T)
    if squared:
        return d2
    # clamp tiny negatives from cancellation before the root
    return ad.sqrt(d2 + 1e-12)


def _log_softmax_pick(neg_dist_row: Tensor, index: int) -> Tensor:
    """-log softmax(row)[index] as a scalar tensor, numerically stable."""
    shift = ad.constant(neg_dist_row.data.max())
    shifted = neg_dist_row - shift
    lse = ad.log(ad.exp(shifted).sum())
    onehot = np.zeros(neg_dist_row.shape[0])
    onehot[index] = 1.0
    picked = (shifted * ad.constant(onehot)).sum()
    return lse - picked


def intent_loss(protos: PrototypeSet, query_embedding: Tensor,
                true_intent: int, squared: bool = True) -> Tensor:
    """Negative log likelihood of the true intent under distance softmax."""
    if true_intent not in protos.intent_ids:
        raise PrototypeError(f"no prototype for intent {true_intent}")
    d = distances(query_embedding.reshape((1, -1)), protos.intent_matrix,
                  squared=squared)
    neg = (d * -1.0).reshape((len(protos.intent_ids),))
    return _log_softmax_pick(neg, protos.intent_row(true_intent))


def slot_loss(protos: PrototypeSet, token_embeddings: Tensor, slot_ids,
              squared: bool = True) -> tuple:
    """Mean per-token loss against slot prototypes.

    Tokens whose gold class has no prototype are skipped; returns
    (loss, n_skipped). Raises when nothing is scorable.
    """
    if protos.slot_matrix is None:
        raise PrototypeError("support set has no slot prototypes")
    scorable = [i for i, s in enumerate(slot_ids) if int(s) in protos.slot_ids]
    skipped = len(slot_ids) - len(scorable)
    if not scorable:
        raise PrototypeError("no query token has a scorable slot class")
    rows = ad.take_rows(token_embeddings, scorable)
    d = distances(rows, protos.slot_matrix, squared=squared)
    neg = d * -1.0
    shift = ad.constant(neg.data.max(axis=1, keepdims=True))
    shifted = neg - shift
    lse = ad.log(ad.exp(shifted).sum(axis=1, keepdims=True))
    onehot = np.zeros((len(scorable), len(protos.slot_ids)))
    for r, i in enumerate(scorable):
        onehot[r, protos.slot_row(int(slot_ids[i]))] = 1.0
    picked = (shifted * ad.constant(onehot)).sum(axis=1, keepdims=True)
    return (lse - picked).mean(), skipped


def total_loss(protos: PrototypeSet, encoded_query,
               squared: bool = True) -> LossBreakdown:
    """Mean over the query set of intent loss plus slot loss.

    Intent-only query utterances contribute their intent term only.
    """
    if not encoded_query:
        raise PrototypeError("empty query set")
    ic_terms = []
    slot_terms = []
    skipped = 0
    for u, out in encoded_query:
        ic_terms.append(intent_loss(protos, out.utterance_embedding, u.intent,
                                    squared=squared))
        if u.slots is not None:
            term, n_skip = slot_loss(protos, out.token_embeddings, u.slots,
                                     squared=squared)
            slot_terms.append(term)
            skipped += n_skip
    n = float(len(encoded_query))
    ic_sum = ic_terms[0] if len(ic_terms) == 1 else ad.concat(
        [t.reshape((1,)) for t in ic_terms], axis=0).sum()
    l_ic = ic_sum * (1.0 / n)
    if slot_terms:
        slot_sum = slot_terms[0] if len(slot_terms) == 1 else ad.concat(
            [t.reshape((1,)) for t in slot_terms], axis=0).sum()
        l_slots = slot_sum * (1.0 / n)
        total = l_ic + l_slots
        l_slots_val = float(l_slots.data)
    else:
        total = l_ic
        l_slots_val = 0.0
    return LossBreakdown(
        l_ic=float(l_ic.data), l_slots=l_slots_val,
        l_total=float(total.data), skipped_slot_tokens=skipped,
        total_tensor=total,
    )


def predict_intent(protos: PrototypeSet, query_embedding) -> int:
    """Intent id minimizing prototype distance; ties pick the lowest id."""
    if not protos.intent_ids:
        raise PrototypeError("no intent prototypes")
    q = np.asarray(query_embedding if not isinstance(query_embedding, Tensor)
                   else query_embedding.data).reshape(1, -1)
    p = protos.intent_matrix.data
    d = ((q - p) ** 2).sum(axis=1)
    return int(protos.intent_ids[int(np.argmin(d))])  # argmin takes first


def repair_bio(labels) -> list:
    """Rewrite orphan I-X tags to B-X so predicted sequences are valid."""
    out = []
    prev_type = None
    for tag in labels:
        if tag.startswith("I-"):
            if prev_type != tag[2:]:
                tag = "B-" + tag[2:]
            prev_type = tag[2:]
        elif tag.startswith("B-"):
            prev_type = tag[2:]
        else:
            prev_type = None
        out.append(tag)
    return out


def predict_slots(protos: PrototypeSet, token_embeddings, slot_vocab) -> list:
    """Per-token argmin over slot prototypes, repaired to valid BIO tags."""
    if protos.slot_matrix is None:
        raise PrototypeError("no slot prototypes")
    toks = np.asarray(token_embeddings if not isinstance(token_embeddings, Tensor)
                      else token_embeddings.data)
    p = protos.slot_matrix.data
    d = ((toks[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)
    picked = [int(protos.slot_ids[int(i)]) for i in np.argmin(d, axis=1)]
    return repair_bio([slot_vocab.label(s) for s in picked])
