"""Supervised contrastive regularizers over intent and slot labels.

The loss sums, over every anchor that has at least one same-label
positive, the negative log of the mean positive similarity mass divided by
the total non-anchor similarity mass:

    sum_i -log[ (1/|P(i)|) * sum_{z in P(i)} exp(u_i . u_z / tau)
                / sum_{j != i} exp(u_i . u_j / tau) ]

Embeddings are L2-normalized first when ``normalize`` is on. Anchors with
no positive are skipped and counted. Every included anchor term is
non-negative; it is exactly zero only in the degenerate case where the
anchor's sole comparison sample is its sole positive.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .protonet import LossBreakdown


class ContrastiveLevel(enum.Enum):
    SUPPORT_MTRAIN = "s-mtrain"
    SUPPORT_QUERY_MTRAIN = "sq-mtrain"


@dataclass(frozen=True)
class ContrastiveConfig:
    lambda_ic: float = 0.06
    lambda_sf: float = 0.06
    temperature: float = 0.1
    level: ContrastiveLevel = ContrastiveLevel.SUPPORT_MTRAIN
    normalize: bool = True

    def __post_init__(self):
        if self.lambda_ic < 0 or self.lambda_sf < 0:
            raise ValueError("lambda weights must be non-negative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class ContrastiveResult:
    loss: Tensor
    n_anchors: int
    n_skipped: int

    @property
    def all_skipped(self) -> bool:
        return self.n_skipped == self.n_anchors

    @property
    def value(self) -> float:
        return float(self.loss.data)


def _l2_normalize(u: Tensor) -> Tensor:
    norms = ad.sqrt((u * u).sum(axis=1, keepdims=True))
    return u / norms


def supcon_loss(embeddings: Tensor, labels, cfg: ContrastiveConfig) -> ContrastiveResult:
    """Label-supervised contrastive loss over a stack of embeddings.

    Args:
        embeddings: (m, d) tensor, m >= 2.
        labels: length-m label sequence; equal labels are positives.
        cfg: weights are not applied here, only tau / normalize matter.
    """
    m = embeddings.shape[0]
    if m < 2:
        raise ValueError("contrastive loss needs at least 2 samples")
    labels = np.asarray(labels)

    u = _l2_normalize(embeddings) if cfg.normalize else embeddings
    sims = (u @ u.T) * (1.0 / cfg.temperature)

    eye = np.eye(m)
    off_diag = 1.0 - eye
    pos = ((labels[:, None] == labels[None, :]).astype(float)) * off_diag
    pos_counts = pos.sum(axis=1, keepdims=True)
    include = (pos_counts > 0).astype(float)
    n_skipped = int(m - include.sum())
    if n_skipped == m:
        return ContrastiveResult(loss=ad.constant(0.0), n_anchors=m, n_skipped=m)

    # row-stable exponentials; the shift cancels between numerator and
    # denominator of each anchor's ratio
    shift = ad.constant(
        np.where(off_diag > 0, sims.data, -np.inf).max(axis=1, keepdims=True))
    e = ad.exp(sims - shift)
    den = (e * ad.constant(off_diag)).sum(axis=1, keepdims=True)
    num = (e * ad.constant(pos)).sum(axis=1, keepdims=True)
    # excluded anchors would hit log(0); give them a harmless value and mask
    num_safe = num + ad.constant(1.0 - include)
    terms = (ad.constant(np.where(include > 0, np.log(np.maximum(pos_counts, 1)), 0.0))
             - ad.log(num_safe) + ad.log(den)) * ad.constant(include)
    return ContrastiveResult(loss=terms.sum(), n_anchors=m, n_skipped=n_skipped)


def contrastive_ic_loss(encoded, cfg: ContrastiveConfig) -> ContrastiveResult:
    """Contrastive loss over utterance embeddings with intent labels."""
    if len(encoded) < 2:
        raise ValueError("contrastive IC loss needs at least 2 utterances")
    rows = ad.concat([out.utterance_embedding.reshape((1, -1))
                      for _, out in encoded], axis=0)
    labels = [u.intent for u, _ in encoded]
    return supcon_loss(rows, labels, cfg)


def contrastive_sf_loss(encoded, cfg: ContrastiveConfig) -> ContrastiveResult:
    """Contrastive loss over token embeddings with slot labels.

    Intent-only utterances contribute no tokens.
    """
    parts, labels = [], []
    for u, out in encoded:
        if u.slots is None:
            continue
        parts.append(out.token_embeddings)
        labels.extend(u.slots)
    if len(labels) < 2:
        raise ValueError("contrastive SF loss needs at least 2 labeled tokens")
    return supcon_loss(ad.concat(parts, axis=0), labels, cfg)


def regularized_total_loss(base: LossBreakdown, encoded_support, encoded_query,
                           cfg: ContrastiveConfig) -> LossBreakdown:
    """Add the weighted contrastive terms to a base episode loss.

    The contrastive pool is the support set, or support plus query,
    depending on ``cfg.level``.
    """
    pool = list(encoded_support)
    if cfg.level is ContrastiveLevel.SUPPORT_QUERY_MTRAIN:
        pool = pool + list(encoded_query)

    total = base.total_tensor
    cl_ic_val = cl_sf_val = 0.0
    if cfg.lambda_ic > 0:
        ic = contrastive_ic_loss(pool, cfg)
        cl_ic_val = ic.value
        total = total + ic.loss * cfg.lambda_ic
    if cfg.lambda_sf > 0:
        sf = contrastive_sf_loss(pool, cfg)
        cl_sf_val = sf.value
        total = total + sf.loss * cfg.lambda_sf

    return LossBreakdown(
        l_ic=base.l_ic, l_slots=base.l_slots,
        l_contrastive_ic=cl_ic_val, l_contrastive_sf=cl_sf_val,
        l_pos=base.l_pos, l_total=float(total.data),
        skipped_slot_tokens=base.skipped_slot_tokens,
        total_tensor=total,
    )
