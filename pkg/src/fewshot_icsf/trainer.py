"""Episodic meta-training: sampling, augmentation, losses, optimizer steps.

One optimizer step per episode over all encoder parameters. Randomness is
split into independent per-purpose streams (init / sampler / augmenter)
derived from the master seed, so pipelines can be rearranged without
perturbing each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .augment import AugmentResources, AugmentationConfig, MockTranslationClient, apply_augmentation
from .contrastive import ContrastiveConfig, regularized_total_loss
from .corpus import Dataset, SplitSpec, build_slot_value_dict, build_token_vocab, token_ids
from .encoder import EncoderConfig, EncoderParams, encode, init_params
from .episode import Episode, SamplerConfig, class_index, sample_episode
from .protonet import (LossBreakdown, compute_prototypes, intent_loss,
                       slot_loss, total_loss)
from .syntax import (RuleTagger, SyntaxConfig, SyntaxMode, annotate,
                     composite_loss_with_pos, compute_pos_prototypes,
                     concat_features, utterance_pos_loss)

# spawn keys for the per-purpose RNG streams
_RNG_INIT, _RNG_SAMPLER, _RNG_AUGMENT, _RNG_EVAL = 0, 1, 2, 3


class NonFiniteLossError(Exception):
    """Training aborted on a non-finite loss; carries the episode."""

    def __init__(self, message, episode_index=None, episode=None):
        super().__init__(message)
        self.episode_index = episode_index
        self.episode = episode


def derived_rng(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 50
    learning_rate: float = 5e-5
    optimizer: str = "adam"  # or "sgd"
    kmax: int = 20
    seed: int = 0
    max_query_per_class: int = 10
    min_way: int = 3
    encoder: EncoderConfig = EncoderConfig()
    contrastive: ContrastiveConfig | None = None
    augmentation: AugmentationConfig | None = None
    syntax: SyntaxConfig | None = None
    squared_distance: bool = True

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(kmax=self.kmax,
                             max_query_per_class=self.max_query_per_class,
                             min_way=self.min_way)


class AdamOptimizer:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, tensors: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in tensors.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SgdOptimizer:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, tensors: dict) -> None:
        for p in tensors.values():
            if p.grad is not None:
                p.data -= self.lr * p.grad


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return AdamOptimizer(cfg.learning_rate)
    return SgdOptimizer(cfg.learning_rate)


@dataclass
class RunResources:
    """Shared lookup state threaded through training and evaluation."""

    token_vocab: object
    augment: AugmentResources
    tagger: RuleTagger
    index: dict


def build_resources(dataset: Dataset, split: SplitSpec,
                    cfg: TrainConfig,
                    translation_client=None, synonyms=None,
                    tagger=None) -> RunResources:
    aug = AugmentResources(
        slot_value_dict=build_slot_value_dict(dataset, split),
        translation_client=(translation_client
                            or MockTranslationClient(seed=cfg.seed)),
        slot_vocab=dataset.slot_vocab,
    )
    if synonyms is not None:
        aug.synonyms = dict(synonyms)
    return RunResources(token_vocab=build_token_vocab(dataset), augment=aug,
                        tagger=tagger or RuleTagger(),
                        index=class_index(dataset))


def encode_utterances(params: EncoderParams, utterances, token_vocab):
    """(Utterance, EncoderOutput) pairs for a support or query set."""
    return [(u, encode(params, token_ids(token_vocab, u.tokens)))
            for u in utterances]


def _with_slot_features(encoded, annotations, syntax: SyntaxConfig):
    """Swap token embeddings for their feature-concatenated versions."""
    from .encoder import EncoderOutput

    include_pos = SyntaxMode.FEATURE_CONCAT in syntax.mode
    include_chunk = SyntaxMode.NOUN_CHUNK_FEATURES in syntax.mode
    out = []
    for (u, enc), ann in zip(encoded, annotations):
        out.append((u, EncoderOutput(
            utterance_embedding=enc.utterance_embedding,
            token_embeddings=concat_features(
                enc.token_embeddings, ann, include_pos, include_chunk))))
    return out


def episode_loss(params: EncoderParams, episode: Episode, cfg: TrainConfig,
                 resources: RunResources) -> LossBreakdown:
    """Assemble the configured loss for one (possibly augmented) episode."""
    enc_sup = encode_utterances(params, episode.support, resources.token_vocab)
    enc_q = encode_utterances(params, episode.query, resources.token_vocab)

    syntax = cfg.syntax
    if syntax is not None and syntax.mode:
        ann_sup = [annotate(u.tokens, resources.tagger) for u, _ in enc_sup]
        ann_q = [annotate(u.tokens, resources.tagger) for u, _ in enc_q]
        sup_view = (_with_slot_features(enc_sup, ann_sup, syntax)
                    if syntax.wants_concat else enc_sup)
        q_view = (_with_slot_features(enc_q, ann_q, syntax)
                  if syntax.wants_concat else enc_q)
        protos = compute_prototypes(sup_view)
        if SyntaxMode.MULTITASK_LOSS in syntax.mode:
            pos_ids, pos_matrix = compute_pos_prototypes(enc_sup, ann_sup)
            ic_terms, slot_terms, pos_terms = [], [], []
            skipped = 0
            for (u, enc), (_, enc_view), ann in zip(enc_q, q_view, ann_q):
                ic_terms.append(intent_loss(protos, enc.utterance_embedding,
                                            u.intent, squared=cfg.squared_distance))
                if u.slots is not None:
                    term, n_skip = slot_loss(protos, enc_view.token_embeddings,
                                             u.slots, squared=cfg.squared_distance)
                    slot_terms.append(term)
                    skipped += n_skip
                else:
                    slot_terms.append(None)
                pos_terms.append(utterance_pos_loss(
                    pos_ids, pos_matrix, enc.token_embeddings, ann,
                    squared=cfg.squared_distance))
            total = composite_loss_with_pos(ic_terms, slot_terms, pos_terms,
                                            syntax.beta)
            n = len(enc_q)
            base = LossBreakdown(
                l_ic=sum(t.item() for t in ic_terms) / n,
                l_slots=sum(t.item() for t in slot_terms if t is not None) / n,
                l_pos=sum(t.item() for t in pos_terms) / n,
                l_total=float(total.data), skipped_slot_tokens=skipped,
                total_tensor=total,
            )
        else:
            base = total_loss(protos, q_view, squared=cfg.squared_distance)
    else:
        protos = compute_prototypes(enc_sup)
        base = total_loss(protos, enc_q, squared=cfg.squared_distance)

    if cfg.contrastive is not None and (cfg.contrastive.lambda_ic > 0
                                        or cfg.contrastive.lambda_sf > 0):
        base = regularized_total_loss(base, enc_sup, enc_q, cfg.contrastive)
    return base


def loss_for_config(episode: Episode, params: EncoderParams, cfg: TrainConfig,
                    resources: RunResources) -> LossBreakdown:
    """Spec-facing alias used by training, tests, and gradient checks."""
    return episode_loss(params, episode, cfg, resources)


def _episode_dump(episode: Episode) -> str:
    return json.dumps({
        "intent_classes": list(episode.intent_classes),
        "support_ids": [u.id for u in episode.support],
        "query_ids": [u.id for u in episode.query],
    })


def meta_train(dataset: Dataset, split: SplitSpec, cfg: TrainConfig,
               resources: RunResources | None = None,
               params: EncoderParams | None = None):
    """Train the encoder for ``cfg.episodes`` episodes.

    Returns (trained params, per-episode LossBreakdown list).
    """
    if resources is None:
        resources = build_resources(dataset, split, cfg)
    if params is None:
        params = init_params(len(resources.token_vocab), cfg.encoder,
                             derived_rng(cfg.seed, _RNG_INIT))
    sampler_rng = derived_rng(cfg.seed, _RNG_SAMPLER)
    augment_rng = derived_rng(cfg.seed, _RNG_AUGMENT)
    sampler_cfg = cfg.sampler_config()
    optimizer = make_optimizer(cfg)

    log = []
    for ep_index in range(cfg.episodes):
        ep = sample_episode(dataset, split.meta_train, sampler_cfg, sampler_rng,
                            index=resources.index)
        if cfg.augmentation is not None:
            ep = apply_augmentation(ep, "meta-train", cfg.augmentation,
                                    resources.augment, augment_rng)
        ad.zero_grad(params.tensors.values())
        breakdown = episode_loss(params, ep, cfg, resources)
        if not np.isfinite(breakdown.l_total):
            raise NonFiniteLossError(
                f"non-finite loss at episode {ep_index}: "
                f"{breakdown.log_record()}; episode {_episode_dump(ep)}",
                episode_index=ep_index, episode=ep)
        breakdown.total_tensor.backward()
        optimizer.step(params.tensors)
        log.append(breakdown)
    return params, log


def write_training_log(log, path) -> None:
    """Line-delimited records: episode index plus every loss component."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, breakdown in enumerate(log):
            rec = {"episode": i}
            rec.update(breakdown.log_record())
            fh.write(json.dumps(rec) + "\n")
