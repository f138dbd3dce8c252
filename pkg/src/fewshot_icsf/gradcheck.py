"""Finite-difference verification of every loss component's gradients.

Each component builds random small instances (embedding dimension 8 by
default), computes analytic gradients through the autodiff graph, and
compares them against central finite differences. A test hook can corrupt
one component's analytic gradient to prove the harness actually fails.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .contrastive import ContrastiveConfig, ContrastiveLevel, regularized_total_loss, supcon_loss
from .corpus import Utterance
from .encoder import EncoderConfig, EncoderOutput, encode, init_params
from .encoder import backward as encoder_backward
from .protonet import compute_prototypes, intent_loss, slot_loss, total_loss
from .syntax import (SyntacticAnnotation, composite_loss_with_pos,
                     compute_pos_prototypes, utterance_pos_loss)

DEFAULT_EPS = 1e-4
DEFAULT_REL_TOL = 1e-3
REL_FLOOR = 1e-6


def central_differences(f, arrays: dict, eps: float = DEFAULT_EPS) -> dict:
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(arrays)
            flat[i] = orig - eps
            lo = f(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads[name] = g
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a, n = analytic.reshape(-1), numeric.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _fake_pair(utt_vec, tok_rows, intent, slots, uid):
    u = Utterance(tokens=tuple(f"t{j}" for j in range(tok_rows.shape[0])),
                  intent=intent, slots=slots, id=uid)
    return (u, EncoderOutput(utterance_embedding=utt_vec,
                             token_embeddings=tok_rows))


def _episode_from(tensors, spec):
    """Assemble fake encoded support/query pairs from flat parameter arrays."""
    sup, query = [], []
    for i, (intent, slots) in enumerate(spec["support"]):
        toks = tensors[f"sup_tok{i}"]
        sup.append(_fake_pair(tensors[f"sup_utt{i}"].reshape((-1,)), toks,
                              intent, slots, f"s{i}"))
    for i, (intent, slots) in enumerate(spec["query"]):
        toks = tensors[f"q_tok{i}"]
        query.append(_fake_pair(tensors[f"q_utt{i}"].reshape((-1,)), toks,
                                intent, slots, f"q{i}"))
    return sup, query


def _random_episode_spec(rng, dim, n_support=4, n_query=3, n_tokens=3):
    spec = {"support": [], "query": []}
    arrays = {}
    for i in range(n_support):
        intent = i % 2
        slots = tuple(int(s) for s in rng.integers(0, 2, size=n_tokens))
        spec["support"].append((intent, slots))
        arrays[f"sup_utt{i}"] = rng.normal(size=(1, dim))
        arrays[f"sup_tok{i}"] = rng.normal(size=(n_tokens, dim))
    for i in range(n_query):
        intent = i % 2
        slots = tuple(int(s) for s in rng.integers(0, 2, size=n_tokens))
        spec["query"].append((intent, slots))
        arrays[f"q_utt{i}"] = rng.normal(size=(1, dim))
        arrays[f"q_tok{i}"] = rng.normal(size=(n_tokens, dim))
    return spec, arrays


def _check_embedding_loss(build, arrays, eps, corrupt=False):
    tensors = {k: ad.parameter(v.copy()) for k, v in arrays.items()}
    build(tensors).backward()
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for k, t in tensors.items()}
    if corrupt:
        first = next(iter(analytic))
        analytic[first] = analytic[first] + 1.0

    def f(arrs):
        with ad.no_grad():
            return build({k: ad.Tensor(v) for k, v in arrs.items()}).item()

    numeric = central_differences(f, {k: v.copy() for k, v in arrays.items()},
                                  eps=eps)
    return max(relative_error(analytic[k], numeric[k]) for k in arrays)


# component builders -----------------------------------------------------------


def _build_intent_loss(rng, dim):
    spec, arrays = _random_episode_spec(rng, dim, n_support=4, n_query=1)

    def build(t):
        sup, query = _episode_from(t, spec)
        protos = compute_prototypes(sup)
        u, enc = query[0]
        return intent_loss(protos, enc.utterance_embedding, u.intent)

    return build, arrays


def _build_slot_loss(rng, dim):
    spec, arrays = _random_episode_spec(rng, dim, n_support=3, n_query=1)

    def build(t):
        sup, query = _episode_from(t, spec)
        protos = compute_prototypes(sup)
        u, enc = query[0]
        return slot_loss(protos, enc.token_embeddings, u.slots)[0]

    return build, arrays


def _build_total_loss(rng, dim):
    spec, arrays = _random_episode_spec(rng, dim)

    def build(t):
        sup, query = _episode_from(t, spec)
        return total_loss(compute_prototypes(sup), query).total_tensor

    return build, arrays


def _build_contrastive_ic(rng, dim):
    m = 5
    arrays = {"emb": rng.normal(size=(m, dim))}
    labels = [0, 0, 1, 1, 1]
    cfg = ContrastiveConfig(temperature=0.4)

    def build(t):
        return supcon_loss(t["emb"], labels, cfg).loss

    return build, arrays


def _build_contrastive_sf(rng, dim):
    arrays = {"emb": rng.normal(size=(6, dim))}
    labels = [0, 1, 0, 1, 2, 0]
    cfg = ContrastiveConfig(temperature=0.4, normalize=False)

    def build(t):
        return supcon_loss(t["emb"], labels, cfg).loss

    return build, arrays


def _build_regularized_total(rng, dim):
    spec, arrays = _random_episode_spec(rng, dim)
    cfg = ContrastiveConfig(lambda_ic=0.06, lambda_sf=0.06, temperature=0.3,
                            level=ContrastiveLevel.SUPPORT_QUERY_MTRAIN)

    def build(t):
        sup, query = _episode_from(t, spec)
        base = total_loss(compute_prototypes(sup), query)
        return regularized_total_loss(base, sup, query, cfg).total_tensor

    return build, arrays


_POS_TAGS = ("NOUN", "VERB", "ADJ")


def _random_annotations(rng, spec, key):
    anns = []
    for _, slots in spec[key]:
        tags = tuple(_POS_TAGS[int(i)] for i in
                     rng.integers(0, len(_POS_TAGS), size=len(slots)))
        anns.append(SyntacticAnnotation(pos_tags=tags,
                                        noun_chunk=(False,) * len(slots)))
    return anns


def _build_pos_loss(rng, dim):
    spec, arrays = _random_episode_spec(rng, dim, n_support=3, n_query=1)
    ann_sup = _random_annotations(rng, spec, "support")
    ann_q = _random_annotations(rng, spec, "query")

    def build(t):
        sup, query = _episode_from(t, spec)
        ids, matrix = compute_pos_prototypes(sup, ann_sup)
        _, enc = query[0]
        return utterance_pos_loss(ids, matrix, enc.token_embeddings, ann_q[0])

    return build, arrays


def _build_composite_pos(rng, dim):
    spec, arrays = _random_episode_spec(rng, dim, n_support=3, n_query=2)
    ann_sup = _random_annotations(rng, spec, "support")
    ann_q = _random_annotations(rng, spec, "query")

    def build(t):
        sup, query = _episode_from(t, spec)
        protos = compute_prototypes(sup)
        ids, matrix = compute_pos_prototypes(sup, ann_sup)
        ic_terms, slot_terms, pos_terms = [], [], []
        for (u, enc), ann in zip(query, ann_q):
            ic_terms.append(intent_loss(protos, enc.utterance_embedding, u.intent))
            slot_terms.append(slot_loss(protos, enc.token_embeddings, u.slots)[0])
            pos_terms.append(utterance_pos_loss(ids, matrix,
                                                enc.token_embeddings, ann))
        return composite_loss_with_pos(ic_terms, slot_terms, pos_terms, beta=0.01)

    return build, arrays


_EMBEDDING_COMPONENTS = {
    "intent-loss": _build_intent_loss,
    "slot-loss": _build_slot_loss,
    "total-loss": _build_total_loss,
    "contrastive-ic": _build_contrastive_ic,
    "contrastive-sf": _build_contrastive_sf,
    "regularized-total": _build_regularized_total,
    "pos-loss": _build_pos_loss,
    "composite-pos": _build_composite_pos,
}


def _check_encoder(rng, dim, eps, corrupt=False):
    config = EncoderConfig(dim=dim, ff_dim=2 * dim, n_layers=1, max_len=8)
    vocab = 10
    params = init_params(vocab, config, rng)
    ids = list(rng.integers(0, vocab, size=3))
    w_utt = rng.normal(size=dim)
    w_tok = rng.normal(size=(3, dim))

    out = encode(params, ids)
    analytic = encoder_backward(params, out, w_utt, w_tok)
    if corrupt:
        analytic["token_table"] = analytic["token_table"] + 1.0
    arrays = {k: t.data.copy() for k, t in params.tensors.items()}

    def f(arrs):
        for k, t in params.tensors.items():
            t.data[...] = arrs[k]
        with ad.no_grad():
            o = encode(params, ids)
            val = float((o.utterance_embedding.data * w_utt).sum()
                        + (o.token_embeddings.data * w_tok).sum())
        for k, t in params.tensors.items():
            t.data[...] = arrays[k]
        return val

    numeric = central_differences(f, {k: v.copy() for k, v in arrays.items()},
                                  eps=eps)
    return max(relative_error(analytic[k], numeric[k]) for k in arrays)


ALL_COMPONENTS = tuple(list(_EMBEDDING_COMPONENTS) + ["encoder-backward"])


@dataclass(frozen=True)
class ComponentReport:
    name: str
    instances: int
    max_rel_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def check_component(name: str, dim: int = 8, seed: int = 0, instances: int = 20,
                    rel_tol: float = DEFAULT_REL_TOL, eps: float = DEFAULT_EPS,
                    corrupt: bool = False) -> ComponentReport:
    start = time.perf_counter()
    worst = 0.0
    if name == "encoder-backward":
        # FD over every encoder parameter is the dominant cost; a few
        # instances already sweep ~1k coordinates each
        for k in range(max(3, instances // 4)):
            rng = np.random.default_rng((seed, k))
            worst = max(worst, _check_encoder(rng, dim, eps, corrupt=corrupt))
    else:
        builder = _EMBEDDING_COMPONENTS[name]
        for k in range(instances):
            rng = np.random.default_rng((seed, k))
            build, arrays = builder(rng, dim)
            worst = max(worst, _check_embedding_loss(build, arrays, eps,
                                                     corrupt=corrupt))
    return ComponentReport(name=name, instances=instances, max_rel_error=worst,
                           tolerance=rel_tol, seconds=time.perf_counter() - start)


def run_all(dim: int = 8, seed: int = 0, instances: int = 20,
            rel_tol: float = DEFAULT_REL_TOL, corrupt: str | None = None) -> list:
    reports = []
    for name in ALL_COMPONENTS:
        reports.append(check_component(
            name, dim=dim, seed=seed, instances=instances, rel_tol=rel_tol,
            corrupt=(corrupt == name)))
    return reports
