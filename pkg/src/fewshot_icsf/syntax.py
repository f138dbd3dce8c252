"""Syntactic add-ons: POS tags and noun chunks as features or a side task.

A deterministic lexicon-plus-suffix-rule tagger over the 17-tag universal
inventory stands in for a learned tagger; a small pattern chunker marks
noun phrases. Features enter the slot-prototype space as one-hot blocks
appended to token embeddings; the multi-task path adds a POS prototype
loss weighted by beta.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .protonet import PrototypeError, _grouped_means, _log_softmax_pick, distances

UPOS_TAGS = ("ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN",
             "NUM", "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM",
             "VERB", "X")
TAG_INDEX = {t: i for i, t in enumerate(UPOS_TAGS)}
N_CHUNK_FLAGS = 2  # inside / outside one-hot


class SyntaxMode(enum.Enum):
    FEATURE_CONCAT = "feat"        # POS one-hot block
    MULTITASK_LOSS = "mtl"         # auxiliary POS prototype loss
    NOUN_CHUNK_FEATURES = "chunk"  # chunk one-hot block


@dataclass(frozen=True)
class SyntaxConfig:
    mode: frozenset
    beta: float = 0.01

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        object.__setattr__(self, "mode", frozenset(self.mode))
        for m in self.mode:
            if not isinstance(m, SyntaxMode):
                raise ValueError(f"unknown syntax mode {m!r}")

    @property
    def wants_concat(self) -> bool:
        return bool(self.mode & {SyntaxMode.FEATURE_CONCAT,
                                 SyntaxMode.NOUN_CHUNK_FEATURES})


@dataclass(frozen=True)
class SyntacticAnnotation:
    pos_tags: tuple    # UPOS tag strings, one per token
    noun_chunk: tuple  # bool per token: inside a noun chunk


_DEFAULT_LEXICON = {
    # function words
    "a": "DET", "an": "DET", "the": "DET", "this": "DET", "my": "DET",
    "some": "DET", "any": "DET",
    "at": "ADP", "in": "ADP", "on": "ADP", "for": "ADP", "from": "ADP",
    "to": "ADP", "of": "ADP", "by": "ADP", "into": "ADP", "onto": "ADP",
    "near": "ADP", "with": "ADP",
    "i": "PRON", "me": "PRON", "you": "PRON", "it": "PRON", "who": "PRON",
    "what": "PRON", "which": "PRON", "there": "PRON",
    "and": "CCONJ", "or": "CCONJ",
    "is": "AUX", "are": "AUX", "will": "AUX", "does": "AUX", "do": "AUX",
    "can": "AUX", "would": "AUX", "have": "AUX",
    "not": "PART", "out": "PART", "up": "PART",
    "when": "ADV", "how": "ADV", "where": "ADV", "now": "ADV",
    "here": "ADV", "far": "ADV", "much": "ADV", "many": "ADV",
    "tonight": "ADV", "tomorrow": "ADV", "please": "INTJ", "hello": "INTJ",
    "thanks": "INTJ",
    # numbers written out
    "one": "NUM", "two": "NUM", "three": "NUM", "four": "NUM", "five": "NUM",
    "six": "NUM", "seven": "NUM", "eight": "NUM", "nine": "NUM", "ten": "NUM",
    # frequent verbs in the domain
    "book": "VERB", "reserve": "VERB", "find": "VERB", "play": "VERB",
    "put": "VERB", "start": "VERB", "give": "VERB", "add": "VERB",
    "include": "VERB", "rate": "VERB", "show": "VERB", "order": "VERB",
    "get": "VERB", "want": "VERB", "set": "VERB", "wake": "VERB",
    "schedule": "VERB", "send": "VERB", "text": "VERB", "write": "VERB",
    "translate": "VERB", "say": "VERB", "list": "VERB", "need": "VERB",
    "fly": "VERB", "leave": "VERB", "arrive": "VERB", "tell": "VERB",
    "serve": "VERB", "use": "VERB", "describe": "VERB", "count": "VERB",
    "offer": "VERB", "fit": "VERB", "pick": "VERB", "apply": "VERB",
    "explain": "VERB", "mean": "VERB", "cost": "VERB", "rain": "VERB",
    "like": "VERB", "go": "VERB", "operates": "VERB",
    # frequent nouns
    "table": "NOUN", "spot": "NOUN", "bar": "NOUN", "people": "NOUN",
    "music": "NOUN", "songs": "NOUN", "tracks": "NOUN", "tunes": "NOUN",
    "weather": "NOUN", "forecast": "NOUN", "playlist": "NOUN",
    "stars": "NOUN", "score": "NOUN", "novel": "NOUN", "screenings": "NOUN",
    "movie": "NOUN", "times": "NOUN", "alarm": "NOUN", "message": "NOUN",
    "note": "NOUN", "phrase": "NOUN", "flight": "NOUN", "flights": "NOUN",
    "fare": "NOUN", "ticket": "NOUN", "prices": "NOUN", "price": "NOUN",
    "airport": "NOUN", "plane": "NOUN", "aircraft": "NOUN", "route": "NOUN",
    "routes": "NOUN", "code": "NOUN", "seat": "NOUN", "seats": "NOUN",
    "meal": "NOUN", "room": "NOUN", "ribbon": "NOUN", "barbecue": "NOUN",
    "pool": "NOUN", "spa": "NOUN", "internet": "NOUN", "parking": "NOUN",
    "wifi": "NOUN", "downtown": "NOUN", "morning": "NOUN", "evening": "NOUN",
    "noon": "NOUN", "am": "NOUN", "pm": "NOUN", "drive": "NOUN",
    "passengers": "NOUN", "capacity": "NOUN", "board": "NOUN",
    "options": "NOUN", "limits": "NOUN", "restrictions": "NOUN",
    "carriers": "NOUN", "departure": "NOUN", "departures": "NOUN",
    "arrival": "NOUN", "terminal": "NOUN",
    "layout": "NOUN", "services": "NOUN", "distance": "NOUN",
    "taxi": "NOUN", "shuttle": "NOUN", "rail": "NOUN", "limousine": "NOUN",
    # adjectives
    "blue": "ADJ", "purple": "ADJ", "golden": "ADJ", "grand": "ADJ",
    "indoor": "ADJ", "outdoor": "ADJ", "smoking": "ADJ", "cheapest": "ADJ",
    "lowest": "ADJ", "first": "ADJ", "free": "ADJ", "daily": "ADJ",
    "right": "ADJ", "available": "ADJ", "vegetarian": "ADJ", "long": "ADJ",
    "veggie": "ADJ", "window": "ADJ", "aisle": "ADJ", "middle": "ADJ",
}

# ordered: first matching suffix wins
_DEFAULT_SUFFIX_RULES = (
    ("ing", "VERB"),
    ("ed", "VERB"),
    ("ly", "ADV"),
    ("tion", "NOUN"),
    ("ment", "NOUN"),
    ("ness", "NOUN"),
    ("ies", "NOUN"),
    ("s", "NOUN"),
)

_NUMERIC = re.compile(r"^\d+([.:]\d+)?$")


class RuleTagger:
    """Deterministic lexicon + suffix-rule tagger; unknown words get X."""

    def __init__(self, lexicon=None, suffix_rules=None):
        self.lexicon = dict(_DEFAULT_LEXICON if lexicon is None else lexicon)
        self.suffix_rules = tuple(_DEFAULT_SUFFIX_RULES if suffix_rules is None
                                  else suffix_rules)

    def tag(self, word: str) -> str:
        w = word.lower()
        if w in self.lexicon:
            return self.lexicon[w]
        if _NUMERIC.match(w):
            return "NUM"
        for suffix, tag in self.suffix_rules:
            if len(w) > len(suffix) and w.endswith(suffix):
                return tag
        return "X"

    def tag_sequence(self, tokens):
        return tuple(self.tag(t) for t in tokens)


def load_tag_lexicon(path) -> dict:
    """word TAB tag, one entry per line."""
    lex = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            word, tag = line.split("\t")
            if tag not in TAG_INDEX:
                raise ValueError(f"unknown tag {tag!r} for word {word!r}")
            lex[word.lower()] = tag
    return lex


def load_suffix_rules(path) -> tuple:
    """suffix TAB tag, one rule per line, order preserved."""
    rules = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            suffix, tag = line.split("\t")
            if tag not in TAG_INDEX:
                raise ValueError(f"unknown tag {tag!r} for suffix {suffix!r}")
            rules.append((suffix, tag))
    return tuple(rules)


def noun_chunk_flags(tags) -> tuple:
    """Mark tokens inside (DET)? (ADJ|NUM)* (NOUN|PROPN)+ chunks."""
    n = len(tags)
    flags = [False] * n
    i = 0
    while i < n:
        start = i
        j = i
        if j < n and tags[j] == "DET":
            j += 1
        while j < n and tags[j] in ("ADJ", "NUM"):
            j += 1
        head = j
        while j < n and tags[j] in ("NOUN", "PROPN"):
            j += 1
        if j > head:  # at least one nominal head
            for k in range(start, j):
                flags[k] = True
            i = j
        else:
            i = start + 1
    return tuple(flags)


def annotate(tokens, tagger: RuleTagger | None = None) -> SyntacticAnnotation:
    """Full per-token POS and noun-chunk annotation."""
    tagger = tagger or RuleTagger()
    tags = tagger.tag_sequence(tokens)
    return SyntacticAnnotation(pos_tags=tags, noun_chunk=noun_chunk_flags(tags))


def feature_block(annotation: SyntacticAnnotation, include_pos: bool = True,
                  include_chunk: bool = True) -> np.ndarray:
    """Constant (n, 17 + 2) one-hot feature rows; disabled blocks are zero."""
    n = len(annotation.pos_tags)
    block = np.zeros((n, len(UPOS_TAGS) + N_CHUNK_FLAGS))
    if include_pos:
        for i, t in enumerate(annotation.pos_tags):
            block[i, TAG_INDEX[t]] = 1.0
    if include_chunk:
        for i, inside in enumerate(annotation.noun_chunk):
            block[i, len(UPOS_TAGS) + (0 if inside else 1)] = 1.0
    return block


def concat_features(token_embeddings: Tensor, annotation: SyntacticAnnotation,
                    include_pos: bool = True, include_chunk: bool = True) -> Tensor:
    """Append the one-hot POS and chunk blocks to each token embedding row."""
    block = feature_block(annotation, include_pos, include_chunk)
    return ad.concat([token_embeddings, ad.constant(block)], axis=1)


def compute_pos_prototypes(encoded_support, annotations) -> tuple:
    """Mean plain token embedding per POS tag over the support set.

    Returns (tag ids tuple, prototype matrix tensor).
    """
    parts, labels = [], []
    for (u, out), ann in zip(encoded_support, annotations):
        parts.append(out.token_embeddings)
        labels.extend(TAG_INDEX[t] for t in ann.pos_tags)
    if not parts:
        raise PrototypeError("no support tokens for POS prototypes")
    ids, matrix, _ = _grouped_means(ad.concat(parts, axis=0), labels)
    return ids, matrix


def pos_loss(pos_ids, pos_matrix: Tensor, token_embedding: Tensor,
             true_tag: str, squared: bool = True) -> Tensor:
    """Distance-softmax loss of one token against the POS prototypes."""
    idx = TAG_INDEX[true_tag]
    if idx not in pos_ids:
        raise PrototypeError(f"no prototype for POS tag {true_tag}")
    d = distances(token_embedding.reshape((1, -1)), pos_matrix, squared=squared)
    neg = (d * -1.0).reshape((len(pos_ids),))
    return _log_softmax_pick(neg, pos_ids.index(idx))


def utterance_pos_loss(pos_ids, pos_matrix: Tensor, token_embeddings: Tensor,
                       annotation: SyntacticAnnotation,
                       squared: bool = True) -> Tensor:
    """Mean per-token POS loss for one query utterance.

    Tokens whose tag lacks a prototype are skipped; all-skipped gives 0.
    """
    scorable = [i for i, t in enumerate(annotation.pos_tags)
                if TAG_INDEX[t] in pos_ids]
    if not scorable:
        return ad.constant(0.0)
    rows = ad.take_rows(token_embeddings, scorable)
    d = distances(rows, pos_matrix, squared=squared)
    neg = d * -1.0
    shift = ad.constant(neg.data.max(axis=1, keepdims=True))
    shifted = neg - shift
    lse = ad.log(ad.exp(shifted).sum(axis=1, keepdims=True))
    onehot = np.zeros((len(scorable), len(pos_ids)))
    for r, i in enumerate(scorable):
        onehot[r, pos_ids.index(TAG_INDEX[annotation.pos_tags[i]])] = 1.0
    picked = (shifted * ad.constant(onehot)).sum(axis=1, keepdims=True)
    return (lse - picked).mean()


def composite_loss_with_pos(ic_terms, slot_terms, pos_terms, beta: float) -> Tensor:
    """(1/|Q|) sum over queries of [IC + slots + beta * POS].

    ``slot_terms`` entries may be None for intent-only query utterances.
    """
    n = len(ic_terms)
    total = None
    for ic, sl, ps in zip(ic_terms, slot_terms, pos_terms):
        term = ic
        if sl is not None:
            term = term + sl
        term = term + ps * beta
        total = term if total is None else total + term
    return total * (1.0 / n)
