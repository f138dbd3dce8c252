"""Data augmentation: slot-list substitution, EDA edits, backtranslation.

Every augmenter emits exactly one synthetic utterance per original, so an
augmented set is exactly double the input. Originals keep their labels;
synthetics that could not be changed are verbatim duplicates carrying a
flag. Backtranslated synthetics keep the intent but drop slot labels
(round-trip translation destroys token alignment), making them
intent-only.
"""

from __future__ import annotations

import enum
import json
import math
import subprocess
import zlib
from dataclasses import dataclass, field

import numpy as np

from .corpus import Dataset, SlotValueDict, Utterance, bio_spans


class AugmentMethod(enum.Enum):
    SLOT_LIST = "slotlist"
    BACKTRANSLATION = "bt"
    EDA = "eda"


class AugmentLevel(enum.Enum):
    SUPPORT_MTRAIN = "s-mtrain"
    SUPPORT_QUERY_MTRAIN = "sq-mtrain"
    SUPPORT_MTRAIN_MTEST = "s-mtrain-mtest"
    SUPPORT_MTEST = "s-mtest"

    @property
    def at_train(self) -> bool:
        return self in (AugmentLevel.SUPPORT_MTRAIN,
                        AugmentLevel.SUPPORT_QUERY_MTRAIN,
                        AugmentLevel.SUPPORT_MTRAIN_MTEST)

    @property
    def at_test(self) -> bool:
        return self in (AugmentLevel.SUPPORT_MTEST,
                        AugmentLevel.SUPPORT_MTRAIN_MTEST)


class EdaOp(enum.Enum):
    SYNONYM_REPLACE = "sr"
    RANDOM_INSERT = "ri"
    RANDOM_SWAP = "rs"
    RANDOM_DELETE = "rd"


ALL_EDA_OPS = frozenset(EdaOp)


@dataclass(frozen=True)
class AugmentationConfig:
    method: AugmentMethod = AugmentMethod.SLOT_LIST
    level: AugmentLevel = AugmentLevel.SUPPORT_MTRAIN
    eda_alpha: float = 0.1
    eda_ops: frozenset = ALL_EDA_OPS
    bt_sampling_temperature: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.eda_alpha < 1:
            raise ValueError("eda_alpha must be in [0, 1)")
        if self.method is AugmentMethod.EDA and not self.eda_ops:
            raise ValueError("EDA needs at least one operation")
        object.__setattr__(self, "eda_ops", frozenset(self.eda_ops))


@dataclass(frozen=True)
class AugmentedUtterance:
    utterance: Utterance
    verbatim_copy: bool  # True when nothing could be changed
    source_id: str


def _synth_id(u: Utterance) -> str:
    return u.id + "::aug"


def _duplicate(u: Utterance) -> AugmentedUtterance:
    return AugmentedUtterance(
        utterance=Utterance(tokens=u.tokens, intent=u.intent, slots=u.slots,
                            id=_synth_id(u)),
        verbatim_copy=True, source_id=u.id)


# slot-list values -------------------------------------------------------------


def augment_slot_list(utterances, svdict: SlotValueDict, slot_vocab,
                      rng: np.random.Generator):
    """Replace one slot span per utterance with a different dictionary value.

    Spans whose type has fewer than two known values are not replaceable;
    utterances with no replaceable span are duplicated verbatim.
    """
    out = []
    for u in utterances:
        if u.slots is None:
            out.append(_duplicate(u))
            continue
        labels = [slot_vocab.label(s) for s in u.slots]
        spans = bio_spans(labels)
        eligible = [s for s in spans if len(svdict.entries.get(s[2], ())) >= 2]
        if not eligible:
            out.append(_duplicate(u))
            continue
        start, end, stype = eligible[rng.integers(len(eligible))]
        current = tuple(u.tokens[start:end + 1])
        alternatives = [v for v in svdict.entries[stype] if v != current]
        value = alternatives[rng.integers(len(alternatives))]
        tokens = list(u.tokens[:start]) + list(value) + list(u.tokens[end + 1:])
        new_labels = (labels[:start]
                      + [f"B-{stype}"] + [f"I-{stype}"] * (len(value) - 1)
                      + labels[end + 1:])
        out.append(AugmentedUtterance(
            utterance=Utterance(
                tokens=tuple(tokens), intent=u.intent,
                slots=tuple(slot_vocab.id(s) for s in new_labels),
                id=_synth_id(u)),
            verbatim_copy=False, source_id=u.id))
    return out


# EDA ---------------------------------------------------------------------------

_DEFAULT_SYNONYMS = {
    "book": ("reserve",), "reserve": ("book",),
    "find": ("locate", "get"), "show": ("display", "list"),
    "give": ("hand",), "get": ("fetch",),
    "play": ("stream",), "start": ("begin",),
    "want": ("need",), "need": ("want",),
    "table": ("seat",), "spot": ("place",),
    "message": ("note",), "note": ("message",),
    "movie": ("film",), "songs": ("tracks",), "tracks": ("songs",),
    "music": ("tunes",), "cheapest": ("lowest",),
    "plane": ("aircraft",), "aircraft": ("plane",),
    "big": ("large", "huge"), "small": ("little",),
    "fast": ("quick",), "now": ("immediately",),
    "please": ("kindly",), "weather": ("forecast",),
    "schedule": ("plan",), "price": ("cost",), "prices": ("costs",),
    "flight": ("trip",), "flights": ("trips",),
}


def load_synonym_lexicon(path) -> dict:
    """word TAB synonym TAB synonym..., one word per line."""
    lex = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ValueError(f"synonym line needs word TAB synonyms: {line!r}")
            lex[parts[0].lower()] = tuple(parts[1:])
    return lex


def default_synonyms() -> dict:
    return dict(_DEFAULT_SYNONYMS)


def _o_positions(u: Utterance, o_id) -> list:
    if u.slots is None:
        return list(range(len(u.tokens)))
    return [i for i, s in enumerate(u.slots) if s == o_id]


def _valid_insert_positions(u: Utterance, slot_vocab) -> list:
    """Gap indices where an O token will not split a B-I span."""
    n = len(u.tokens)
    if u.slots is None:
        return list(range(n + 1))
    positions = []
    for p in range(n + 1):
        if p == n or not slot_vocab.label(u.slots[p]).startswith("I-"):
            positions.append(p)
    return positions


def augment_eda(utterances, cfg: AugmentationConfig, synonyms, slot_vocab,
                rng: np.random.Generator):
    """One randomly chosen EDA operation per utterance.

    Synonym replacement may touch any token and inherits its slot label;
    insert, swap, and delete act only on O tokens so BIO validity is
    preserved. Inserted tokens are labeled O.
    """
    o_id = slot_vocab.id("O") if "O" in slot_vocab else None
    ops = sorted(cfg.eda_ops, key=lambda o: o.value)
    out = []
    for u in utterances:
        op = ops[rng.integers(len(ops))]
        n = len(u.tokens)
        n_edit = max(1, math.ceil(cfg.eda_alpha * n))
        tokens = list(u.tokens)
        slots = None if u.slots is None else list(u.slots)
        changed = False

        if op is EdaOp.SYNONYM_REPLACE:
            candidates = [i for i, t in enumerate(tokens) if synonyms.get(t.lower())]
            rng.shuffle(candidates)
            for i in candidates[:n_edit]:
                options = synonyms[tokens[i].lower()]
                tokens[i] = options[rng.integers(len(options))]
                changed = True

        elif op is EdaOp.RANDOM_INSERT:
            sources = [t for t in tokens if synonyms.get(t.lower())]
            for _ in range(n_edit):
                gaps = _valid_insert_positions(
                    Utterance(tokens=tuple(tokens), intent=u.intent,
                              slots=None if slots is None else tuple(slots),
                              id=u.id), slot_vocab)
                if not sources or not gaps:
                    break
                word = sources[rng.integers(len(sources))]
                options = synonyms[word.lower()]
                new_tok = options[rng.integers(len(options))]
                p = gaps[rng.integers(len(gaps))]
                tokens.insert(p, new_tok)
                if slots is not None:
                    slots.insert(p, o_id)
                changed = True

        elif op is EdaOp.RANDOM_SWAP:
            o_pos = _o_positions(u, o_id)
            if len(o_pos) >= 2:
                for _ in range(n_edit):
                    i, j = rng.choice(len(o_pos), size=2, replace=False)
                    a, b = o_pos[i], o_pos[j]
                    tokens[a], tokens[b] = tokens[b], tokens[a]
                changed = True

        elif op is EdaOp.RANDOM_DELETE:
            o_pos = set(_o_positions(u, o_id))
            keep = [i for i in range(n)
                    if i not in o_pos or rng.random() >= cfg.eda_alpha]
            if keep and len(keep) < n:
                tokens = [tokens[i] for i in keep]
                if slots is not None:
                    slots = [slots[i] for i in keep]
                changed = True

        if not changed or tuple(tokens) == u.tokens:
            out.append(_duplicate(u))
            continue
        out.append(AugmentedUtterance(
            utterance=Utterance(tokens=tuple(tokens), intent=u.intent,
                                slots=None if slots is None else tuple(slots),
                                id=_synth_id(u)),
            verbatim_copy=False, source_id=u.id))
    return out


# backtranslation ----------------------------------------------------------------


class TranslationError(Exception):
    pass


class TranslationClient:
    """Interface: translate one token sequence between languages.

    Implementations must support sampled decoding via the temperature
    argument and be safe for concurrent calls.
    """

    def translate(self, tokens, source: str, target: str,
                  temperature: float) -> list:
        raise NotImplementedError


class IdentityTranslationClient(TranslationClient):
    def translate(self, tokens, source, target, temperature):
        return list(tokens)


class MockTranslationClient(TranslationClient):
    """Deterministic seeded paraphraser standing in for a real NMT model.

    Each call derives its RNG from (seed, direction, input), so identical
    requests paraphrase identically and the client is stateless across
    calls. Higher temperature means more token edits.
    """

    _FUNCTION_WORDS = {"a", "an", "the", "please", "some", "right", "me"}

    def __init__(self, seed: int = 0, synonyms=None):
        self.seed = seed
        self.synonyms = default_synonyms() if synonyms is None else dict(synonyms)

    def translate(self, tokens, source, target, temperature):
        if temperature < 0:
            raise TranslationError("temperature must be non-negative")
        key = zlib.crc32((source + "\x1f" + target + "\x1f"
                          + "\x1f".join(tokens)).encode("utf-8"))
        rng = np.random.default_rng(np.random.SeedSequence((self.seed, key)))
        p_edit = min(0.5, 0.2 * temperature)
        out = []
        for tok in tokens:
            r = rng.random()
            if tok.lower() in self._FUNCTION_WORDS and r < p_edit:
                continue  # dropped function word
            options = self.synonyms.get(tok.lower())
            if options and rng.random() < p_edit:
                out.append(options[rng.integers(len(options))])
            else:
                out.append(tok)
        if len(out) >= 2 and rng.random() < p_edit:
            i = int(rng.integers(len(out) - 1))
            out[i], out[i + 1] = out[i + 1], out[i]
        if not out:
            out = [tokens[0]]
        return out


def round_trip(client: TranslationClient, tokens, temperature: float,
               pivot: str = "es") -> list:
    mid = client.translate(list(tokens), "en", pivot, temperature)
    back = client.translate(list(mid), pivot, "en", temperature)
    if not back:
        raise TranslationError("client returned an empty token sequence")
    return list(back)


def augment_backtranslation(utterances, client: TranslationClient,
                            cfg: AugmentationConfig,
                            rng: np.random.Generator | None = None):
    """Round-trip paraphrases; synthetics carry the intent but no slots.

    Client failures fall back to a flagged verbatim duplicate.
    """
    out = []
    n_failures = 0
    for u in utterances:
        try:
            tokens = round_trip(client, u.tokens, cfg.bt_sampling_temperature)
        except TranslationError:
            n_failures += 1
            out.append(_duplicate(u))
            continue
        out.append(AugmentedUtterance(
            utterance=Utterance(tokens=tuple(tokens), intent=u.intent,
                                slots=None, id=_synth_id(u)),
            verbatim_copy=False, source_id=u.id))
    return out, n_failures


# level plumbing -----------------------------------------------------------------


@dataclass
class AugmentResources:
    """Everything an augmenter might need, wired once per run."""

    slot_value_dict: SlotValueDict | None = None
    synonyms: dict = field(default_factory=default_synonyms)
    translation_client: TranslationClient | None = None
    slot_vocab: object = None


def augment_utterances(utterances, cfg: AugmentationConfig,
                       resources: AugmentResources,
                       rng: np.random.Generator):
    """Originals plus one synthetic per original: exactly double the input."""
    utterances = list(utterances)
    if cfg.method is AugmentMethod.SLOT_LIST:
        if resources.slot_value_dict is None:
            raise ValueError("slot-list augmentation needs a slot value dict")
        synth = augment_slot_list(utterances, resources.slot_value_dict,
                                  resources.slot_vocab, rng)
    elif cfg.method is AugmentMethod.EDA:
        synth = augment_eda(utterances, cfg, resources.synonyms,
                            resources.slot_vocab, rng)
    elif cfg.method is AugmentMethod.BACKTRANSLATION:
        client = resources.translation_client or MockTranslationClient(cfg.seed)
        synth, _ = augment_backtranslation(utterances, client, cfg, rng)
    else:
        raise ValueError(f"unknown method {cfg.method!r}")
    return utterances + [a.utterance for a in synth], synth


def apply_augmentation(episode, phase: str, cfg: AugmentationConfig,
                       resources: AugmentResources,
                       rng: np.random.Generator):
    """Double the episode sets the configured level touches in this phase.

    ``phase`` is "meta-train" or "meta-test"; untouched sets pass through
    unchanged so level isolation holds exactly.
    """
    from .episode import Episode

    if phase not in ("meta-train", "meta-test"):
        raise ValueError(f"unknown phase {phase!r}")
    support, query = episode.support, episode.query
    if phase == "meta-train" and cfg.level.at_train:
        support, _ = augment_utterances(support, cfg, resources, rng)
        if cfg.level is AugmentLevel.SUPPORT_QUERY_MTRAIN:
            query, _ = augment_utterances(query, cfg, resources, rng)
    elif phase == "meta-test" and cfg.level.at_test:
        support, _ = augment_utterances(support, cfg, resources, rng)
    else:
        return episode
    return Episode(support=tuple(support), query=tuple(query),
                   intent_classes=episode.intent_classes, kmax=episode.kmax)


# wire protocol -------------------------------------------------------------------


def serve_translation(client: TranslationClient, rfile, wfile) -> None:
    """Serve line-delimited JSON translate requests until EOF.

    Request: {"tokens": [...], "source": "en", "target": "es",
    "temperature": 0.7}; response: {"tokens": [...]} or {"error": "..."}.
    """
    for line in rfile:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            tokens = client.translate(req["tokens"], req["source"],
                                      req["target"], float(req["temperature"]))
            resp = {"tokens": list(tokens)}
        except Exception as e:  # protocol surface: report, keep serving
            resp = {"error": str(e)}
        wfile.write(json.dumps(resp) + "\n")
        wfile.flush()


class SubprocessTranslationClient(TranslationClient):
    """Talks the line protocol to a translator subprocess over its pipes."""

    def __init__(self, argv):
        self.argv = list(argv)
        self._proc = None

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        return self._proc

    def translate(self, tokens, source, target, temperature):
        proc = self._ensure()
        req = {"tokens": list(tokens), "source": source, "target": target,
               "temperature": temperature}
        try:
            proc.stdin.write(json.dumps(req) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as e:
            raise TranslationError(f"translator process failed: {e}") from e
        if not line:
            raise TranslationError("translator process closed the pipe")
        resp = json.loads(line)
        if "error" in resp:
            raise TranslationError(resp["error"])
        tokens_out = resp.get("tokens")
        if not tokens_out:
            raise TranslationError("empty token sequence from translator")
        return tokens_out

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)
        self._proc = None
