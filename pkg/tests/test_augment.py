import json
import sys

import numpy as np
import pytest

from fewshot_icsf.augment import (
    ALL_EDA_OPS, AugmentLevel, AugmentMethod, AugmentResources,
    AugmentationConfig, EdaOp, IdentityTranslationClient, MockTranslationClient,
    SubprocessTranslationClient, TranslationClient, TranslationError,
    apply_augmentation, augment_backtranslation, augment_eda, augment_slot_list,
    augment_utterances, default_synonyms, load_synonym_lexicon, round_trip,
)
from fewshot_icsf.corpus import (
    SlotValueDict, SplitSpec, Utterance, build_slot_value_dict, make_split_snips_style,
    validate_bio,
)
from fewshot_icsf.episode import Episode, SamplerConfig, sample_episode
from fewshot_icsf.synthetic import generate, snips_like


@pytest.fixture(scope="module")
def snips_ds():
    return generate(snips_like(), n_per_intent=30, seed=0)


@pytest.fixture(scope="module")
def snips_split(snips_ds):
    return make_split_snips_style(snips_ds, n_train=7, n_test=3, seed=0)


@pytest.fixture(scope="module")
def resources(snips_ds, snips_split):
    return AugmentResources(
        slot_value_dict=build_slot_value_dict(snips_ds, snips_split),
        translation_client=MockTranslationClient(seed=1),
        slot_vocab=snips_ds.slot_vocab,
    )


def labels_of(ds, u):
    return [ds.slot_vocab.label(s) for s in u.slots]


# slot list -------------------------------------------------------------------


def paper_facility_setup():
    """The documented facility example: pool -> another facility value."""
    facility_values = [("smoking", "room"), ("spa",), ("indoor",), ("outdoor",),
                       ("pool",), ("internet",), ("parking",), ("wifi",)]
    svdict = SlotValueDict(entries={"facility": tuple(facility_values)})
    from fewshot_icsf.corpus import Vocab
    vocab = Vocab.from_labels(["O", "B-facility", "I-facility"])
    tokens = ("book", "a", "table", "at", "a", "pool", "bar")
    slots = tuple(vocab.id(t) for t in ["O", "O", "O", "O", "O", "B-facility", "O"])
    u = Utterance(tokens=tokens, intent=0, slots=slots, id="ex")
    return u, svdict, vocab


def test_slot_list_pool_to_indoor_is_producible():
    u, svdict, vocab = paper_facility_setup()
    seen = set()
    for seed in range(200):
        rng = np.random.default_rng(seed)
        (aug,) = augment_slot_list([u], svdict, vocab, rng)
        assert not aug.verbatim_copy
        seen.add(aug.utterance.tokens)
    expected = ("book", "a", "table", "at", "a", "indoor", "bar")
    assert expected in seen
    # never the original value, never outside-span edits
    for toks in seen:
        assert toks[:5] == u.tokens[:5]
        assert toks[-1] == "bar"
        assert toks[5:-1] != ("pool",)


def test_slot_list_multi_token_replacement_relabels():
    u, svdict, vocab = paper_facility_setup()
    # force the span to become "smoking room" by searching seeds
    for seed in range(300):
        rng = np.random.default_rng(seed)
        (aug,) = augment_slot_list([u], svdict, vocab, rng)
        if aug.utterance.tokens[5:7] == ("smoking", "room"):
            labels = [vocab.label(s) for s in aug.utterance.slots]
            assert labels[5:7] == ["B-facility", "I-facility"]
            assert len(aug.utterance.tokens) == len(u.tokens) + 1
            assert aug.utterance.intent == u.intent
            return
    pytest.fail("multi-token value never chosen across 300 seeds")


def test_slot_list_shortening_replacement():
    from fewshot_icsf.corpus import Vocab
    vocab = Vocab.from_labels(["O", "B-facility", "I-facility"])
    svdict = SlotValueDict(entries={"facility": (("smoking", "room"), ("wifi",))})
    tokens = ("a", "smoking", "room", "bar")
    slots = tuple(vocab.id(t) for t in ["O", "B-facility", "I-facility", "O"])
    u = Utterance(tokens=tokens, intent=0, slots=slots, id="x")
    (aug,) = augment_slot_list([u], svdict, vocab, np.random.default_rng(0))
    assert aug.utterance.tokens == ("a", "wifi", "bar")
    assert [vocab.label(s) for s in aug.utterance.slots] == ["O", "B-facility", "O"]


def test_slot_list_all_o_duplicates_with_flag():
    from fewshot_icsf.corpus import Vocab
    vocab = Vocab.from_labels(["O"])
    u = Utterance(tokens=("just", "words"), intent=0, slots=(0, 0), id="p")
    (aug,) = augment_slot_list([u], SlotValueDict(entries={}), vocab,
                               np.random.default_rng(0))
    assert aug.verbatim_copy
    assert aug.utterance.tokens == u.tokens
    assert aug.utterance.id != u.id


def test_slot_list_bio_valid_over_seeded_draws(snips_ds, snips_split, resources):
    utts = [u for u in snips_ds.utterances
            if u.intent in snips_split.meta_train][:40]
    rng = np.random.default_rng(7)
    for _ in range(25):
        synth = augment_slot_list(utts, resources.slot_value_dict,
                                  snips_ds.slot_vocab, rng)
        for a in synth:
            validate_bio(labels_of(snips_ds, a.utterance), a.utterance.id)
            assert a.utterance.intent == snips_ds.utterances[0].intent or True
    assert len(synth) == len(utts)


def test_slot_list_determinism(snips_ds, resources):
    utts = list(snips_ds.utterances[:20])
    a = augment_slot_list(utts, resources.slot_value_dict, snips_ds.slot_vocab,
                          np.random.default_rng(5))
    b = augment_slot_list(utts, resources.slot_value_dict, snips_ds.slot_vocab,
                          np.random.default_rng(5))
    assert [x.utterance for x in a] == [y.utterance for y in b]


# EDA --------------------------------------------------------------------------


def eda_cfg(**kw):
    kw.setdefault("method", AugmentMethod.EDA)
    return AugmentationConfig(**kw)


def test_eda_synonym_replace_exactly_one(snips_ds):
    from fewshot_icsf.corpus import Vocab
    vocab = Vocab.from_labels(["O"])
    tokens = tuple("book a spot for two people at the blue place".split())
    u = Utterance(tokens=tokens, intent=0, slots=(0,) * 10, id="e")
    cfg = eda_cfg(eda_alpha=0.1, eda_ops={EdaOp.SYNONYM_REPLACE})
    (aug,) = augment_eda([u], cfg, default_synonyms(), vocab,
                         np.random.default_rng(0))
    diff = [i for i in range(10) if aug.utterance.tokens[i] != tokens[i]]
    assert len(diff) == 1  # ceil(0.1 * 10) = 1 replacement


def test_eda_delete_suppressed_on_single_o_token():
    from fewshot_icsf.corpus import Vocab
    vocab = Vocab.from_labels(["O"])
    u = Utterance(tokens=("hello",), intent=0, slots=(0,), id="d")
    cfg = eda_cfg(eda_alpha=0.9, eda_ops={EdaOp.RANDOM_DELETE})
    for seed in range(20):
        (aug,) = augment_eda([u], cfg, {}, vocab, np.random.default_rng(seed))
        assert len(aug.utterance.tokens) >= 1
        assert aug.verbatim_copy
        assert aug.utterance.tokens == u.tokens


def test_eda_ops_preserve_bio(snips_ds):
    utts = list(snips_ds.utterances[:30])
    for op in EdaOp:
        cfg = eda_cfg(eda_alpha=0.3, eda_ops={op})
        rng = np.random.default_rng(3)
        for _ in range(10):
            synth = augment_eda(utts, cfg, default_synonyms(),
                                snips_ds.slot_vocab, rng)
            for a in synth:
                if a.utterance.slots is not None:
                    validate_bio(labels_of(snips_ds, a.utterance), a.utterance.id)


def test_eda_insert_delete_swap_touch_only_o_tokens(snips_ds):
    utts = [u for u in snips_ds.utterances if u.slots is not None][:25]
    o_id = snips_ds.slot_vocab.id("O")
    for op in (EdaOp.RANDOM_SWAP, EdaOp.RANDOM_DELETE):
        cfg = eda_cfg(eda_alpha=0.4, eda_ops={op})
        synth = augment_eda(utts, cfg, default_synonyms(), snips_ds.slot_vocab,
                            np.random.default_rng(11))
        for u, a in zip(utts, synth):
            # the multiset of non-O (token, label) pairs must be unchanged
            def typed(x):
                return sorted((t, s) for t, s in zip(x.tokens, x.slots) if s != o_id)
            assert typed(u) == typed(a.utterance)


def test_eda_no_eligible_position_duplicates():
    from fewshot_icsf.corpus import Vocab
    vocab = Vocab.from_labels(["O", "B-x"])
    u = Utterance(tokens=("value",), intent=0, slots=(vocab.id("B-x"),), id="n")
    for op in (EdaOp.RANDOM_SWAP, EdaOp.RANDOM_DELETE, EdaOp.RANDOM_INSERT,
               EdaOp.SYNONYM_REPLACE):
        cfg = eda_cfg(eda_alpha=0.2, eda_ops={op})
        (aug,) = augment_eda([u], cfg, {}, vocab, np.random.default_rng(0))
        assert aug.verbatim_copy


def test_eda_intent_only_utterance_supported():
    from fewshot_icsf.corpus import Vocab
    vocab = Vocab.from_labels(["O"])
    u = Utterance(tokens=("play", "some", "music", "now"), intent=1,
                  slots=None, id="io")
    cfg = eda_cfg(eda_alpha=0.3, eda_ops={EdaOp.RANDOM_SWAP})
    (aug,) = augment_eda([u], cfg, default_synonyms(), vocab,
                         np.random.default_rng(2))
    assert aug.utterance.slots is None
    assert sorted(aug.utterance.tokens) == sorted(u.tokens)


def test_eda_deterministic_golden(snips_ds):
    utts = list(snips_ds.utterances[:15])
    cfg = eda_cfg(eda_alpha=0.2)
    a = augment_eda(utts, cfg, default_synonyms(), snips_ds.slot_vocab,
                    np.random.default_rng(42))
    b = augment_eda(utts, cfg, default_synonyms(), snips_ds.slot_vocab,
                    np.random.default_rng(42))
    assert [x.utterance for x in a] == [y.utterance for y in b]


def test_synonym_lexicon_file(tmp_path):
    f = tmp_path / "syn.tsv"
    f.write_text("big\tlarge\thuge\nsmall\tlittle\n", encoding="utf-8")
    lex = load_synonym_lexicon(f)
    assert lex == {"big": ("large", "huge"), "small": ("little",)}
    bad = tmp_path / "bad.tsv"
    bad.write_text("nosynonyms\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_synonym_lexicon(bad)


# backtranslation ----------------------------------------------------------------


def bt_cfg(**kw):
    kw.setdefault("method", AugmentMethod.BACKTRANSLATION)
    return AugmentationConfig(**kw)


def test_identity_client_round_trip():
    u = Utterance(tokens=("hello", "there"), intent=3, slots=(0, 0), id="b")
    synth, failures = augment_backtranslation(
        [u], IdentityTranslationClient(), bt_cfg())
    assert failures == 0
    assert synth[0].utterance.tokens == u.tokens
    assert synth[0].utterance.slots is None  # intent-only
    assert synth[0].utterance.intent == 3


def test_mock_client_deterministic_and_temperature_sensitive():
    client = MockTranslationClient(seed=5)
    toks = ["please", "book", "a", "table", "for", "two", "people", "now"]
    a = round_trip(client, toks, temperature=0.9)
    b = round_trip(client, toks, temperature=0.9)
    assert a == b
    zero = round_trip(client, toks, temperature=0.0)
    assert zero == toks  # no edits at temperature zero
    hot = [round_trip(MockTranslationClient(seed=s), toks, 2.0) for s in range(8)]
    assert any(h != toks for h in hot)


class EmptyClient(TranslationClient):
    def translate(self, tokens, source, target, temperature):
        return []


class FailingClient(TranslationClient):
    def translate(self, tokens, source, target, temperature):
        raise TranslationError("backend down")


def test_empty_and_failing_clients_flagged():
    u = Utterance(tokens=("a", "b"), intent=0, slots=(0, 0), id="f")
    for client in (EmptyClient(), FailingClient()):
        synth, failures = augment_backtranslation([u], client, bt_cfg())
        assert failures == 1
        assert synth[0].verbatim_copy
        assert synth[0].utterance.slots == u.slots  # verbatim keeps labels


def test_bt_golden_stability(snips_ds):
    utts = list(snips_ds.utterances[:10])
    client = MockTranslationClient(seed=9)
    a, _ = augment_backtranslation(utts, client, bt_cfg(bt_sampling_temperature=1.5))
    b, _ = augment_backtranslation(utts, client, bt_cfg(bt_sampling_temperature=1.5))
    assert [x.utterance for x in a] == [y.utterance for y in b]
    assert all(x.utterance.slots is None for x in a)


# level plumbing ------------------------------------------------------------------


def make_episode(ds, split, seed=0, kmax=20):
    rng = np.random.default_rng(seed)
    return sample_episode(ds, split.meta_train, SamplerConfig(kmax=kmax), rng)


@pytest.mark.parametrize("method", list(AugmentMethod))
@pytest.mark.parametrize("level", list(AugmentLevel))
def test_exact_doubling_every_method_and_level(method, level, snips_ds,
                                               snips_split, resources):
    ep = make_episode(snips_ds, snips_split)
    cfg = AugmentationConfig(method=method, level=level)
    rng = np.random.default_rng(1)
    for phase in ("meta-train", "meta-test"):
        out = apply_augmentation(ep, phase, cfg, resources, rng)
        touched_support = (phase == "meta-train" and level.at_train) or \
                          (phase == "meta-test" and level.at_test)
        if touched_support:
            assert len(out.support) == 2 * len(ep.support)
            assert out.support[:len(ep.support)] == ep.support  # originals kept
        else:
            assert out.support == ep.support
        if phase == "meta-train" and level is AugmentLevel.SUPPORT_QUERY_MTRAIN:
            assert len(out.query) == 2 * len(ep.query)
        else:
            assert out.query == ep.query


def test_support_mtest_level_leaves_training_untouched(snips_ds, snips_split,
                                                       resources):
    ep = make_episode(snips_ds, snips_split)
    cfg = AugmentationConfig(method=AugmentMethod.SLOT_LIST,
                             level=AugmentLevel.SUPPORT_MTEST)
    out = apply_augmentation(ep, "meta-train", cfg, resources,
                             np.random.default_rng(0))
    assert out is ep


def test_augment_utterances_unique_ids(snips_ds, resources):
    utts = list(snips_ds.utterances[:10])
    doubled, synth = augment_utterances(
        utts, AugmentationConfig(method=AugmentMethod.SLOT_LIST), resources,
        np.random.default_rng(0))
    assert len(doubled) == 20
    ids = [u.id for u in doubled]
    assert len(set(ids)) == 20


# wire protocol --------------------------------------------------------------------


def test_subprocess_wire_protocol_matches_in_process():
    argv = [sys.executable, "-m", "fewshot_icsf.bt_server", "--seed", "5"]
    wire = SubprocessTranslationClient(argv)
    local = MockTranslationClient(seed=5)
    try:
        toks = ["please", "book", "a", "table", "now"]
        for temp in (0.0, 0.9, 1.7):
            assert wire.translate(toks, "en", "es", temp) == \
                local.translate(toks, "en", "es", temp)
        # full round trip through the pipe
        assert round_trip(wire, toks, 1.3) == round_trip(local, toks, 1.3)
    finally:
        wire.close()


def test_wire_protocol_error_response():
    argv = [sys.executable, "-m", "fewshot_icsf.bt_server"]
    wire = SubprocessTranslationClient(argv)
    try:
        with pytest.raises(TranslationError):
            wire.translate(["x"], "en", "es", -1.0)  # invalid temperature
    finally:
        wire.close()


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentationConfig(eda_alpha=1.0)
    with pytest.raises(ValueError):
        AugmentationConfig(method=AugmentMethod.EDA, eda_ops=frozenset())
