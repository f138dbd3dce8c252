import json

import pytest

from fewshot_icsf import corpus
from fewshot_icsf.corpus import (
    BioValidationError, DatasetFormatError, SplitSpec, build_slot_value_dict,
    build_token_vocab, load_dataset, load_split, make_split_atis_style,
    make_split_snips_style, save_dataset, save_split,
)
from fewshot_icsf.synthetic import generate, snips_like
from oracles import naive_bio_spans


def write_lines(path, lines):
    path.write_text("\n".join(json.dumps(r) for r in lines) + "\n", encoding="utf-8")


def test_load_minimal_record(tmp_path):
    f = tmp_path / "d.jsonl"
    write_lines(f, [{"tokens": ["book", "a", "table"], "intent": "BookRestaurant",
                     "slots": ["O", "O", "O"]}])
    ds = load_dataset(f)
    assert len(ds.utterances) == 1
    assert len(ds.intent_vocab) == 1
    assert len(ds.slot_vocab) == 1
    u = ds.utterances[0]
    assert u.tokens == ("book", "a", "table")
    assert ds.intent_vocab.label(u.intent) == "BookRestaurant"
    assert u.id == "0"  # auto-assigned from line index


def test_orphan_i_tag_is_hard_error(tmp_path):
    f = tmp_path / "d.jsonl"
    write_lines(f, [{"tokens": ["x", "y"], "intent": "a",
                     "slots": ["I-facility", "O"], "id": "u7"}])
    with pytest.raises(BioValidationError) as exc:
        load_dataset(f)
    assert exc.value.utterance_id == "u7"
    assert exc.value.position == 0


def test_i_after_wrong_type_is_error(tmp_path):
    f = tmp_path / "d.jsonl"
    write_lines(f, [{"tokens": ["x", "y"], "intent": "a", "slots": ["B-a", "I-b"]}])
    with pytest.raises(BioValidationError):
        load_dataset(f)


def test_malformed_json_reports_line(tmp_path):
    f = tmp_path / "d.jsonl"
    f.write_text('{"tokens": ["a"], "intent": "x"}\n{broken\n', encoding="utf-8")
    with pytest.raises(DatasetFormatError) as exc:
        load_dataset(f)
    assert exc.value.line == 2


def test_length_mismatch_and_bad_fields(tmp_path):
    f = tmp_path / "d.jsonl"
    write_lines(f, [{"tokens": ["a", "b"], "intent": "x", "slots": ["O"]}])
    with pytest.raises(DatasetFormatError):
        load_dataset(f)
    write_lines(f, [{"tokens": [], "intent": "x"}])
    with pytest.raises(DatasetFormatError):
        load_dataset(f)
    write_lines(f, [{"tokens": ["a"], "intent": 3}])
    with pytest.raises(DatasetFormatError):
        load_dataset(f)
    write_lines(f, [{"tokens": ["a"], "intent": "x", "id": "u"},
                    {"tokens": ["b"], "intent": "x", "id": "u"}])
    with pytest.raises(DatasetFormatError):
        load_dataset(f)


def test_intent_only_records_allowed(tmp_path):
    f = tmp_path / "d.jsonl"
    write_lines(f, [{"tokens": ["hello", "there"], "intent": "greet"}])
    ds = load_dataset(f)
    assert ds.utterances[0].slots is None


def test_round_trip(tmp_path):
    ds = generate(snips_like(), n_per_intent=10, seed=3)
    f = tmp_path / "out.jsonl"
    save_dataset(ds, f)
    ds2 = load_dataset(f)
    assert corpus.dataset_records(ds) == corpus.dataset_records(ds2)


def test_generated_corpus_vocab_matches_grammar(tmp_path):
    # the generator is its own oracle for label inventories
    spec = snips_like()
    ds = generate(spec, n_per_intent=10, seed=0)
    f = tmp_path / "g.jsonl"
    save_dataset(ds, f)
    loaded = load_dataset(f)
    assert len(loaded.utterances) == 100
    assert set(loaded.intent_vocab.labels) == {ig.intent for ig in spec.intents}
    expected_slots = {"O"}
    for ig in spec.intents:
        for tpl in ig.templates:
            for tok in tpl:
                if tok.startswith("["):
                    expected_slots.add("B-" + tok[1:-1])
                    # multi-token values exist for every type that has one
    assert set(loaded.slot_vocab.labels) <= expected_slots | {
        "I-" + t for t in spec.slot_values}


# splits -----------------------------------------------------------------


def _dataset_with_counts(counts):
    records = []
    lineno = 1
    for label, n in counts.items():
        for k in range(n):
            records.append((lineno, {"tokens": ["w"], "intent": label,
                                     "id": f"{label}-{k}"}))
            lineno += 1
    return corpus._dataset_from_records(records)


def test_snips_split_7_intents():
    ds = _dataset_with_counts({f"i{k}": 4 for k in range(7)})
    split = make_split_snips_style(ds, n_train=4, n_test=3, seed=0)
    assert len(split.meta_train) == 4
    assert len(split.meta_test) == 3
    assert split.dev == frozenset()
    again = make_split_snips_style(ds, n_train=4, n_test=3, seed=0)
    assert again == split
    assert make_split_snips_style(ds, n_train=4, n_test=3, seed=1) != split


def test_snips_split_too_many_requested():
    ds = _dataset_with_counts({f"i{k}": 4 for k in range(7)})
    with pytest.raises(ValueError):
        make_split_snips_style(ds, n_train=4, n_test=4, seed=0)


def test_split_union_covers_classes():
    ds = _dataset_with_counts({f"i{k}": 4 for k in range(10)})
    split = make_split_snips_style(ds, n_train=4, n_test=3, seed=5)
    all_ids = set(u.intent for u in ds.utterances)
    assert split.meta_train | split.meta_test | split.dev == all_ids


def test_atis_split_filter_is_strict():
    counts = {"A": 20, "B": 16, "C": 15, "D": 10, "E": 30, "F": 40, "G": 22,
              "H": 19, "I": 25, "J": 17, "K": 33, "L": 44, "M": 18, "N": 21}
    ds = _dataset_with_counts(counts)
    split = make_split_atis_style(ds, min_count=15, n_train=5, n_test=7, seed=0)
    eligible = {ds.intent_vocab.id(c) for c, n in counts.items() if n > 15}
    excluded = {ds.intent_vocab.id(c) for c in ("C", "D")}
    union = split.meta_train | split.meta_test | split.dev
    assert union == eligible
    assert not (union & excluded)
    assert len(split.meta_train) == 5
    assert len(split.meta_test) == 7
    assert len(split.dev) == len(eligible) - 12


def test_atis_split_seed_sensitivity():
    ds = _dataset_with_counts({f"c{k}": 20 + k for k in range(13)})
    s0 = make_split_atis_style(ds, seed=0)
    s1 = make_split_atis_style(ds, seed=1)
    assert s0 != s1


def test_atis_split_insufficient_classes():
    ds = _dataset_with_counts({"A": 20, "B": 20, "C": 20, "D": 5})
    with pytest.raises(ValueError):
        make_split_atis_style(ds, min_count=15, n_train=5, n_test=7, seed=0)


def test_split_file_round_trip(tmp_path):
    ds = _dataset_with_counts({f"i{k}": 4 for k in range(8)})
    split = make_split_snips_style(ds, 4, 3, seed=2)
    f = tmp_path / "split.json"
    save_split(split, ds, f)
    assert load_split(ds, f) == split


def test_split_disjointness_enforced():
    with pytest.raises(ValueError):
        SplitSpec(meta_train=frozenset({1, 2, 3}), meta_test=frozenset({3, 4, 5}),
                  dev=frozenset(), seed=0)


# slot value dict -----------------------------------------------------------


def _slot_dataset():
    records = [
        (1, {"tokens": ["a", "pool", "bar"], "intent": "t1",
             "slots": ["O", "B-facility", "O"], "id": "a"}),
        (2, {"tokens": ["an", "indoor", "bar"], "intent": "t1",
             "slots": ["O", "B-facility", "O"], "id": "b"}),
        (3, {"tokens": ["the", "smoking", "room", "spot"], "intent": "t2",
             "slots": ["O", "B-facility", "I-facility", "O"], "id": "c"}),
        (4, {"tokens": ["a", "pool", "bar"], "intent": "t2",
             "slots": ["O", "B-facility", "O"], "id": "d"}),
        (5, {"tokens": ["go", "to", "paris"], "intent": "t3",
             "slots": ["O", "O", "B-city"], "id": "e"}),
        (6, {"tokens": ["plain", "words"], "intent": "t4",
             "slots": ["O", "O"], "id": "f"}),
    ]
    return corpus._dataset_from_records(records)


def _split_over(ds, train_labels):
    ids = {ds.intent_vocab.id(x) for x in train_labels}
    rest = set(u.intent for u in ds.utterances) - ids
    # pad to satisfy the >=3 rule with throwaway ids
    return SplitSpec(meta_train=frozenset(ids | {90, 91, 92}),
                     meta_test=frozenset({80, 81, 82}),
                     dev=frozenset(), seed=0)


def test_slot_value_dict_contents_and_dedup():
    ds = _slot_dataset()
    split = _split_over(ds, {"t1", "t2", "t3"})
    d = build_slot_value_dict(ds, split)
    assert ("pool",) in d.entries["facility"]
    assert ("indoor",) in d.entries["facility"]
    assert ("smoking", "room") in d.entries["facility"]
    assert d.entries["facility"].count(("pool",)) == 1  # deduped
    assert d.entries["city"] == (("paris",),)


def test_slot_value_dict_respects_split():
    ds = _slot_dataset()
    split = _split_over(ds, {"t3"})
    d = build_slot_value_dict(ds, split)
    assert "facility" not in d.entries
    assert d.entries["city"] == (("paris",),)


def test_slot_value_dict_empty_when_all_o():
    ds = _slot_dataset()
    split = _split_over(ds, {"t4"})
    assert build_slot_value_dict(ds, split).entries == {}


def test_slot_value_dict_matches_naive_scanner():
    ds = generate(snips_like(), n_per_intent=20, seed=9)
    classes = sorted(set(u.intent for u in ds.utterances))
    split = SplitSpec(meta_train=frozenset(classes[:5]),
                      meta_test=frozenset(classes[5:8]),
                      dev=frozenset(classes[8:]), seed=0)
    got = build_slot_value_dict(ds, split)
    expected = {}
    for u in ds.utterances:
        if u.intent not in split.meta_train or u.slots is None:
            continue
        labels = [ds.slot_vocab.label(s) for s in u.slots]
        for start, end, stype in naive_bio_spans(labels):
            vals = expected.setdefault(stype, [])
            v = tuple(u.tokens[start:end + 1])
            if v not in vals:
                vals.append(v)
    assert got.entries == {k: tuple(v) for k, v in expected.items()}


def test_token_vocab_has_unk():
    ds = generate(snips_like(), n_per_intent=5, seed=0)
    vocab = build_token_vocab(ds)
    assert vocab.label(0) == "<unk>"
    assert "table" in vocab
    assert len(set(vocab.labels)) == len(vocab)
