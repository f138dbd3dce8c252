import math

import numpy as np
import pytest

from fewshot_icsf import autodiff as ad
from fewshot_icsf.corpus import Utterance
from fewshot_icsf.encoder import EncoderOutput
from fewshot_icsf.protonet import PrototypeError
from fewshot_icsf.syntax import (
    RuleTagger, SyntacticAnnotation, SyntaxConfig, SyntaxMode, TAG_INDEX,
    UPOS_TAGS, annotate, composite_loss_with_pos, compute_pos_prototypes,
    concat_features, load_suffix_rules, load_tag_lexicon, noun_chunk_flags,
    pos_loss, utterance_pos_loss,
)
from oracles import central_diff_grads, max_rel_error, naive_mean

LN3 = 1.0986122886681098


def test_one_is_num():
    assert RuleTagger().tag("one") == "NUM"
    assert RuleTagger().tag("42") == "NUM"


def test_noun_chunk_example():
    ann = annotate(["blue", "ribbon", "barbecue"])
    assert ann.pos_tags == ("ADJ", "NOUN", "NOUN")
    assert ann.noun_chunk == (True, True, True)


def test_unknown_word_gets_x():
    assert RuleTagger().tag("zzqx") == "X"


def test_suffix_rules_order():
    t = RuleTagger()
    assert t.tag("running") == "VERB"
    assert t.tag("quickly") == "ADV"
    assert t.tag("locations") == "NOUN"


def test_tagger_determinism():
    t = RuleTagger()
    toks = ["book", "a", "table", "at", "blue", "ribbon", "barbecue"]
    assert annotate(toks, t) == annotate(toks, t)


def test_chunk_patterns():
    assert noun_chunk_flags(("DET", "ADJ", "NOUN")) == (True, True, True)
    assert noun_chunk_flags(("VERB", "DET", "NOUN", "ADP")) == (
        False, True, True, False)
    assert noun_chunk_flags(("DET", "ADJ")) == (False, False)  # no head
    assert noun_chunk_flags(("NUM", "NOUN")) == (True, True)


def test_lexicon_and_rule_files(tmp_path):
    lex_file = tmp_path / "lex.tsv"
    lex_file.write_text("zorp\tVERB\nblee\tNOUN\n", encoding="utf-8")
    rules_file = tmp_path / "rules.tsv"
    rules_file.write_text("ful\tADJ\ns\tNOUN\n", encoding="utf-8")
    tagger = RuleTagger(lexicon=load_tag_lexicon(lex_file),
                        suffix_rules=load_suffix_rules(rules_file))
    assert tagger.tag("zorp") == "VERB"
    assert tagger.tag("joyful") == "ADJ"
    assert tagger.tag("the") == "X"  # custom lexicon replaces the built-in
    bad = tmp_path / "bad.tsv"
    bad.write_text("w\tNOT_A_TAG\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_tag_lexicon(bad)


# feature concatenation -------------------------------------------------------


def test_concat_features_shape_and_onehots():
    emb = ad.Tensor(np.zeros((1, 4)))
    ann = SyntacticAnnotation(pos_tags=(UPOS_TAGS[2],), noun_chunk=(True,))
    out = concat_features(emb, ann)
    assert out.shape == (1, 4 + 17 + 2)
    row = out.data[0]
    assert row[4 + 2] == 1.0
    assert row[4 + 17] == 1.0  # inside-chunk flag
    assert row.sum() == 2.0


def test_chunk_flag_flips_one_coordinate_pair():
    emb = ad.Tensor(np.ones((2, 3)))
    ann_in = SyntacticAnnotation(pos_tags=("NOUN", "NOUN"),
                                 noun_chunk=(True, False))
    out = concat_features(emb, ann_in)
    a, b = out.data[0], out.data[1]
    diff = np.nonzero(a != b)[0]
    assert len(diff) == 2
    assert set(diff) == {3 + 17, 3 + 17 + 1}


def test_disabled_blocks_are_zero():
    emb = ad.Tensor(np.zeros((1, 2)))
    ann = SyntacticAnnotation(pos_tags=("NOUN",), noun_chunk=(True,))
    only_pos = concat_features(emb, ann, include_chunk=False)
    assert only_pos.data[0, 2 + 17:].sum() == 0.0
    only_chunk = concat_features(emb, ann, include_pos=False)
    assert only_chunk.data[0, 2:2 + 17].sum() == 0.0
    assert only_chunk.shape == (1, 2 + 19)


def test_concatenated_prototypes_match_bruteforce_mean():
    rng = np.random.default_rng(0)
    toks = rng.normal(size=(4, 3))
    tags = ("NOUN", "VERB", "NOUN", "X")
    chunks = (True, False, False, False)
    ann = SyntacticAnnotation(pos_tags=tags, noun_chunk=chunks)
    cat = concat_features(ad.Tensor(toks), ann)
    # brute force: mean of concatenated vectors for the NOUN rows
    rows = []
    for i in (0, 2):
        onehot = [0.0] * 19
        onehot[TAG_INDEX["NOUN"]] = 1.0
        onehot[17 + (0 if chunks[i] else 1)] = 1.0
        rows.append(list(toks[i]) + onehot)
    want = naive_mean(rows)
    got = cat.data[[0, 2]].mean(axis=0)
    assert np.allclose(got, want, atol=1e-12)


# pos loss ---------------------------------------------------------------------


def fake_encoded(tok_vecs, intents=None):
    out = []
    for i, toks in enumerate(tok_vecs):
        toks = np.asarray(toks, dtype=float)
        u = Utterance(tokens=tuple("t%d" % j for j in range(len(toks))),
                      intent=0 if intents is None else intents[i],
                      slots=tuple([0] * len(toks)), id=str(i))
        out.append((u, EncoderOutput(
            utterance_embedding=ad.Tensor(toks.mean(axis=0)),
            token_embeddings=ad.Tensor(toks))))
    return out


def test_pos_loss_equidistant_three_tags():
    enc = fake_encoded([[[0.0, 1.0], [1.0, 0.0], [-1.0, 0.0]]])
    anns = [SyntacticAnnotation(pos_tags=("NOUN", "VERB", "ADJ"),
                                noun_chunk=(False,) * 3)]
    ids, matrix = compute_pos_prototypes(enc, anns)
    q = ad.Tensor(np.array([0.0, -5.0]))
    # query equidistant from VERB and ADJ but not NOUN; build a symmetric one
    q_sym = ad.Tensor(np.array([0.0, 0.0]))
    # distances to (0,1), (1,0), (-1,0) are all 1 -> ln 3
    loss = pos_loss(ids, matrix, q_sym, "NOUN")
    assert abs(loss.item() - LN3) < 1e-9


def test_pos_loss_single_class_zero():
    enc = fake_encoded([[[2.0, 2.0], [2.0, 0.0]]])
    anns = [SyntacticAnnotation(pos_tags=("NOUN", "NOUN"),
                                noun_chunk=(False, False))]
    ids, matrix = compute_pos_prototypes(enc, anns)
    loss = pos_loss(ids, matrix, ad.Tensor(np.array([9.0, 9.0])), "NOUN")
    assert loss.item() == 0.0


def test_pos_loss_missing_prototype():
    enc = fake_encoded([[[1.0, 1.0]]])
    anns = [SyntacticAnnotation(pos_tags=("NOUN",), noun_chunk=(False,))]
    ids, matrix = compute_pos_prototypes(enc, anns)
    with pytest.raises(PrototypeError):
        pos_loss(ids, matrix, ad.Tensor(np.array([0.0, 0.0])), "VERB")


def test_pos_loss_matches_bruteforce():
    from oracles import naive_distance_softmax_loss

    rng = np.random.default_rng(7)
    toks = rng.normal(size=(6, 3))
    tags = ("NOUN", "VERB", "NOUN", "ADJ", "VERB", "NOUN")
    enc = fake_encoded([toks])
    anns = [SyntacticAnnotation(pos_tags=tags, noun_chunk=(False,) * 6)]
    ids, matrix = compute_pos_prototypes(enc, anns)
    protos = [naive_mean([toks[i] for i in range(6) if tags[i] == t])
              for t in ("ADJ", "NOUN", "VERB")]
    assert ids == tuple(sorted(TAG_INDEX[t] for t in ("NOUN", "VERB", "ADJ")))
    q = rng.normal(size=3)
    got = pos_loss(ids, matrix, ad.Tensor(q), "VERB").item()
    want = naive_distance_softmax_loss(q, protos, 2)
    assert abs(got - want) < 1e-9


def test_utterance_pos_loss_mean_and_skips():
    rng = np.random.default_rng(3)
    sup = rng.normal(size=(4, 2))
    tags_sup = ("NOUN", "VERB", "NOUN", "VERB")
    enc = fake_encoded([sup])
    anns = [SyntacticAnnotation(pos_tags=tags_sup, noun_chunk=(False,) * 4)]
    ids, matrix = compute_pos_prototypes(enc, anns)
    q_toks = rng.normal(size=(3, 2))
    ann_q = SyntacticAnnotation(pos_tags=("NOUN", "ADJ", "VERB"),
                                noun_chunk=(False,) * 3)
    got = utterance_pos_loss(ids, matrix, ad.Tensor(q_toks), ann_q)
    a = pos_loss(ids, matrix, ad.Tensor(q_toks[0]), "NOUN").item()
    b = pos_loss(ids, matrix, ad.Tensor(q_toks[2]), "VERB").item()
    assert abs(got.item() - (a + b) / 2) < 1e-12


# composite loss ---------------------------------------------------------------


def test_composite_identity_at_beta_zero():
    ic = [ad.Tensor(np.array(0.7)), ad.Tensor(np.array(0.3))]
    sl = [ad.Tensor(np.array(0.2)), None]
    ps = [ad.Tensor(np.array(9.0)), ad.Tensor(np.array(9.0))]
    total = composite_loss_with_pos(ic, sl, ps, beta=0.0)
    assert abs(total.item() - (0.7 + 0.2 + 0.3) / 2) < 1e-12


def test_composite_arithmetic():
    # beta = 0.01, pos = 2.0, base = 1.0, single query -> 1.02
    ic = [ad.Tensor(np.array(1.0))]
    sl = [None]
    ps = [ad.Tensor(np.array(2.0))]
    total = composite_loss_with_pos(ic, sl, ps, beta=0.01)
    assert abs(total.item() - 1.02) < 1e-12


def test_default_beta_is_0_01():
    assert SyntaxConfig(mode={SyntaxMode.MULTITASK_LOSS}).beta == 0.01


def test_composite_gradients_through_beta_term():
    rng = np.random.default_rng(5)
    sup = rng.normal(size=(4, 3))
    q = rng.normal(size=(2, 3))
    tags_sup = ("NOUN", "VERB", "NOUN", "VERB")
    ann_q = SyntacticAnnotation(pos_tags=("NOUN", "VERB"),
                                noun_chunk=(False, False))
    arrays = {"sup": sup, "q": q}

    def build(t):
        u = Utterance(tokens=("a", "b", "c", "d"), intent=0,
                      slots=(0, 0, 0, 0), id="s")
        enc = [(u, EncoderOutput(utterance_embedding=t["sup"].mean(axis=0),
                                 token_embeddings=t["sup"]))]
        anns = [SyntacticAnnotation(pos_tags=tags_sup, noun_chunk=(False,) * 4)]
        ids, matrix = compute_pos_prototypes(enc, anns)
        pos_term = utterance_pos_loss(ids, matrix, t["q"], ann_q)
        ic_term = (t["q"] * t["q"]).sum() * 0.1
        return composite_loss_with_pos([ic_term], [None], [pos_term], beta=0.01)

    tensors = {k: ad.parameter(v.copy()) for k, v in arrays.items()}
    build(tensors).backward()

    def f(arrs):
        with ad.no_grad():
            return build({k: ad.Tensor(v) for k, v in arrs.items()}).item()

    numeric = central_diff_grads(f, {k: v.copy() for k, v in arrays.items()})
    for k in arrays:
        assert max_rel_error(tensors[k].grad, numeric[k]) < 1e-3, k


def test_syntax_config_modes():
    c = SyntaxConfig(mode={SyntaxMode.FEATURE_CONCAT})
    assert c.wants_concat
    c2 = SyntaxConfig(mode={SyntaxMode.MULTITASK_LOSS})
    assert not c2.wants_concat
    with pytest.raises(ValueError):
        SyntaxConfig(mode={"feat"})
    with pytest.raises(ValueError):
        SyntaxConfig(mode={SyntaxMode.MULTITASK_LOSS}, beta=-1.0)
