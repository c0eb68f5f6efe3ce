import pytest
import torch
from hypothesis import given, strategies as st

from conftest import tiny_model
from gemprompt.data import Entity, MatchPair, Shape
from gemprompt.matcher import (MATCH_WORDS, MISMATCH_WORDS, DegenerateScores, build_prompt, build_prompt_text,
                               decide, load_checkpoint, predict, read_predictions, save_checkpoint, verbalize,
                               write_predictions)

WORDS = MATCH_WORDS + MISMATCH_WORDS


def scores(*vals):
    return dict(zip(WORDS, vals))


def test_equal_scores_give_one_half():
    assert verbalize(scores(*[0.1] * 6)) == pytest.approx(0.5)


def test_hand_computed_verbalizer():
    # (0.3 + 0.2 + 0.1) / (0.6 + 0.4)
    assert verbalize(scores(0.3, 0.2, 0.1, 0.2, 0.1, 0.1)) == pytest.approx(0.6)


positive = st.floats(1e-6, 1.0)


@given(st.lists(positive, min_size=6, max_size=6), st.floats(1e-3, 1e3))
def test_verbalizer_scale_invariant(vals, c):
    assert verbalize(scores(*[c * v for v in vals])) == pytest.approx(verbalize(scores(*vals)), rel=1e-9)


@given(st.lists(positive, min_size=6, max_size=6))
def test_swapping_sets_complements(vals):
    p = verbalize(scores(*vals))
    swapped = verbalize(scores(*vals), MISMATCH_WORDS, MATCH_WORDS)
    assert p + swapped == pytest.approx(1.0)
    assert 0.0 <= p <= 1.0


def test_zero_scores_raise():
    with pytest.raises(DegenerateScores):
        verbalize(scores(*[0.0] * 6))


def test_tie_goes_to_match():
    assert decide(0.5) == 1 and decide(0.4999) == 0


def test_prompt_text_layout():
    assert build_prompt_text("A", "B") == "A is [MASK] to B."
    assert build_prompt_text("A", "B", 2) == "A the keyword is [S_1] [S_2] is [MASK] to B the keyword is [S_1] [S_2]."


def ent(eid, title):
    return Entity(eid, Shape.STRUCTURED, attrs=(("title", title),))


def test_prompt_instance_positions(products):
    m = tiny_model(products, k=2)
    inst = m.build(products.left["a0"], products.right["b0"])
    assert inst.text.count(" is [MASK] to ") == 1
    assert inst.input_ids[inst.mask_position] == m.tokenizer.mask_token_id
    assert inst.input_ids.count(m.tokenizer.mask_token_id) == 1
    unk = m.tokenizer.unk_token_id
    for pos in inst.soft_positions_left + inst.soft_positions_right:
        assert inst.input_ids[pos] == unk
    assert inst.soft_positions_left[-1] < inst.mask_position < inst.soft_positions_right[0]
    tokens = m.tokenizer.convert_ids_to_tokens(inst.input_ids)
    assert tokens[0] == "<s>" and tokens[-1] == "</s>" and tokens[-2] == "."


def test_truncation_keeps_mask_and_soft_tokens(products):
    m = tiny_model(products, k=2)
    long_a = ent("x", " ".join(["seagate"] * 300))
    inst = build_prompt(long_a, products.right["b0"], m.tokenizer, m.serializer, k=2, max_length=64)
    assert len(inst.input_ids) <= 64
    assert inst.input_ids[inst.mask_position] == m.tokenizer.mask_token_id
    assert len(inst.soft_positions_left) == 2 and len(inst.soft_positions_right) == 2
    # the longer left side absorbs the cut, the short right entity survives whole
    right_ids = m.tokenizer(" " + m.serializer(products.right["b0"]), add_special_tokens=False)["input_ids"]
    body = inst.input_ids[inst.mask_position + 2: inst.mask_position + 2 + len(right_ids)]
    assert body == right_ids


def test_both_empty_raises(products):
    m = tiny_model(products, k=0)
    e = Entity("e", Shape.TEXTUAL, text=" ")
    with pytest.raises(ValueError):
        build_prompt(e, e, m.tokenizer)


def test_one_empty_side_is_fine(products):
    m = tiny_model(products, k=2)
    e = Entity("e", Shape.TEXTUAL, text="")
    pred = predict(m.build(e, products.right["b0"]), m)
    assert 0.0 <= pred.p_match <= 1.0


def test_forward_shapes_and_range(products):
    m = tiny_model(products, k=3)
    insts = m.instances(products)[:5]
    out = m(m.collate(insts))
    assert out["p_match"].shape == (5,)
    assert out["soft"].shape == (5, 2, 3, 32)
    assert torch.all((out["p_match"] >= 0) & (out["p_match"] <= 1))
    p = verbalize(dict(zip(WORDS, out["word_scores"][0].tolist())))
    assert out["p_match"][0].item() == pytest.approx(p, rel=1e-5)


def test_soft_tokens_change_the_prediction(products):
    m = tiny_model(products, k=2)
    inst = m.build(products.left["a0"], products.right["b0"])
    before = predict(inst, m).p_match
    with torch.no_grad():
        m.soft.aspects.add_(torch.randn_like(m.soft.aspects))
    assert predict(inst, m).p_match != before


def test_batching_does_not_change_predictions(products):
    m = tiny_model(products, k=2)
    insts = m.instances(products)
    one = [predict(i, m).p_match for i in insts[:6]]
    many = [p.p_match for p in m.predict(insts[:6], batch_size=4)]
    assert one == pytest.approx(many, abs=1e-5)


def test_prediction_is_deterministic(products):
    m = tiny_model(products, k=2, dropout=0.1)
    inst = m.build(products.left["a1"], products.right["c1"])
    assert predict(inst, m).p_match == predict(inst, m).p_match
    assert m.training  # predict restores the mode it found


def test_checkpoint_round_trip(tmp_path, products):
    m = tiny_model(products, k=2, pe_mode="COL", n_layers=1)
    save_checkpoint(tmp_path / "m.pt", m, {"epoch": 3})
    m2 = load_checkpoint(tmp_path / "m.pt")
    insts = m.instances(products)[:4]
    a = [p.p_match for p in m.predict(insts)]
    b = [p.p_match for p in m2.predict(m2.instances(products)[:4])]
    assert a == pytest.approx(b, abs=1e-6)


def test_prediction_file_round_trip(tmp_path, products):
    m = tiny_model(products, k=0)
    preds = m.predict(m.instances(products)[:3])
    write_predictions(tmp_path / "p.jsonl", preds)
    rows = read_predictions(tmp_path / "p.jsonl")
    assert [r["left"] for r in rows] == ["a0", "a0", "a1"]
    assert set(rows[0]) == {"left", "right", "p_match", "label"}
    assert all(r["label"] == decide(r["p_match"]) for r in rows)


def test_unknown_label_word_rejected(products):
    m = tiny_model(products, k=0)
    with pytest.raises(ValueError, match="vocabulary"):
        type(m)(m.backbone, m.tokenizer, match_words=("zzzunseen",))


def test_attention_maps(products):
    m = tiny_model(products, k=2)
    rec = m.attention_maps(products, ["a0"])[0]
    assert rec["weights"].shape == (2, len(rec["tokens"]))
    assert torch.allclose(rec["weights"].sum(-1), torch.ones(2), atol=1e-6)


def test_pair_ids_kept_on_instances(products):
    m = tiny_model(products, k=0)
    assert m.instances(products)[1].pair == MatchPair("a0", "c0", 0)
