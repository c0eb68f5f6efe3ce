import pytest

from gemprompt.data import Entity, Shape
from gemprompt.paraphrase import (HFTranslator, TranslatorUnavailable, induce_template, paraphrase_template)
from gemprompt.serialize import builtin_templates, fill, parse_filled


class TableTranslator:
    """Round trips looked up in a dict; unknown inputs translate to themselves."""

    def __init__(self, forward, backward):
        self.forward = forward
        self.backward = backward
        self.calls = []

    def translate(self, texts, src, tgt, num_beams):
        self.calls.append((src, tgt, num_beams, len(texts)))
        table = self.forward if src == "en" else self.backward
        return [table.get(t, [(t, 1.0)] * num_beams)[:num_beams] for t in texts]


def product(eid, title, manufacturer, price):
    return Entity(eid, Shape.STRUCTURED, attrs=(("title", title), ("manufacturer", manufacturer), ("price", price)))


GA = builtin_templates()["google_amazon"]


def test_table_paraphrase_is_mined():
    e = product("1", "ipod nano", "apple", "$149")
    src = fill(GA, {"title": "ipod nano", "manufacturer": "apple", "price": "$149"})
    good = "The ipod nano is a product produced by apple and valued at $149."
    tr = TableTranslator({src: [("DE1", 0.6), ("DE2", 0.3), ("DE3", 0.1)]},
                         {"DE1": [(good, 0.5), ("garbled", 0.3), ("apple ipod", 0.2)],
                          "DE2": [("nothing useful", 0.9)] * 3,
                          "DE3": [(src, 0.9)] * 3})
    out = paraphrase_template(GA, [e], k_b=3, translator=tr)
    assert not out.fallback
    assert out.template.pattern == "The {title} is a product produced by {manufacturer} and valued at {price}."
    assert out.template.origin == "paraphrased"
    # 0.6*0.5 for the paraphrase versus 3 * 0.1*0.9 = 0.27 for the manual sentence
    assert out.scores[out.template.pattern] == pytest.approx(0.30)
    assert out.scores[GA.pattern] == pytest.approx(0.27)
    assert tr.calls[0] == ("en", "de", 3, 1)


def test_single_survivor_is_returned():
    e = product("1", "tv", "sony", "9")
    src = fill(GA, {"title": "tv", "manufacturer": "sony", "price": "9"})
    only = "The tv comes from sony at 9."
    tr = TableTranslator({src: [("X", 1.0)]}, {"X": [(only, 0.4)]})
    out = paraphrase_template(GA, [e], k_b=1, translator=tr)
    assert out.template.pattern == "The {title} comes from {manufacturer} at {price}."


def test_scores_sum_over_corpus():
    es = [product("1", "tv", "sony", "9"), product("2", "cam", "canon", "5")]
    tr = TableTranslator({}, {})
    rows = {}
    for e, p in zip(es, (0.5, 0.25)):
        vals = {"title": e.get("title"), "manufacturer": e.get("manufacturer"), "price": e.get("price")}
        src = fill(GA, vals)
        rows[src] = [(f"P{e.id}", 1.0)]
        tr.backward[f"P{e.id}"] = [(f"{vals['title']} by {vals['manufacturer']} for {vals['price']}", p)]
    tr.forward = rows
    out = paraphrase_template(GA, es, k_b=1, translator=tr)
    assert out.template.pattern == "{title} by {manufacturer} for {price}"
    assert out.scores[out.template.pattern] == pytest.approx(0.75)


def test_no_survivor_falls_back():
    e = product("1", "tv", "sony", "9")
    src = fill(GA, {"title": "tv", "manufacturer": "sony", "price": "9"})
    tr = TableTranslator({src: [("X", 1.0)] * 2}, {"X": [("lost every value", 1.0)] * 2})
    out = paraphrase_template(GA, [e], k_b=2, translator=tr)
    assert out.fallback and out.template is GA


class Broken:
    def translate(self, *a, **k):
        raise TranslatorUnavailable("offline")


def test_unavailable_backend_flags_warning():
    out = paraphrase_template(GA, [product("1", "tv", "sony", "9")], translator=Broken())
    assert out.fallback and out.template is GA and "offline" in out.warning


def test_hf_translator_unknown_direction():
    with pytest.raises(TranslatorUnavailable):
        HFTranslator(models={})._load("en", "fr")


def test_induce_template_rules():
    vals = {"a": "x1", "b": "y2"}
    assert induce_template("y2 then x1", vals, "t").pattern == "{b} then {a}"
    assert induce_template("x1 x1 y2", vals, "t") is None  # ambiguous
    assert induce_template("x1 only", vals, "t") is None  # missing
    assert induce_template("{x1} y2", vals, "t") is None  # stray braces


def test_outputs_parse_their_own_fills():
    e = product("1", "ipod nano", "apple", "$149")
    src = fill(GA, {"title": "ipod nano", "manufacturer": "apple", "price": "$149"})
    tr = TableTranslator({src: [("D", 1.0)]}, {"D": [("apple sells the ipod nano at $149.", 1.0)]})
    t = paraphrase_template(GA, [e], k_b=1, translator=tr).template
    vals = {"title": "zune", "manufacturer": "microsoft", "price": "$9"}
    assert parse_filled(fill(t, vals), t) == vals


def test_beam_must_be_positive():
    with pytest.raises(ValueError):
        paraphrase_template(GA, [], k_b=0, translator=Broken())


def test_template_with_pad_entities_is_skipped():
    e = Entity("1", Shape.STRUCTURED, attrs=(("title", "tv"),))
    tr = TableTranslator({}, {})
    out = paraphrase_template(GA, [e], translator=tr)
    assert out.fallback and tr.calls == []
