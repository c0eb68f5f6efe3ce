"""Template paraphrasing by round-trip machine translation.

Each corpus entity fills the manual template; the sentence goes to a pivot
language and back with beam search.  Back-translations from which every slot
value can be recovered are turned into candidate templates, and the
candidate with the largest summed round-trip probability wins.
"""

from __future__ import annotations

import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .data import Entity
from .serialize import PAD, PromptTemplate, fill, parse_filled, template_values

log = logging.getLogger(__name__)

DEFAULT_BEAM = 3
DEFAULT_PIVOT = "de"


class Translator(Protocol):
    def translate(self, texts: Sequence[str], src: str, tgt: str, num_beams: int) -> list[list[tuple[str, float]]]:
        """For each text, ``num_beams`` (translation, sequence probability) pairs."""


class TranslatorUnavailable(RuntimeError):
    pass


class HFTranslator:
    """MarianMT translation pair loaded through ``transformers``.

    Models are resolved lazily so constructing the object never touches the
    network or disk.
    """

    MODELS = {("en", "de"): "Helsinki-NLP/opus-mt-en-de", ("de", "en"): "Helsinki-NLP/opus-mt-de-en"}

    def __init__(self, models: dict[tuple[str, str], str] | None = None, device: str = "cpu",
                 max_new_tokens: int = 256):
        self.models = dict(models or self.MODELS)
        self.device = device
        self.max_new_tokens = max_new_tokens
        self._loaded = {}

    def _load(self, src: str, tgt: str):
        key = (src, tgt)
        if key not in self._loaded:
            if key not in self.models:
                raise TranslatorUnavailable(f"no translation model configured for {src}->{tgt}")
            try:
                from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

                name = self.models[key]
                tok = AutoTokenizer.from_pretrained(name)
                model = AutoModelForSeq2SeqLM.from_pretrained(name).to(self.device).eval()
            except Exception as exc:  # network, missing files, bad checkpoint
                raise TranslatorUnavailable(f"cannot load {self.models[key]}: {exc}") from exc
            self._loaded[key] = (tok, model)
        return self._loaded[key]

    def translate(self, texts, src, tgt, num_beams):
        import torch

        tok, model = self._load(src, tgt)
        out = []
        for text in texts:
            enc = tok(text, return_tensors="pt", truncation=True).to(self.device)
            with torch.no_grad():
                gen = model.generate(
                    **enc,
                    num_beams=num_beams,
                    num_return_sequences=num_beams,
                    length_penalty=0.0,  # raw summed log-prob, so exp() is the sequence probability
                    output_scores=True,
                    return_dict_in_generate=True,
                    max_new_tokens=self.max_new_tokens,
                )
            decoded = tok.batch_decode(gen.sequences, skip_special_tokens=True)
            probs = [math.exp(float(s)) for s in gen.sequences_scores]
            out.append(list(zip(decoded, probs)))
        return out


def induce_template(sentence: str, values: dict[str, str], name: str) -> PromptTemplate | None:
    """Turn a filled sentence back into a template.

    Every value must occur exactly once and the spans must not overlap;
    the result must parse its own sentence back to ``values``.
    """
    spans = []
    for slot, v in values.items():
        if not v or "{" in v or "}" in v:
            return None
        hits = [m.start() for m in re.finditer(re.escape(v), sentence)]
        if len(hits) != 1:
            return None
        spans.append((hits[0], hits[0] + len(v), slot))
    spans.sort()
    for (a0, a1, _), (b0, _, _) in zip(spans, spans[1:]):
        if b0 < a1:
            return None
    literal_text = sentence
    for start, end, slot in reversed(spans):
        literal_text = literal_text[:start] + "{" + slot + "}" + literal_text[end:]
    literal_only = re.sub(r"\{[A-Za-z_][A-Za-z0-9_]*\}", "", literal_text)
    if "{" in literal_only or "}" in literal_only:
        return None
    try:
        t = PromptTemplate(name, literal_text, "paraphrased")
    except ValueError:
        return None
    if parse_filled(sentence, t) != values:
        return None
    return t


@dataclass
class ParaphraseOutcome:
    template: PromptTemplate
    fallback: bool = False
    warning: str | None = None
    scores: dict[str, float] = field(default_factory=dict)


def paraphrase_template(t: PromptTemplate, corpus: Sequence[Entity], k_b: int = DEFAULT_BEAM,
                        translator: Translator | None = None, pivot: str = DEFAULT_PIVOT,
                        source: str = "en") -> ParaphraseOutcome:
    """Mine a paraphrase of ``t`` over ``corpus`` with beam width ``k_b``.

    Candidates are ranked by summed ``p(pivot|p) * p(back|pivot)`` across the
    corpus; ties break on the lexicographically smallest pattern.  Falls back
    to ``t`` itself when nothing survives or the translator cannot be used.
    """
    if k_b < 1:
        raise ValueError("k_b must be >= 1")
    translator = translator if translator is not None else HFTranslator()
    name = t.name if t.name.endswith("_paraphrased") else f"{t.name}_paraphrased"

    fills = []
    for e in corpus:
        values = template_values(e, t)
        # pad slots cannot be located reliably after translation
        if any(v == PAD for v in values.values()):
            continue
        fills.append(values)

    scores: dict[str, float] = defaultdict(float)
    templates: dict[str, PromptTemplate] = {}
    try:
        if fills:
            sentences = [fill(t, v) for v in fills]
            forward = translator.translate(sentences, source, pivot, k_b)
            for values, pivots in zip(fills, forward):
                backs = translator.translate([p for p, _ in pivots], pivot, source, k_b)
                for (_, p_fwd), back in zip(pivots, backs):
                    for sentence, p_back in back:
                        cand = induce_template(sentence.strip(), values, name)
                        if cand is None:
                            continue
                        templates[cand.pattern] = cand
                        scores[cand.pattern] += p_fwd * p_back
    except TranslatorUnavailable as exc:
        log.warning("paraphrasing skipped: %s", exc)
        return ParaphraseOutcome(t, fallback=True, warning=str(exc))

    if not scores:
        return ParaphraseOutcome(t, fallback=True, warning="no back-translation could be parsed")
    best = sorted(scores, key=lambda p: (-scores[p], p))[0]
    return ParaphraseOutcome(templates[best], scores=dict(scores))
