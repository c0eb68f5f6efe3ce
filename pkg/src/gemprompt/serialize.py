"""Entity-to-text serialization and natural-language prompt templates."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .data import MISSING, Entity, Shape, Value, is_missing

PAD = "<pad>"
LIST_SEP = ", "
CLAUSE_SEP = ", "

Span = tuple[int, int]

_SLOT_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _norm_key(key: str) -> str:
    return re.sub(r"[^a-z0-9]", "", key.lower())


# ---------------------------------------------------------------------------
# Ditto style


def _ditto_value(value: Value) -> str:
    if isinstance(value, dict):
        return _ditto_pairs(value.items())
    if isinstance(value, list):
        return LIST_SEP.join(_ditto_value(v) for v in value)
    if is_missing(value):
        return PAD
    return str(value)


def _ditto_pairs(items: Iterable[tuple[str, Value]]) -> str:
    parts = []
    for k, v in items:
        rendered = _ditto_value(v)
        parts.append(f"[COL] {k} [VAL] {rendered}" if rendered else f"[COL] {k} [VAL]")
    return " ".join(parts)


def serialize_ditto(e: Entity) -> str:
    """``[COL] k1 [VAL] v1 ... [COL] kn [VAL] vn``, recursing into nested maps."""
    if e.shape is Shape.TEXTUAL:
        return e.text
    return _ditto_pairs(e.items())


# ---------------------------------------------------------------------------
# natural language


def render_value(value: Value) -> str:
    """Text for one attribute value; nested maps use the basic clause rule."""
    if isinstance(value, dict):
        return _natural_pairs(value.items())[0]
    if isinstance(value, list):
        return LIST_SEP.join(render_value(v) for v in value)
    if is_missing(value):
        return PAD
    return str(value)


def _natural_pairs(items: Iterable[tuple[str, Value]]) -> tuple[str, list[Span]]:
    text, spans = "", []
    for i, (k, v) in enumerate(items):
        if i:
            text += CLAUSE_SEP
        clause = f"the {k} is {render_value(v)}"
        spans.append((len(text), len(text) + len(clause)))
        text += clause
    return text, spans


@dataclass(frozen=True)
class PromptTemplate:
    """A sentence pattern with ``{slot}`` placeholders.

    Every slot occurs exactly once; ``slots`` lists them in pattern order.
    """

    name: str
    pattern: str
    origin: str = "manual"

    def __post_init__(self):
        if self.origin not in ("manual", "paraphrased", "basic"):
            raise ValueError(f"unknown template origin {self.origin!r}")
        found = _SLOT_RE.findall(self.pattern)
        if not found:
            raise ValueError(f"template {self.name!r} has no slots")
        if len(found) != len(set(found)):
            raise ValueError(f"template {self.name!r} repeats a slot")
        # a stray brace would make the pattern ambiguous to parse back
        stripped = _SLOT_RE.sub("", self.pattern)
        if "{" in stripped or "}" in stripped:
            raise ValueError(f"template {self.name!r} has an unbalanced brace")

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(_SLOT_RE.findall(self.pattern))

    @property
    def literals(self) -> list[str]:
        """Literal text around the slots; always ``len(slots) + 1`` entries."""
        return _SLOT_RE.split(self.pattern)[::2]

    def to_dict(self) -> dict:
        return {"name": self.name, "slots": list(self.slots), "pattern": self.pattern, "origin": self.origin}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "PromptTemplate":
        t = cls(obj["name"], obj["pattern"], obj.get("origin", "manual"))
        if "slots" in obj and list(obj["slots"]) != list(t.slots):
            raise ValueError(f"template {t.name!r}: slots {obj['slots']} disagree with the pattern")
        return t


def fill_with_spans(t: PromptTemplate, values: Mapping[str, str]) -> tuple[str, list[Span]]:
    """Fill every slot (absent or blank values become ``<pad>``).

    Returns the text and the character span of each slot value, in slot order.
    """
    literals = t.literals
    text, spans = literals[0], []
    for slot, lit in zip(t.slots, literals[1:]):
        v = values.get(slot, MISSING)
        v = PAD if is_missing(v) else str(v)
        spans.append((len(text), len(text) + len(v)))
        text += v + lit
    return text, spans


def fill(t: PromptTemplate, values: Mapping[str, str]) -> str:
    return fill_with_spans(t, values)[0]


def parse_filled(text: str, t: PromptTemplate) -> dict[str, str] | None:
    """Recover slot values by anchoring on the literal segments.

    Returns None when the literals are absent or out of order.
    """
    literals = t.literals
    regex = "^" + re.escape(literals[0])
    for lit in literals[1:]:
        regex += "(.*?)" + re.escape(lit)
    m = re.match(regex + "$", text, flags=re.DOTALL)
    if m is None:
        return None
    return dict(zip(t.slots, m.groups()))


def template_values(e: Entity, t: PromptTemplate) -> dict[str, str]:
    """Rendered entity values for each template slot, matched on normalized keys."""
    by_key = {}
    for k, v in e.items():
        by_key.setdefault(k, v)
        by_key.setdefault(_norm_key(k), v)
    out = {}
    for slot in t.slots:
        v = by_key.get(slot, by_key.get(_norm_key(slot), MISSING))
        out[slot] = render_value(v)
    return out


def serialize_natural_spans(e: Entity, t: PromptTemplate | None = None) -> tuple[str, list[Span]]:
    """Natural-language text plus one character span per attribute (or slot)."""
    if e.shape is Shape.TEXTUAL:
        return e.text, [(0, len(e.text))]
    if t is None:
        return _natural_pairs(e.items())
    return fill_with_spans(t, template_values(e, t))


def serialize_natural(e: Entity, t: PromptTemplate | None = None) -> str:
    """``the k1 is v1, ..., the kn is vn`` or a filled template.

    Textual entities come back verbatim.
    """
    return serialize_natural_spans(e, t)[0]


def serialize_attributes(values: Mapping[str, str]) -> str:
    """Basic clause form for an augmentation map (pad marker kept verbatim)."""
    return _natural_pairs(values.items())[0]


# ---------------------------------------------------------------------------
# template registry

_TABLE = [
    # name, manual pattern, paraphrased pattern
    (
        "academic",
        "The {title} is authored by {author} and is published in {venue} in the year {year}.",
        "The paper entitled {title} is written by {author} and is published in {venue} in {year}.",
    ),
    (
        "movie",
        "The {title} is directed by {director}, including {actors}. It was released in {year} "
        "and has received ratings of {ratings}. It includes {information}.",
        "The {title} is made by {director}, featuring {actors}. It debuted in {year} "
        "and has earned ratings of {ratings}. It encompasses {information}.",
    ),
    (
        "semi_text",
        "This {category} product is from {brand} priced at {price}. It is identified by {identifiers} "
        "and has key value pairs of {keyvaluepairs}.",
        "This {category} product is priced by {brand} {price}, it is identified by {identifiers} "
        "and has key value pairs of {keyvaluepairs}",
    ),
    (
        "geo",
        "The {name} is located at {address}, with latitude {latitude} and longitude {longitude}. "
        "The position is {position}, and the postal code is {postalcode}",
        "The {name} is located in the {address} with the width {latitude} and the length {longitude}, "
        "the position is {position} and the postcode is {postalcode}.",
    ),
    (
        "wdc",
        "The {title} from {brand}. It is priced at {price} {pricecurrency}. It includes {description}.",
        "The {title} from {brand}, costs {price} {pricecurrency}. It includes {description}.",
    ),
    (
        "google_amazon",
        "The {title} is a product manufactured by {manufacturer} and is priced at {price}.",
        "The {title} is a product produced by {manufacturer} and valued at {price}.",
    ),
    (
        "restaurant_left",
        "The {title} is a {category} restaurant located at {address}. The phone number is {phone}.",
        "The {title} is a {category} restaurant at the {address}, the telephone number is {phone}.",
    ),
    (
        "restaurant_right",
        "This {type} restaurant offers a diverse {class} different types of dishes, located in {city} at {addr}. "
        "The phone number is {phone}.",
        "This {type} restaurant offers a diverse {class} different types of dishes, located in {city} at {addr}. "
        "The telephone number is {phone}.",
    ),
    (
        "itunes_amazon",
        "The {song_name} is performed by {artist_name} and is featured on the album {album_name}. "
        "It falls under the genre of {genre} with a price of {price}. The song is protected by {copyright} "
        "and has a duration of {time}. It was released on {released}.",
        "The {song_name} is played by {artist_name} and is included on the album {album_name}, "
        "which falls under the genre of {genre} with a price of {price}. The song is protected by {copyright} "
        "and has a length of {time}. It was released on {released}.",
    ),
    (
        "walmart_amazon",
        "The {title} is a {category} from {brand} with model number {modelno}, priced at {price}.",
        "The {title} is a {category} from {brand} with model number {modelno}, priced at {price}.",
    ),
]

# which benchmark uses which template
DATASET_TEMPLATES = {
    "REL-TEXT": "academic",
    "SEMI-HOMO": "academic",
    "SEMI-REL": "movie",
    "SEMI-TEXT-W": "semi_text",
    "SEMI-TEXT-C": "semi_text",
    "GEO-HETER": "geo",
    "WDC": "wdc",
    "GOOGLE-AMAZON": "google_amazon",
    "REL-HETER": "restaurant_left",
    "ITUNES-AMAZON": "itunes_amazon",
    "WALMART-AMAZON": "walmart_amazon",
}


def builtin_templates() -> dict[str, PromptTemplate]:
    """Manual templates under their own name, paraphrases under ``<name>_paraphrased``."""
    out = {}
    for name, manual, para in _TABLE:
        out[name] = PromptTemplate(name, manual, "manual")
        out[f"{name}_paraphrased"] = PromptTemplate(f"{name}_paraphrased", para, "paraphrased")
    return out


def load_registry(path: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Built-in templates, overridden by entries of a JSON-lines registry file."""
    reg = builtin_templates()
    if path is not None and Path(path).exists():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    t = PromptTemplate.from_dict(json.loads(line))
                    reg[t.name] = t
    return reg


def save_registry(path: str | Path, templates: Iterable[PromptTemplate]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in templates:
            fh.write(json.dumps(t.to_dict(), ensure_ascii=False) + "\n")


def resolve_template(name: str | None, registry: Mapping[str, PromptTemplate] | None = None) -> PromptTemplate | None:
    """``None``/``"basic"`` mean the basic clause rule; anything else is looked up."""
    if name in (None, "", "basic"):
        return None
    registry = registry if registry is not None else builtin_templates()
    if name not in registry:
        raise KeyError(f"unknown template {name!r}; known: {sorted(registry)}")
    return registry[name]


# ---------------------------------------------------------------------------
# one entry point used by the matcher


@dataclass(frozen=True)
class Serializer:
    """How entities become prompt text.

    ``style`` is ``"natural"`` (basic rule or template) or ``"ditto"``.
    """

    style: str = "natural"
    template: PromptTemplate | None = None

    def __post_init__(self):
        if self.style not in ("natural", "ditto"):
            raise ValueError(f"unknown serialization style {self.style!r}")

    def render(self, e: Entity, augmentation: Mapping[str, str] | None = None) -> tuple[str, list[Span]]:
        """Entity text (plus appended augmentation clauses) and column spans."""
        if self.style == "ditto":
            text = serialize_ditto(e)
            spans = [(0, len(text))]
        else:
            text, spans = serialize_natural_spans(e, self.template)
        if augmentation:
            extra, extra_spans = _natural_pairs(augmentation.items())
            offset = len(text) + 1 if text else 0
            text = f"{text} {extra}" if text else extra
            spans = spans + [(a + offset, b + offset) for a, b in extra_spans]
        return text, spans

    def __call__(self, e: Entity, augmentation: Mapping[str, str] | None = None) -> str:
        return self.render(e, augmentation)[0]
