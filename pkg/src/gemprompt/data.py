"""Entity records, match pairs and datasets shared by every other module.

Entities come in three shapes: flat key/value records (``structured``),
nested records (``semi_structured``) and free text (``textual``).  All
containers here are treated as read-only once loaded.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence, Union


class Shape(str, Enum):
    STRUCTURED = "structured"
    SEMI_STRUCTURED = "semi_structured"
    TEXTUAL = "textual"


class _Missing:
    """Singleton marker for a null attribute value."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"

    def __bool__(self) -> bool:
        return False

    def __reduce__(self):
        return (_Missing, ())


MISSING = _Missing()

Scalar = Union[str, int, float, bool, _Missing]
Value = Union[Scalar, "dict[str, Value]", "list[Value]"]


class EntityParseError(ValueError):
    """Raised when a raw record cannot be turned into an Entity."""


def is_missing(value: Any) -> bool:
    """True for null values and blank strings."""
    if value is MISSING or value is None:
        return True
    if isinstance(value, float) and math.isnan(value):
        return True
    return isinstance(value, str) and not value.strip()


@dataclass(frozen=True)
class Entity:
    id: str
    shape: Shape
    attrs: tuple[tuple[str, Value], ...] | None = None
    tree: dict[str, Value] | None = None
    text: str | None = None

    def __post_init__(self):
        populated = [x is not None for x in (self.attrs, self.tree, self.text)]
        if sum(populated) != 1:
            raise ValueError(f"entity {self.id!r}: exactly one of attrs/tree/text must be set")
        if self.shape is Shape.STRUCTURED and self.attrs is None:
            raise ValueError(f"entity {self.id!r}: structured entity needs attrs")
        if self.shape is Shape.SEMI_STRUCTURED and self.tree is None:
            raise ValueError(f"entity {self.id!r}: semi_structured entity needs tree")
        if self.shape is Shape.TEXTUAL and self.text is None:
            raise ValueError(f"entity {self.id!r}: textual entity needs text")
        if self.attrs is not None:
            keys = [k for k, _ in self.attrs]
            if len(keys) != len(set(keys)):
                raise ValueError(f"entity {self.id!r}: duplicate attribute keys")

    def items(self) -> list[tuple[str, Value]]:
        """Top-level (key, value) pairs in input order; empty for text."""
        if self.attrs is not None:
            return list(self.attrs)
        if self.tree is not None:
            return list(self.tree.items())
        return []

    def get(self, key: str, default: Value = MISSING) -> Value:
        for k, v in self.items():
            if k == key:
                return v
        return default

    def content(self) -> Any:
        """The JSON-compatible content object (inverse of parse_entity)."""
        if self.text is not None:
            return self.text
        return _to_json_value(dict(self.items()))


def _from_json_value(value: Any) -> Value:
    if value is None:
        return MISSING
    if isinstance(value, dict):
        return {str(k): _from_json_value(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_from_json_value(v) for v in value]
    return value


def _to_json_value(value: Value) -> Any:
    if value is MISSING:
        return None
    if isinstance(value, dict):
        return {k: _to_json_value(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_to_json_value(v) for v in value]
    return value


def _is_nested(value: Any) -> bool:
    return isinstance(value, (dict, list))


def parse_entity(raw: Any, entity_id: str | None = None, shape_hint: Shape | str | None = None) -> Entity:
    """Build an Entity from a decoded record.

    ``raw`` is either an interchange object ``{"id": ..., "content": ...}`` or
    the bare content (with ``entity_id`` given separately).  A nested map
    becomes semi_structured, a flat map structured, a bare string textual.
    """
    if isinstance(raw, dict) and "content" in raw and entity_id is None:
        if "id" not in raw:
            raise EntityParseError("record has 'content' but no 'id'")
        entity_id, raw = str(raw["id"]), raw["content"]
    if entity_id is None:
        raise EntityParseError("entity id missing")

    hint = Shape(shape_hint) if shape_hint is not None else None
    if isinstance(raw, str):
        if hint not in (None, Shape.TEXTUAL):
            raise EntityParseError(f"record {entity_id}: text content but shape hint {hint.value}")
        return Entity(entity_id, Shape.TEXTUAL, text=raw)
    if not isinstance(raw, dict):
        raise EntityParseError(f"record {entity_id}: content must be an object or a string, got {type(raw).__name__}")

    content = {str(k): _from_json_value(v) for k, v in raw.items()}
    nested = any(_is_nested(v) for v in content.values())
    if hint is Shape.TEXTUAL:
        raise EntityParseError(f"record {entity_id}: object content but shape hint textual")
    if hint is Shape.SEMI_STRUCTURED or nested:
        if hint is Shape.STRUCTURED:
            raise EntityParseError(f"record {entity_id}: nested values in a structured record")
        return Entity(entity_id, Shape.SEMI_STRUCTURED, tree=content)
    return Entity(entity_id, Shape.STRUCTURED, attrs=tuple(content.items()))


def entity_to_json(e: Entity) -> str:
    """One interchange line (no trailing newline)."""
    return json.dumps({"id": e.id, "content": e.content()}, ensure_ascii=False)


def _walk_keys(value: Value) -> Iterator[str]:
    if isinstance(value, dict):
        for k, v in value.items():
            yield k
            yield from _walk_keys(v)
    elif isinstance(value, list):
        for v in value:
            yield from _walk_keys(v)


def collect_keys(e: Entity) -> set[str]:
    """All attribute keys at every nesting level."""
    if e.shape is Shape.TEXTUAL:
        return set()
    return set(_walk_keys(dict(e.items())))


def ordered_keys(e: Entity) -> list[str]:
    """Like collect_keys, but in first-seen depth-first order."""
    seen: dict[str, None] = {}
    for k in _walk_keys(dict(e.items())):
        seen.setdefault(k, None)
    return list(seen)


@dataclass(frozen=True)
class MatchPair:
    left: str
    right: str
    label: int | None = None


@dataclass(frozen=True)
class Dataset:
    left: Mapping[str, Entity]
    right: Mapping[str, Entity]
    pairs: tuple[MatchPair, ...] = ()
    candidates: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    # entity id -> augmenter.AugmentationRecord
    augmentations: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for p in self.pairs:
            if p.left not in self.left:
                raise KeyError(f"pair references unknown left entity {p.left!r}")
            if p.right not in self.right:
                raise KeyError(f"pair references unknown right entity {p.right!r}")
        for eid, cands in self.candidates.items():
            if eid in self.left:
                other = self.right
            elif eid in self.right:
                other = self.left
            else:
                raise KeyError(f"candidate list for unknown entity {eid!r}")
            for c in cands:
                if c not in other:
                    raise KeyError(f"candidate {c!r} of {eid!r} is not in the opposite source")

    def entity(self, entity_id: str) -> Entity:
        if entity_id in self.left:
            return self.left[entity_id]
        return self.right[entity_id]

    def entities(self) -> list[Entity]:
        return list(self.left.values()) + list(self.right.values())

    @property
    def labels(self) -> list[int]:
        return [p.label for p in self.pairs]

    def with_pairs(self, pairs: Iterable[MatchPair]) -> "Dataset":
        return replace(self, pairs=tuple(pairs))

    def with_augmentations(self, records: Mapping[str, Any]) -> "Dataset":
        return replace(self, augmentations=dict(records))

    def split(self, fraction: float, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Hold out ``floor(fraction * |pairs|)`` pairs; returns (rest, held_out)."""
        n_out = int(math.floor(fraction * len(self.pairs)))
        idx = sorted(random.Random(seed).sample(range(len(self.pairs)), n_out))
        chosen = set(idx)
        held = [self.pairs[i] for i in idx]
        rest = [p for i, p in enumerate(self.pairs) if i not in chosen]
        return self.with_pairs(rest), self.with_pairs(held)


# ---------------------------------------------------------------------------
# file formats


def read_entities(path: str | Path, shape_hint: Shape | str | None = None) -> dict[str, Entity]:
    """Read a JSON-lines entity file into an ordered id -> Entity map."""
    out: dict[str, Entity] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EntityParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "id" not in obj or "content" not in obj:
                raise EntityParseError(f"{path}:{lineno}: expected an object with 'id' and 'content'")
            try:
                e = parse_entity(obj, shape_hint=shape_hint)
            except (EntityParseError, ValueError) as exc:
                raise EntityParseError(f"{path}:{lineno}: {exc}") from exc
            out[e.id] = e
    return out


def write_entities(path: str | Path, entities: Iterable[Entity]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entities:
            fh.write(entity_to_json(e) + "\n")


def read_pairs(path: str | Path) -> list[MatchPair]:
    """Tab-separated ``left_id, right_id[, label]`` lines."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
            label = None
            if len(parts) == 3:
                if parts[2] not in ("0", "1"):
                    raise ValueError(f"{path}:{lineno}: label must be 0 or 1, got {parts[2]!r}")
                label = int(parts[2])
            pairs.append(MatchPair(parts[0], parts[1], label))
    return pairs


def write_pairs(path: str | Path, pairs: Iterable[MatchPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            cols = [p.left, p.right] + ([] if p.label is None else [str(p.label)])
            fh.write("\t".join(cols) + "\n")


def read_candidates(path: str | Path) -> dict[str, tuple[str, ...]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "id" not in obj or not isinstance(obj.get("candidates"), list):
                raise ValueError(f"{path}:{lineno}: expected {{'id', 'candidates': [...]}}")
            out[str(obj["id"])] = tuple(str(c) for c in obj["candidates"])
    return out


def write_candidates(path: str | Path, candidates: Mapping[str, Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for eid, cands in candidates.items():
            fh.write(json.dumps({"id": eid, "candidates": list(cands)}, ensure_ascii=False) + "\n")


def load_dataset(left: str | Path, right: str | Path, pairs: str | Path | None = None,
                 candidates: str | Path | None = None) -> Dataset:
    return Dataset(
        left=read_entities(left),
        right=read_entities(right),
        pairs=tuple(read_pairs(pairs)) if pairs else (),
        candidates=read_candidates(candidates) if candidates else {},
    )


def _magellan_table(path: Path) -> dict[str, Entity]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            eid = row.pop("id")
            attrs = tuple((k, MISSING if v.strip().lower() in ("", "nan") else v) for k, v in row.items())
            out[eid] = Entity(eid, Shape.STRUCTURED, attrs=attrs)
    return out


def load_magellan(directory: str | Path) -> dict[str, Dataset]:
    """Load an ER-Magellan style benchmark directory.

    Expects ``tableA.csv``/``tableB.csv`` (first column ``id``) and split files
    ``train.csv``/``valid.csv``/``test.csv`` with ``ltable_id,rtable_id,label``.
    Returns one Dataset per split file present.
    """
    directory = Path(directory)
    left = _magellan_table(directory / "tableA.csv")
    right = _magellan_table(directory / "tableB.csv")
    splits = {}
    for name in ("train", "valid", "test"):
        f = directory / f"{name}.csv"
        if not f.exists():
            continue
        with open(f, encoding="utf-8", newline="") as fh:
            pairs = tuple(MatchPair(r["ltable_id"], r["rtable_id"], int(r["label"])) for r in csv.DictReader(fh))
        splits[name] = Dataset(left=left, right=right, pairs=pairs)
    return splits
