"""Information augmentation: asking an LLM for extra attribute values.

Flow per entity: choose the attribute list, build a two-message chat
request, parse the JSON answer, replace meaningless values with the pad
marker, cache the record.  Augmented values are serialized after the
original entity text by the matcher.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .data import Dataset, Entity, Shape, ordered_keys
from .serialize import PAD, render_value

log = logging.getLogger(__name__)

SYSTEM_PROMPT = "You are a helpful assistant. Answer in plain json format only"
USER_TEMPLATE = ("Please provide some information about the following entity. The entity is {entity_info}. "
                 "Please output the {attribute_list} of the entity.")

WDC_ATTRIBUTES = ("capacity", "color", "frequency", "keywords", "language", "model number",
                  "product identifier", "release year", "resolution", "size", "speed", "weight")
REL_TEXT_ATTRIBUTES = ("title", "abstract")

MEANINGLESS_PATTERNS = (r"", r"unknown", r"n/a", r"na", r"none", r"not available", r"not specified",
                        r"null", r"-")

API_KEY_ENV = "GEMPROMPT_LLM_API_KEY"
API_URL_ENV = "GEMPROMPT_LLM_URL"


# ---------------------------------------------------------------------------
# attribute selection


@dataclass
class AttributePlan:
    mode: str  # "source_level" | "instance_level"
    fixed_list: tuple[str, ...] = ()
    per_entity: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("source_level", "instance_level"):
            raise ValueError(f"unknown plan mode {self.mode!r}")
        self.fixed_list = _dedupe(self.fixed_list)
        self.per_entity = {k: _dedupe(v) for k, v in self.per_entity.items()}
        if self.mode == "source_level" and not self.fixed_list:
            raise ValueError("source_level plan needs a non-empty attribute list")

    def attributes_for(self, entity_id: str) -> tuple[str, ...]:
        if self.mode == "source_level":
            return self.fixed_list
        return self.per_entity.get(entity_id, ())

    def entity_ids(self, d: Dataset) -> list[str]:
        if self.mode == "source_level":
            return list(d.left) + list(d.right)
        return [eid for eid in list(d.left) + list(d.right) if self.per_entity.get(eid)]


def _dedupe(items: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(items))


def select_attributes(d: Dataset, mode: str, fixed_list: Sequence[str] | None = None) -> AttributePlan:
    """Source-level: a fixed attribute list.  Instance-level: per entity, the
    union of the keys (at every nesting level) of its blocking candidates."""
    if mode in ("source", "source_level"):
        return AttributePlan("source_level", tuple(fixed_list or ()))
    if mode not in ("instance", "instance_level"):
        raise ValueError(f"unknown attribute selection mode {mode!r}")
    per_entity = {}
    skipped = []
    for eid in list(d.left) + list(d.right):
        cands = d.candidates.get(eid, ())
        if not cands:
            skipped.append(eid)
            continue
        keys: dict[str, None] = {}
        for c in cands:
            for k in ordered_keys(d.entity(c)):
                keys.setdefault(k, None)
        if keys:
            per_entity[eid] = tuple(keys)
        else:
            log.warning("candidates of entity %s carry no attribute keys; skipped", eid)
    if skipped:
        log.warning("%d entities have no blocking candidates and are skipped (first: %s)",
                    len(skipped), ", ".join(skipped[:3]))
    return AttributePlan("instance_level", per_entity=per_entity)


# ---------------------------------------------------------------------------
# request / response


def entity_info(e: Entity) -> str:
    if e.shape is Shape.TEXTUAL:
        return e.text
    return json.dumps(e.content(), ensure_ascii=False)


def build_llm_request(e: Entity, attrs: Sequence[str]) -> list[dict[str, str]]:
    if not attrs:
        raise ValueError("attribute list is empty")
    user = USER_TEMPLATE.format(entity_info=entity_info(e), attribute_list=", ".join(attrs))
    return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": user}]


@dataclass
class AugmentationRecord:
    entity_id: str
    values: dict[str, str]
    raw_response: str = ""
    source: str = "llm"  # llm | cache | padded

    @property
    def n_informative(self) -> int:
        return sum(1 for v in self.values.values() if v != PAD)

    def to_dict(self) -> dict:
        return {"entity_id": self.entity_id, "values": self.values, "raw_response": self.raw_response,
                "source": self.source}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "AugmentationRecord":
        return cls(obj["entity_id"], dict(obj["values"]), obj.get("raw_response", ""), obj.get("source", "llm"))


def padded_record(entity_id: str, attrs: Sequence[str], raw: str = "") -> AugmentationRecord:
    return AugmentationRecord(entity_id, {a: PAD for a in attrs}, raw, "padded")


class ValueFilter:
    """Case-insensitive full-match patterns for values that carry no information."""

    def __init__(self, patterns: Iterable[str] = MEANINGLESS_PATTERNS):
        self.patterns = [re.compile(p, re.IGNORECASE) for p in patterns]

    def meaningless(self, value: str) -> bool:
        v = value.strip()
        return any(p.fullmatch(v) for p in self.patterns)


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL | re.IGNORECASE)


def _load_json_object(text: str) -> dict | None:
    try:
        obj = json.loads(text)
        return obj if isinstance(obj, dict) else None
    except (json.JSONDecodeError, TypeError):
        pass
    # one repair pass: fenced block, then the outermost brace pair
    m = _FENCE_RE.search(text)
    body = m.group(1) if m else text
    start, end = body.find("{"), body.rfind("}")
    if start < 0 or end <= start:
        return None
    try:
        obj = json.loads(body[start:end + 1])
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


def _norm(key: str) -> str:
    return re.sub(r"[^a-z0-9]", "", key.lower())


def parse_llm_response(text: str, attrs: Sequence[str], entity_id: str = "",
                       value_filter: ValueFilter | None = None) -> AugmentationRecord:
    """Record covering exactly ``attrs``; anything absent or meaningless is ``<pad>``."""
    obj = _load_json_object(text or "")
    if obj is None:
        return padded_record(entity_id, attrs, text or "")
    value_filter = value_filter or ValueFilter()
    by_norm = {}
    for k, v in obj.items():
        by_norm.setdefault(_norm(str(k)), v)
    values = {}
    for a in attrs:
        v = obj.get(a, by_norm.get(_norm(a)))
        if v is None:
            values[a] = PAD
            continue
        s = v if isinstance(v, str) else render_value(v)
        values[a] = PAD if value_filter.meaningless(s) else s.strip()
    return AugmentationRecord(entity_id, values, text, "llm")


# ---------------------------------------------------------------------------
# clients


class ChatClient(Protocol):
    model: str

    def complete(self, messages: list[dict[str, str]], key: str) -> str:
        """Reply text for a chat request; ``key`` identifies the entity."""


class StubClient:
    """Offline client replaying canned responses keyed by entity id.

    Fixture file: JSON lines ``{"id": ..., "response": ...}``.
    """

    def __init__(self, responses: Mapping[str, str] | None = None, default: str | None = None,
                 model: str = "stub"):
        self.responses = dict(responses or {})
        self.default = default
        self.model = model
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "StubClient":
        responses = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    responses[str(obj["id"])] = obj["response"]
        return cls(responses, **kwargs)

    def complete(self, messages, key):
        with self._lock:
            self.calls += 1
        if key in self.responses:
            return self.responses[key]
        if self.default is not None:
            return self.default
        raise KeyError(f"no canned response for entity {key!r}")


class OpenAIChatClient:
    """Minimal chat-completions client with retries and a request-rate cap."""

    def __init__(self, model: str = "gpt-3.5-turbo", url: str | None = None, api_key: str | None = None,
                 temperature: float = 0.0, retries: int = 3, backoff: float = 1.0,
                 min_interval: float = 0.0, timeout: float = 60.0):
        self.model = model
        self.url = url or os.environ.get(API_URL_ENV, "https://api.openai.com/v1/chat/completions")
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        self.temperature = temperature
        self.retries = retries
        self.backoff = backoff
        self.min_interval = min_interval
        self.timeout = timeout
        self._lock = threading.Lock()
        self._last = 0.0

    def _throttle(self):
        if self.min_interval <= 0:
            return
        with self._lock:
            wait = self._last + self.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last = time.monotonic()

    def complete(self, messages, key):
        import httpx

        if not self.api_key:
            raise RuntimeError(f"no API key; set {API_KEY_ENV}")
        payload = {"model": self.model, "messages": messages, "temperature": self.temperature}
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_exc = None
        for attempt in range(self.retries + 1):
            self._throttle()
            try:
                resp = httpx.post(self.url, json=payload, headers=headers, timeout=self.timeout)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_exc = exc
                if isinstance(exc, httpx.HTTPStatusError) and exc.response.status_code < 500 \
                        and exc.response.status_code != 429:
                    break
                if attempt < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise RuntimeError(f"LLM request for {key} failed: {last_exc}") from last_exc


# ---------------------------------------------------------------------------
# cache


def cache_key(entity_id: str, attrs: Sequence[str], model: str) -> str:
    digest = hashlib.sha1("\x1f".join(attrs).encode("utf-8")).hexdigest()[:16]
    return f"{entity_id}|{digest}|{model}"


class AugmentationCache:
    """JSON-lines store of records keyed by (entity id, attribute list, model)."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._data: dict[str, AugmentationRecord] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        obj = json.loads(line)
                        self._data[obj["key"]] = AugmentationRecord.from_dict(obj["record"])

    def __len__(self) -> int:
        return len(self._data)

    def get(self, key: str) -> AugmentationRecord | None:
        return self._data.get(key)

    def put(self, key: str, record: AugmentationRecord) -> None:
        line = json.dumps({"key": key, "record": record.to_dict()}, ensure_ascii=False) + "\n"
        with self._lock:
            self._data[key] = record
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line)


# ---------------------------------------------------------------------------
# dataset driver


@dataclass
class AugmentationReport:
    records: dict[str, AugmentationRecord]
    client_calls: int = 0
    cache_hits: int = 0
    failures: int = 0
    selected: int = 0

    @property
    def coverage(self) -> float:
        """Share of records holding a real (non-padded) answer."""
        if not self.records:
            return 0.0
        return sum(1 for r in self.records.values() if r.source != "padded") / len(self.records)

    @property
    def cache_hit_rate(self) -> float:
        return self.cache_hits / self.selected if self.selected else 0.0


def augment_dataset(d: Dataset, plan: AttributePlan, client: ChatClient | None,
                    policy: str | Iterable[str] = "all", cache: AugmentationCache | None = None,
                    concurrency: int = 4, value_filter: ValueFilter | None = None) -> tuple[Dataset, AugmentationReport]:
    """Attach an AugmentationRecord to every planned entity.

    ``policy="all"`` queries every entity; any other iterable is the set of
    entity ids allowed to query (the rest get all-pad records).  The cache is
    consulted before the client.  Client errors yield padded records and
    count as failures.
    """
    cache = cache if cache is not None else AugmentationCache()
    ids = plan.entity_ids(d)
    allowed = set(ids) if policy == "all" else set(policy)
    model = getattr(client, "model", "none")
    records: dict[str, AugmentationRecord] = {}
    todo = []
    report = AugmentationReport(records)
    for eid in ids:
        attrs = plan.attributes_for(eid)
        if eid not in allowed:
            records[eid] = padded_record(eid, attrs)
            continue
        report.selected += 1
        key = cache_key(eid, attrs, model)
        hit = cache.get(key)
        if hit is not None:
            report.cache_hits += 1
            records[eid] = AugmentationRecord(eid, dict(hit.values), hit.raw_response, "cache")
        else:
            todo.append((eid, attrs, key))

    def work(item):
        eid, attrs, key = item
        try:
            raw = client.complete(build_llm_request(d.entity(eid), attrs), eid)
        except Exception as exc:  # exhausted retries, missing fixture, ...
            log.warning("augmentation failed for %s: %s", eid, exc)
            return eid, padded_record(eid, attrs), key, False
        return eid, parse_llm_response(raw, attrs, eid, value_filter), key, True

    if todo:
        if client is None:
            raise ValueError("entities need augmentation but no client was given")
        with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
            results = list(pool.map(work, todo))
        for eid, rec, key, ok in results:
            report.client_calls += 1
            if ok:
                cache.put(key, rec)
            else:
                report.failures += 1
            records[eid] = rec
    # deterministic order regardless of completion order
    report.records = {eid: records[eid] for eid in ids}
    merged = dict(d.augmentations)
    merged.update(report.records)
    return d.with_augmentations(merged), report


def write_records(path: str | Path, records: Iterable[AugmentationRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def read_records(path: str | Path) -> dict[str, AugmentationRecord]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = AugmentationRecord.from_dict(json.loads(line))
                out[r.entity_id] = r
    return out
