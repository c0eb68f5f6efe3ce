"""Pairwise prompt assembly, masked-LM scoring and the verbalizer."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import torch
import torch.nn as nn

from .backbone import model_from_config_dict, tokenizer_from_blob, tokenizer_to_blob
from .data import Dataset, Entity, MatchPair
from .serialize import PromptTemplate, Serializer, Span
from .soft_prompt import ContextualSoftPrompt, SoftPromptConfig, inject_soft_tokens

MATCH_WORDS = ("matched", "similar", "relevant")
MISMATCH_WORDS = ("mismatched", "different", "irrelevant")
KEYWORD_PHRASE = "the keyword is"
MASK_LITERAL = "[MASK]"


class DegenerateScores(ValueError):
    """All label-word scores are zero."""


def verbalize(scores: Mapping[str, float], match_words: Sequence[str] = MATCH_WORDS,
              mismatch_words: Sequence[str] = MISMATCH_WORDS) -> float:
    """Match probability: match-set mass over the mass of both sets."""
    pos = sum(float(scores[w]) for w in match_words)
    neg = sum(float(scores[w]) for w in mismatch_words)
    if pos + neg <= 0:
        raise DegenerateScores("label-word scores sum to zero")
    return pos / (pos + neg)


def soft_suffix(k: int) -> str:
    return " ".join(f"[S_{i}]" for i in range(1, k + 1))


def serialize_soft(text: str, k: int) -> str:
    if k <= 0:
        return text
    return f"{text} {KEYWORD_PHRASE} {soft_suffix(k)}"


def build_prompt_text(left_text: str, right_text: str, k: int = 0) -> str:
    """``soft(a) is [MASK] to soft(b).``"""
    return f"{serialize_soft(left_text, k)} is {MASK_LITERAL} to {serialize_soft(right_text, k)}."


@dataclass
class PromptInstance:
    text: str
    input_ids: list[int]
    mask_position: int
    soft_positions_left: list[int]
    soft_positions_right: list[int]
    pair: MatchPair | None = None
    # entity token streams for the soft-token encoder
    left_ids: list[int] = field(default_factory=list)
    left_columns: list[int] = field(default_factory=list)
    right_ids: list[int] = field(default_factory=list)
    right_columns: list[int] = field(default_factory=list)


@dataclass
class MatchPrediction:
    p_match: float
    label: int
    word_scores: dict[str, float]
    left: str | None = None
    right: str | None = None

    @property
    def p_nonmatch(self) -> float:
        return 1.0 - self.p_match

    def to_json(self) -> str:
        return json.dumps({"left": self.left, "right": self.right, "p_match": self.p_match, "label": self.label})


def decide(p_match: float) -> int:
    """Match iff p >= 0.5 (ties go to match)."""
    return int(p_match >= 0.5)


def tokenize_with_columns(text: str, spans: Sequence[Span], tokenizer) -> tuple[list[int], list[int]]:
    """Token ids of ``text`` and, per token, the index of the span it falls in.

    Tokens between spans take the column of the closest preceding span.
    """
    enc = tokenizer(text, add_special_tokens=False, return_offsets_mapping=True)
    columns = []
    for start, end in enc["offset_mapping"]:
        col = 0
        for i, (a, b) in enumerate(spans):
            if start >= a:
                col = i
            if a <= start < b:
                break
        columns.append(col)
    return list(enc["input_ids"]), columns


def _piece(tokenizer, text: str) -> list[int]:
    return list(tokenizer(text, add_special_tokens=False)["input_ids"])


def build_prompt(e_a: Entity, e_b: Entity, tokenizer, serializer: Serializer | None = None, k: int = 0,
                 max_length: int = 512, aug_a: Mapping[str, str] | None = None,
                 aug_b: Mapping[str, str] | None = None, pair: MatchPair | None = None) -> PromptInstance:
    """Tokenized pairwise prompt.

    Over-long pairs lose tail tokens of the longer entity first, alternating
    once both are equal; the mask and soft placeholders are never dropped.
    """
    serializer = serializer or Serializer()
    text_a, spans_a = serializer.render(e_a, aug_a)
    text_b, spans_b = serializer.render(e_b, aug_b)
    if not text_a.strip() and not text_b.strip():
        raise ValueError(f"both entities of pair ({e_a.id}, {e_b.id}) serialize to empty text")
    ids_a, cols_a = tokenize_with_columns(text_a, spans_a, tokenizer)
    ids_b, cols_b = tokenize_with_columns(text_b, spans_b, tokenizer)

    placeholder = tokenizer.unk_token_id
    suffix = (_piece(tokenizer, " " + KEYWORD_PHRASE) + [placeholder] * k) if k > 0 else []
    is_ids, to_ids, end_ids = _piece(tokenizer, " is"), _piece(tokenizer, " to"), _piece(tokenizer, ".")
    fixed = 2 + 2 * len(suffix) + len(is_ids) + 1 + len(to_ids) + len(end_ids)
    budget = max_length - fixed
    if budget < 2:
        raise ValueError(f"max_length {max_length} leaves no room for entity tokens")
    # mid-sentence, so a leading space keeps BPE vocabularies on word-initial pieces
    prompt_b = _piece(tokenizer, " " + text_b) if text_b else []
    la, lb = len(ids_a), len(prompt_b)
    while la + lb > budget:
        if la >= lb:
            la -= 1
        else:
            lb -= 1
    body_a, body_b = ids_a[:la], prompt_b[:lb]

    ids = [tokenizer.bos_token_id if tokenizer.bos_token_id is not None else tokenizer.cls_token_id]
    ids += body_a
    soft_left = list(range(len(ids) + len(suffix) - k, len(ids) + len(suffix))) if k > 0 else []
    ids += suffix + is_ids
    mask_position = len(ids)
    ids += [tokenizer.mask_token_id] + to_ids + body_b
    soft_right = list(range(len(ids) + len(suffix) - k, len(ids) + len(suffix))) if k > 0 else []
    ids += suffix + end_ids
    ids.append(tokenizer.eos_token_id if tokenizer.eos_token_id is not None else tokenizer.sep_token_id)

    # the soft encoder always sees at least one token
    left_ids, left_cols = (ids_a, cols_a) if ids_a else ([tokenizer.unk_token_id], [0])
    right_ids, right_cols = (ids_b, cols_b) if ids_b else ([tokenizer.unk_token_id], [0])
    return PromptInstance(
        text=build_prompt_text(text_a, text_b, k),
        input_ids=ids,
        mask_position=mask_position,
        soft_positions_left=soft_left,
        soft_positions_right=soft_right,
        pair=pair,
        left_ids=left_ids,
        left_columns=left_cols,
        right_ids=right_ids,
        right_columns=right_cols,
    )


def _pad(rows: Sequence[Sequence[int]], value: int) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), value, dtype=torch.long)
    mask = torch.zeros((len(rows), width), dtype=torch.bool)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.tensor(r, dtype=torch.long)
        mask[i, : len(r)] = True
    return out, mask


class MatchModel(nn.Module):
    """Backbone MLM + optional contextualized soft tokens + verbalizer."""

    def __init__(self, backbone, tokenizer, soft_config: SoftPromptConfig | None = None,
                 serializer: Serializer | None = None, max_length: int | None = None,
                 match_words: Sequence[str] = MATCH_WORDS, mismatch_words: Sequence[str] = MISMATCH_WORDS):
        super().__init__()
        self.backbone = backbone
        self.tokenizer = tokenizer
        self.serializer = serializer or Serializer()
        self.match_words = tuple(match_words)
        self.mismatch_words = tuple(mismatch_words)
        hidden = backbone.get_input_embeddings().embedding_dim
        if soft_config is not None:
            if soft_config.hidden != hidden:
                raise ValueError(f"soft prompt hidden={soft_config.hidden} but backbone hidden={hidden}")
            self.soft = ContextualSoftPrompt(soft_config)
        else:
            self.soft = None
        limit = getattr(backbone.config, "max_position_embeddings", 512)
        if getattr(backbone.config, "model_type", "") in ("roberta", "xlm-roberta", "camembert"):
            limit -= 2
        self.max_length = min(max_length or limit, limit)

        ids = []
        for w in self.match_words + self.mismatch_words:
            pieces = _piece(tokenizer, " " + w)
            if not pieces or pieces[0] == tokenizer.unk_token_id:
                raise ValueError(f"label word {w!r} is not in the tokenizer vocabulary")
            ids.append(pieces[0])  # first sub-word piece
        self.register_buffer("label_ids", torch.tensor(ids, dtype=torch.long), persistent=False)

    @property
    def num_aspects(self) -> int:
        return self.soft.config.num_aspects if self.soft is not None else 0

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    def build(self, e_a: Entity, e_b: Entity, aug_a=None, aug_b=None, pair: MatchPair | None = None) -> PromptInstance:
        return build_prompt(e_a, e_b, self.tokenizer, self.serializer, self.num_aspects, self.max_length,
                            aug_a, aug_b, pair)

    def instances(self, dataset: Dataset, pairs: Iterable[MatchPair] | None = None) -> list[PromptInstance]:
        out = []
        for p in (dataset.pairs if pairs is None else pairs):
            out.append(self.build(dataset.left[p.left], dataset.right[p.right],
                                  _aug_values(dataset, p.left), _aug_values(dataset, p.right), p))
        return out

    def collate(self, batch: Sequence[PromptInstance]) -> dict[str, torch.Tensor]:
        pad = self.tokenizer.pad_token_id
        ids, mask = _pad([b.input_ids for b in batch], pad)
        out = {
            "input_ids": ids,
            "attention_mask": mask,
            "mask_position": torch.tensor([b.mask_position for b in batch], dtype=torch.long),
        }
        if self.soft is not None:
            ent_rows = [b.left_ids for b in batch] + [b.right_ids for b in batch]
            col_rows = [b.left_columns for b in batch] + [b.right_columns for b in batch]
            cap = self.soft.config.max_positions
            ent_rows = [r[:cap] for r in ent_rows]
            col_rows = [r[:cap] for r in col_rows]
            out["entity_ids"], out["entity_mask"] = _pad(ent_rows, pad)
            out["entity_columns"], _ = _pad(col_rows, 0)
            out["soft_positions"] = torch.tensor(
                [b.soft_positions_left + b.soft_positions_right for b in batch], dtype=torch.long)
        return out

    def forward(self, batch: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
        dev = self.device
        batch = {k: v.to(dev) for k, v in batch.items()}
        table = self.backbone.get_input_embeddings()
        x = table(batch["input_ids"])
        soft_emb = weights = None
        if self.soft is not None:
            n = x.shape[0]
            ent = table(batch["entity_ids"])
            soft_emb, weights = self.soft(ent, batch["entity_columns"], batch["entity_mask"])
            both = torch.cat([soft_emb[:n], soft_emb[n:]], dim=1)
            x = inject_soft_tokens(x, batch["soft_positions"], both)
            soft_emb = torch.stack([soft_emb[:n], soft_emb[n:]], dim=1)  # (B, 2, K, H)
        logits = self.backbone(inputs_embeds=x, attention_mask=batch["attention_mask"].long()).logits
        rows = torch.arange(x.shape[0], device=dev)
        probs = torch.softmax(logits[rows, batch["mask_position"]].float(), dim=-1)
        word = probs[:, self.label_ids]
        n_pos = len(self.match_words)
        total = word.sum(-1)
        p_match = word[:, :n_pos].sum(-1) / total.clamp_min(torch.finfo(total.dtype).tiny)
        return {"p_match": p_match, "word_scores": word, "soft": soft_emb, "attention": weights}

    @torch.no_grad()
    def predict_batch(self, batch: Sequence[PromptInstance]) -> list[MatchPrediction]:
        was_training = self.training
        self.eval()
        try:
            out = self(self.collate(batch))
        finally:
            self.train(was_training)
        words = self.match_words + self.mismatch_words
        preds = []
        for inst, p, w in zip(batch, out["p_match"].tolist(), out["word_scores"].tolist()):
            if sum(w) <= 0:
                raise DegenerateScores("backbone assigned zero mass to every label word")
            pair = inst.pair
            preds.append(MatchPrediction(p, decide(p), dict(zip(words, w)),
                                         pair.left if pair else None, pair.right if pair else None))
        return preds

    def predict(self, instances: Sequence[PromptInstance], batch_size: int = 32) -> list[MatchPrediction]:
        preds = []
        for i in range(0, len(instances), batch_size):
            preds.extend(self.predict_batch(instances[i:i + batch_size]))
        return preds

    @torch.no_grad()
    def attention_maps(self, dataset: Dataset, entity_ids: Sequence[str]) -> list[dict]:
        """Aspect attention over each entity's tokens (for visualisation)."""
        if self.soft is None:
            raise ValueError("model has no soft-token module")
        self.eval()
        records = []
        for eid in entity_ids:
            text, spans = self.serializer.render(dataset.entity(eid), _aug_values(dataset, eid))
            ids, cols = tokenize_with_columns(text, spans, self.tokenizer)
            ids, cols = ids or [self.tokenizer.unk_token_id], cols or [0]
            t_ids = torch.tensor([ids], device=self.device)
            t_cols = torch.tensor([cols], device=self.device)
            _, w = self.soft(self.backbone.get_input_embeddings()(t_ids), t_cols)
            records.append({"entity": eid, "tokens": self.tokenizer.convert_ids_to_tokens(ids), "weights": w[0]})
        return records


def predict(instance: PromptInstance, model: MatchModel) -> MatchPrediction:
    return model.predict_batch([instance])[0]


def _aug_values(dataset: Dataset, entity_id: str) -> dict[str, str] | None:
    rec = dataset.augmentations.get(entity_id)
    return None if rec is None else dict(rec.values)


def write_predictions(path: str | Path, predictions: Iterable[MatchPrediction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(p.to_json() + "\n")


def read_predictions(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# checkpoints: one torch archive with weights, configs and the tokenizer


def save_checkpoint(path: str | Path, model: MatchModel, extra: Mapping | None = None) -> None:
    t = model.serializer.template
    blob = {
        "backbone_config": model.backbone.config.to_dict(),
        "tokenizer": tokenizer_to_blob(model.tokenizer),
        "soft_config": asdict(model.soft.config) if model.soft is not None else None,
        "serializer": {"style": model.serializer.style, "template": t.to_dict() if t else None},
        "max_length": model.max_length,
        "label_words": [list(model.match_words), list(model.mismatch_words)],
        "state_dict": model.state_dict(),
        "extra": dict(extra or {}),
    }
    torch.save(blob, path)


def load_checkpoint(path: str | Path, map_location: str = "cpu") -> MatchModel:
    blob = torch.load(path, map_location=map_location, weights_only=False)
    backbone = model_from_config_dict(dict(blob["backbone_config"]))
    tokenizer = tokenizer_from_blob(blob["tokenizer"])
    soft = SoftPromptConfig(**blob["soft_config"]) if blob["soft_config"] else None
    s = blob["serializer"]
    serializer = Serializer(s["style"], PromptTemplate.from_dict(s["template"]) if s["template"] else None)
    match_words, mismatch_words = blob["label_words"]
    model = MatchModel(backbone, tokenizer, soft, serializer, blob["max_length"], match_words, mismatch_words)
    model.load_state_dict(blob["state_dict"])
    return model
