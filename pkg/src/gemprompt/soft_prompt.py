"""Contextualized soft tokens.

K learnable aspect queries attend over an entity's encoded tokens; the
attended values, after a linear map and layer norm, become the embeddings
of the K placeholder tokens that follow "the keyword is" in the prompt.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import torch
import torch.nn as nn

PE_MODES = ("COL", "POS", "NONE")
ASPECT_GRID = (1, 2, 4, 8)
LAYER_GRID = (0, 1, 2)


class SoftPromptConfigError(ValueError):
    pass


@dataclass
class SoftPromptConfig:
    num_aspects: int = 4  # K
    num_layers: int = 0  # N, encoder layers ahead of the aspect attention
    d_q: int = 768
    d_v: int = 768
    hidden: int = 768  # backbone embedding width; also the regularizer width d_s
    pe_mode: str = "POS"
    num_heads: int = 12
    max_positions: int = 512
    max_columns: int = 64
    dropout: float = 0.1
    init_std: float = 0.02

    def __post_init__(self):
        if self.num_aspects < 1:
            raise SoftPromptConfigError("num_aspects must be >= 1")
        if self.num_layers not in LAYER_GRID:
            raise SoftPromptConfigError(f"num_layers must be one of {LAYER_GRID}, got {self.num_layers}")
        if min(self.d_q, self.d_v, self.hidden) <= 0:
            raise SoftPromptConfigError("d_q, d_v and hidden must be positive")
        if self.pe_mode not in PE_MODES:
            raise SoftPromptConfigError(f"pe_mode must be one of {PE_MODES}, got {self.pe_mode!r}")
        if self.num_layers and self.hidden % self.num_heads:
            raise SoftPromptConfigError("hidden must be divisible by num_heads")

    @property
    def d_s(self) -> int:
        return self.hidden


def aspect_attention(aspects: torch.Tensor, keys: torch.Tensor, values: torch.Tensor,
                     mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """softmax(A K^T / sqrt(d_q)) V.

    aspects: (K, d_q); keys: (..., l, d_q); values: (..., l, d_v);
    mask: (..., l), true for real tokens.  Returns (output (..., K, d_v),
    weights (..., K, l)).
    """
    d_q = aspects.shape[-1]
    logits = torch.matmul(aspects, keys.transpose(-1, -2)) / math.sqrt(d_q)
    if mask is not None:
        logits = logits.masked_fill(~mask.bool().unsqueeze(-2), float("-inf"))
    weights = torch.softmax(logits, dim=-1)
    return torch.matmul(weights, values), weights


def inject_soft_tokens(embeds: torch.Tensor, positions: torch.Tensor, soft: torch.Tensor) -> torch.Tensor:
    """Replace placeholder rows of ``embeds`` with soft embeddings.

    embeds: (B, L, H); positions: (B, K) long; soft: (B, K, H).  Returns a new
    tensor; rows not listed in ``positions`` are untouched.
    """
    if positions.numel() == 0:
        return embeds
    if positions.shape != soft.shape[:2]:
        raise ValueError(f"positions {tuple(positions.shape)} do not match soft rows {tuple(soft.shape[:2])}")
    length = embeds.shape[1]
    if bool((positions < 0).any()) or bool((positions >= length).any()):
        raise IndexError(f"soft position out of range for sequence length {length}")
    index = positions.unsqueeze(-1).expand(-1, -1, embeds.shape[-1])
    return embeds.scatter(1, index, soft.to(embeds.dtype))


class ContextualSoftPrompt(nn.Module):
    """Encoder stack + aspect attention + post-processing.

    Token embeddings are passed in by the caller (they come from the
    backbone's embedding table) so this module holds no vocabulary.
    """

    def __init__(self, config: SoftPromptConfig):
        super().__init__()
        self.config = config
        c = config
        self.position_embeddings = nn.Embedding(c.max_positions, c.hidden) if c.pe_mode == "POS" else None
        self.column_embeddings = nn.Embedding(c.max_columns, c.hidden) if c.pe_mode == "COL" else None
        if c.num_layers:
            layer = nn.TransformerEncoderLayer(c.hidden, c.num_heads, dim_feedforward=4 * c.hidden,
                                               dropout=c.dropout, batch_first=True)
            self.encoder = nn.TransformerEncoder(layer, c.num_layers, enable_nested_tensor=False)
        else:
            self.encoder = None
        self.aspects = nn.Parameter(torch.randn(c.num_aspects, c.d_q) * c.init_std)
        self.key = nn.Linear(c.hidden, c.d_q)
        self.value = nn.Linear(c.hidden, c.d_v)
        self.post = nn.Linear(c.d_v, c.hidden)
        self.norm = nn.LayerNorm(c.hidden)
        for emb in (self.position_embeddings, self.column_embeddings):
            if emb is not None:
                nn.init.normal_(emb.weight, std=c.init_std)

    def encode_tokens(self, token_embeds: torch.Tensor, columns: torch.Tensor | None = None,
                      mask: torch.Tensor | None = None) -> torch.Tensor:
        """(B, l, H) token embeddings -> (B, l, H) encoded embeddings E."""
        c = self.config
        x = token_embeds
        if c.pe_mode == "POS":
            pos = torch.arange(x.shape[1], device=x.device).clamp(max=c.max_positions - 1)
            x = x + self.position_embeddings(pos)
        elif c.pe_mode == "COL":
            if columns is None:
                raise SoftPromptConfigError("pe_mode=COL needs per-token column indices")
            x = x + self.column_embeddings(columns.clamp(0, c.max_columns - 1))
        if self.encoder is not None:
            pad_mask = None if mask is None else ~mask.bool()
            x = self.encoder(x, src_key_padding_mask=pad_mask)
        return x

    def attend(self, encoded: torch.Tensor, mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """Aspect attention only (no post-processing): ((B, K, d_v), (B, K, l))."""
        return aspect_attention(self.aspects, self.key(encoded), self.value(encoded), mask)

    def extract_aspects(self, encoded: torch.Tensor, mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """Post-processed soft embeddings (B, K, H) and attention weights."""
        attended, weights = self.attend(encoded, mask)
        return self.norm(self.post(attended)), weights

    def forward(self, token_embeds: torch.Tensor, columns: torch.Tensor | None = None,
                mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        return self.extract_aspects(self.encode_tokens(token_embeds, columns, mask), mask)


def save_soft_prompt(path: str | Path, module: ContextualSoftPrompt) -> None:
    torch.save({"config": asdict(module.config), "state_dict": module.state_dict()}, path)


def load_soft_prompt(path: str | Path) -> ContextualSoftPrompt:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    module = ContextualSoftPrompt(SoftPromptConfig(**blob["config"]))
    module.load_state_dict(blob["state_dict"])
    return module


def export_attention(path: str | Path, records: Sequence[dict]) -> None:
    """Write attention maps as JSON.

    Each record: ``{"entity": id, "tokens": [...], "weights": K x l}``;
    tensors are converted to nested lists.
    """
    out = []
    for r in records:
        w = r["weights"]
        if isinstance(w, torch.Tensor):
            w = w.detach().cpu().tolist()
        out.append({"entity": r["entity"], "tokens": list(r["tokens"]), "weights": w})
    Path(path).write_text(json.dumps(out, ensure_ascii=False, indent=1), encoding="utf-8")
