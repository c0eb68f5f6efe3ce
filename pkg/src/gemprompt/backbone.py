"""Masked-LM backbones: pretrained checkpoints or a tiny offline stand-in."""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable

import torch
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.normalizers import Lowercase
from tokenizers.pre_tokenizers import Whitespace
from transformers import (AutoConfig, AutoModelForMaskedLM, AutoTokenizer, PreTrainedTokenizerFast,
                          RobertaConfig, RobertaForMaskedLM)

SPECIAL_TOKENS = {
    "bos_token": "<s>",
    "pad_token": "<pad>",
    "eos_token": "</s>",
    "unk_token": "<unk>",
    "mask_token": "<mask>",
    "cls_token": "<s>",
    "sep_token": "</s>",
}
_ORDERED_SPECIALS = ["<s>", "<pad>", "</s>", "<unk>", "<mask>"]


def load_backbone(name_or_path: str, local_files_only: bool = False):
    """(model, tokenizer) for a Hugging Face masked-LM checkpoint."""
    tokenizer = AutoTokenizer.from_pretrained(name_or_path, use_fast=True, local_files_only=local_files_only)
    model = AutoModelForMaskedLM.from_pretrained(name_or_path, local_files_only=local_files_only)
    return model, tokenizer


def word_level_tokenizer(texts: Iterable[str], extra_words: Iterable[str] = (), min_count: int = 1):
    """Lower-cased word/punctuation tokenizer over a corpus."""
    counts = Counter()
    for t in texts:
        counts.update(re.findall(r"\w+|[^\w\s]", t.lower()))
    words = [w for w, c in sorted(counts.items()) if c >= min_count]
    vocab = {tok: i for i, tok in enumerate(_ORDERED_SPECIALS)}
    for w in list(extra_words) + words:
        w = w.lower()
        if w not in vocab:
            vocab[w] = len(vocab)
    tok = Tokenizer(WordLevel(vocab, unk_token="<unk>"))
    tok.normalizer = Lowercase()
    tok.pre_tokenizer = Whitespace()
    return PreTrainedTokenizerFast(tokenizer_object=tok, **SPECIAL_TOKENS)


def build_tiny_backbone(texts: Iterable[str], extra_words: Iterable[str] = (), hidden: int = 32,
                        layers: int = 2, heads: int = 2, max_positions: int = 256, dropout: float = 0.0,
                        seed: int = 0):
    """Small randomly initialised RoBERTa MLM plus a matching word-level tokenizer.

    Used for offline tests and demos; it knows nothing about language.
    """
    tokenizer = word_level_tokenizer(texts, extra_words)
    config = RobertaConfig(
        vocab_size=len(tokenizer),
        hidden_size=hidden,
        num_hidden_layers=layers,
        num_attention_heads=heads,
        intermediate_size=4 * hidden,
        max_position_embeddings=max_positions + 2,
        hidden_dropout_prob=dropout,
        attention_probs_dropout_prob=dropout,
        pad_token_id=tokenizer.pad_token_id,
        bos_token_id=tokenizer.bos_token_id,
        eos_token_id=tokenizer.eos_token_id,
    )
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = RobertaForMaskedLM(config)
    return model, tokenizer


def model_from_config_dict(config: dict):
    cfg = AutoConfig.for_model(**config)
    return AutoModelForMaskedLM.from_config(cfg)


def tokenizer_to_blob(tokenizer) -> dict:
    special = {k: getattr(tokenizer, k) for k in SPECIAL_TOKENS if getattr(tokenizer, k, None) is not None}
    return {"backend": tokenizer.backend_tokenizer.to_str(), "special": special,
            "model_max_length": int(min(tokenizer.model_max_length, 10**6))}


def tokenizer_from_blob(blob: dict):
    tok = PreTrainedTokenizerFast(tokenizer_object=Tokenizer.from_str(blob["backend"]), **blob["special"])
    tok.model_max_length = blob["model_max_length"]
    return tok
