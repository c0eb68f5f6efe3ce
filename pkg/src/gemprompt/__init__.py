"""Prompt-tuned generalized entity matching with contextualized soft tokens
and LLM-based information augmentation."""

from .data import MISSING, Dataset, Entity, MatchPair, Shape, collect_keys, parse_entity
from .serialize import PAD, PromptTemplate, Serializer, parse_filled, serialize_ditto, serialize_natural

__version__ = "0.1.0"

__all__ = [
    "MISSING", "PAD", "Dataset", "Entity", "MatchPair", "PromptTemplate", "Serializer", "Shape",
    "collect_keys", "parse_entity", "parse_filled", "serialize_ditto", "serialize_natural",
]
