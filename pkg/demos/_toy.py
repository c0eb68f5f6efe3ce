"""Shared helpers for the demo scripts: the toy product data and a tiny backbone."""

from pathlib import Path

from gemprompt.backbone import build_tiny_backbone
from gemprompt.data import load_dataset
from gemprompt.matcher import KEYWORD_PHRASE, MATCH_WORDS, MISMATCH_WORDS, MatchModel
from gemprompt.serialize import Serializer
from gemprompt.soft_prompt import SoftPromptConfig

DATA = Path(__file__).parent / "data"


def toy_splits():
    full = load_dataset(DATA / "left.jsonl", DATA / "right.jsonl", DATA / "train.tsv", DATA / "candidates.jsonl")
    test = load_dataset(DATA / "left.jsonl", DATA / "right.jsonl", DATA / "test.tsv", DATA / "candidates.jsonl")
    return full, test


def tiny_matcher(dataset, k=4, hidden=32, pe_mode="POS", num_layers=0, init_std=0.02, seed=0):
    serializer = Serializer()
    texts = [serializer(e) for e in dataset.entities()]
    words = list(MATCH_WORDS + MISMATCH_WORDS) + KEYWORD_PHRASE.split() + ["is", "to", "."]
    backbone, tok = build_tiny_backbone(texts, words, hidden=hidden, seed=seed)
    soft = SoftPromptConfig(num_aspects=k, num_layers=num_layers, d_q=hidden, d_v=hidden, hidden=hidden,
                            pe_mode=pe_mode, num_heads=2, dropout=0.0, init_std=init_std)
    return MatchModel(backbone, tok, soft, serializer)
