import random

import pytest
import torch

from gemprompt.backbone import build_tiny_backbone
from gemprompt.data import Dataset, Entity, MatchPair, Shape
from gemprompt.matcher import KEYWORD_PHRASE, MATCH_WORDS, MISMATCH_WORDS, MatchModel
from gemprompt.serialize import Serializer
from gemprompt.soft_prompt import SoftPromptConfig

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}

BRANDS = ["seagate", "corsair", "apple", "sony", "canon", "nikon", "logitech", "dell"]
ITEMS = ["drive", "memory", "player", "camera", "lens", "mouse", "monitor", "keyboard"]


def make_products(n: int = 16, seed: int = 0) -> Dataset:
    """n left products, each with a right duplicate and a right distractor."""
    rng = random.Random(seed)
    left, right, pairs = {}, {}, []
    for i in range(n):
        brand, item = rng.choice(BRANDS), rng.choice(ITEMS)
        model = f"m{rng.randint(100, 999)}"
        price = str(rng.randint(10, 500))
        left[f"a{i}"] = Entity(f"a{i}", Shape.STRUCTURED,
                               attrs=(("title", f"{brand} {item} {model}"), ("brand", brand), ("price", price)))
        right[f"b{i}"] = Entity(f"b{i}", Shape.STRUCTURED,
                                attrs=(("title", f"{brand} {item} {model}"), ("brand", brand), ("price", price)))
        other_brand = rng.choice([b for b in BRANDS if b != brand])
        other_item = rng.choice([t for t in ITEMS if t != item])
        right[f"c{i}"] = Entity(f"c{i}", Shape.STRUCTURED,
                                attrs=(("title", f"{other_brand} {other_item} m{rng.randint(100, 999)}"),
                                       ("brand", other_brand), ("price", str(rng.randint(10, 500)))))
        pairs += [MatchPair(f"a{i}", f"b{i}", 1), MatchPair(f"a{i}", f"c{i}", 0)]
    cands = {f"a{i}": (f"b{i}", f"c{i}") for i in range(n)}
    return Dataset(left, right, tuple(pairs), cands)


def tiny_model(dataset: Dataset, k: int = 2, n_layers: int = 0, pe_mode: str = "POS", hidden: int = 32,
               seed: int = 0, dropout: float = 0.0, serializer: Serializer | None = None) -> MatchModel:
    serializer = serializer or Serializer()
    texts = [serializer(e) for e in dataset.entities()]
    words = list(MATCH_WORDS + MISMATCH_WORDS) + KEYWORD_PHRASE.split() + ["is", "to", "."]
    backbone, tok = build_tiny_backbone(texts, words, hidden=hidden, dropout=dropout, seed=seed)
    soft = None
    if k:
        soft = SoftPromptConfig(num_aspects=k, num_layers=n_layers, d_q=hidden, d_v=hidden, hidden=hidden,
                                pe_mode=pe_mode, num_heads=2, dropout=dropout)
    torch.manual_seed(seed)
    return MatchModel(backbone, tok, soft, serializer)


@pytest.fixture
def products():
    return make_products()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[0])):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
