"""Acceptance criteria; each test records a PASS/FAIL line shown in the terminal summary."""

import math
import os
import random
import time
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

import pytest
import torch

from conftest import ACCEPTANCE_RESULTS, make_products, tiny_model
from gemprompt.augment import AugmentationCache, StubClient, augment_dataset, select_attributes
from gemprompt.cost import CostParams, savings
from gemprompt.data import MatchPair
from gemprompt.matcher import MATCH_WORDS, MISMATCH_WORDS, verbalize
from gemprompt.selector import gate, uncertainty_score
from gemprompt.serialize import PAD, builtin_templates, fill
from gemprompt.soft_prompt import aspect_attention
from gemprompt.train import TrainConfig, orthogonal_loss, train


@contextmanager
def criterion(name, budget_s=None):
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        ACCEPTANCE_RESULTS[name] = (False, f"{type(exc).__name__}: {exc}".splitlines()[0][:160])
        raise
    elapsed = time.perf_counter() - start
    if budget_s is not None and elapsed >= budget_s:
        ACCEPTANCE_RESULTS[name] = (False, f"took {elapsed:.2f}s, budget {budget_s}s")
        pytest.fail(f"{name}: runtime {elapsed:.2f}s over budget {budget_s}s")
    ACCEPTANCE_RESULTS[name] = (True, f"{elapsed:.2f}s")


# values and expected sentences written out by hand from the template table
GOLDENS = {
    "academic": (
        {"title": "Deep ER", "author": "Ann Lee", "venue": "VLDB", "year": "2021"},
        "The Deep ER is authored by Ann Lee and is published in VLDB in the year 2021.",
    ),
    "academic_paraphrased": (
        {"title": "Deep ER", "author": "Ann Lee", "venue": "VLDB", "year": "2021"},
        "The paper entitled Deep ER is written by Ann Lee and is published in VLDB in 2021.",
    ),
    "movie": (
        {"title": "Heat", "director": "Mann", "actors": "Pacino", "year": "1995", "ratings": "8.3",
         "information": "crime"},
        "The Heat is directed by Mann, including Pacino. It was released in 1995 and has received ratings of 8.3. "
        "It includes crime.",
    ),
    "semi_text": (
        {"category": "memory", "brand": "Corsair", "price": "$40", "identifiers": "CMX8", "keyvaluepairs": "ddr3"},
        "This memory product is from Corsair priced at $40. It is identified by CMX8 and has key value pairs of ddr3.",
    ),
    "geo": (
        {"name": "Cafe Uno", "address": "1 Main St", "latitude": "40.1", "longitude": "-73.9", "position": "NE",
         "postalcode": "10001"},
        "The Cafe Uno is located at 1 Main St, with latitude 40.1 and longitude -73.9. The position is NE, "
        "and the postal code is 10001",
    ),
    "wdc": (
        {"title": "SSD 1TB", "brand": "Samsung", "price": "99", "pricecurrency": "USD", "description": "fast"},
        "The SSD 1TB from Samsung. It is priced at 99 USD. It includes fast.",
    ),
    "google_amazon": (
        {"title": "ipod nano", "manufacturer": "apple", "price": "$149"},
        "The ipod nano is a product manufactured by apple and is priced at $149.",
    ),
    "google_amazon_paraphrased": (
        {"title": "ipod nano", "manufacturer": "apple", "price": "$149"},
        "The ipod nano is a product produced by apple and valued at $149.",
    ),
    "restaurant_left": (
        {"title": "Arnie", "category": "deli", "address": "5 Elm", "phone": "555-1234"},
        "The Arnie is a deli restaurant located at 5 Elm. The phone number is 555-1234.",
    ),
    "restaurant_right": (
        {"type": "thai", "class": "menu", "city": "Boston", "addr": "9 Oak", "phone": "555-0000"},
        "This thai restaurant offers a diverse menu different types of dishes, located in Boston at 9 Oak. "
        "The phone number is 555-0000.",
    ),
    "itunes_amazon": (
        {"song_name": "Hello", "artist_name": "Adele", "album_name": "25", "genre": "Pop", "price": "$1.29",
         "copyright": "XL", "time": "4:55", "released": "2015"},
        "The Hello is performed by Adele and is featured on the album 25. It falls under the genre of Pop with a "
        "price of $1.29. The song is protected by XL and has a duration of 4:55. It was released on 2015.",
    ),
    "walmart_amazon": (
        {"title": "HD TV", "category": "tv", "brand": "LG", "modelno": "42LB", "price": "$300"},
        "The HD TV is a tv from LG with model number 42LB, priced at $300.",
    ),
}


def test_1_template_goldens():
    with criterion("1 template goldens", 1.0):
        reg = builtin_templates()
        for name, (values, expected) in GOLDENS.items():
            assert fill(reg[name], values) == expected, name
        # every manual row of the table is covered
        manual = {n for n, t in reg.items() if t.origin == "manual"}
        assert manual <= set(GOLDENS)


def test_2_cost_model():
    with criterion("2 cost model", 1.0):
        for nk in (1, 5, 12):
            c = savings(CostParams(n_entities=100, n_keys=nk, n_augmented=nk, tokens_per_pair=10, fanout=5))
            assert c.token_saving == Fraction(3, 5)
        rng = random.Random(0)
        for _ in range(1000):
            p = CostParams(rng.randint(1, 10**6), rng.randint(0, 50), rng.randint(0, 50), rng.randint(1, 500),
                           rng.randint(1, 100))
            c = savings(p)
            assert c.token_difference == c.direct_tokens - c.augmentation_tokens


def test_3_orthogonal_loss():
    with criterion("3 orthogonal loss", 5.0):
        q, _ = torch.linalg.qr(torch.randn(8, 8, dtype=torch.float64))
        assert abs(orthogonal_loss(q[:4]).item()) < 1e-8
        e = torch.tensor([[0.0, 1, 0, 0], [0.0, 1, 0, 0]], dtype=torch.float64)
        assert abs(orthogonal_loss(e).item() - math.sqrt(2) / 4) < 1e-8
        x = torch.randn(2, 3, dtype=torch.float64, requires_grad=True)
        orthogonal_loss(x).backward()
        eps, numeric = 1e-6, torch.zeros(2, 3, dtype=torch.float64)
        with torch.no_grad():
            for i in range(2):
                for j in range(3):
                    up, down = x.clone(), x.clone()
                    up[i, j] += eps
                    down[i, j] -= eps
                    numeric[i, j] = (orthogonal_loss(up) - orthogonal_loss(down)) / (2 * eps)
        assert ((x.grad - numeric).norm() / numeric.norm()).item() < 1e-4


def test_4_aspect_attention():
    with criterion("4 aspect attention", 5.0):
        g = torch.Generator().manual_seed(0)
        for _ in range(100):
            k, l, d = (int(v) for v in torch.randint(1, 12, (3,), generator=g))
            _, w = aspect_attention(torch.randn(k, d, generator=g) * 5, torch.randn(l, d, generator=g) * 5,
                                    torch.randn(l, 4, generator=g))
            assert torch.allclose(w.sum(-1), torch.ones(k), atol=1e-6)
        out, w = aspect_attention(torch.tensor([[math.log(2)]]), torch.tensor([[1.0], [0.0]]),
                                  torch.tensor([[3.0], [0.0]]))
        assert torch.allclose(w, torch.tensor([[2 / 3, 1 / 3]]), atol=1e-6)
        assert abs(out.item() - 2.0) < 1e-6
        v = torch.randn(5, 3, dtype=torch.float64)
        out, _ = aspect_attention(torch.zeros(2, 4, dtype=torch.float64), torch.randn(5, 4, dtype=torch.float64), v)
        assert torch.allclose(out, v.mean(0).expand(2, 3), atol=1e-12)


def test_5_verbalizer():
    with criterion("5 verbalizer"):
        words = MATCH_WORDS + MISMATCH_WORDS
        assert verbalize(dict.fromkeys(words, 0.07)) == 0.5
        rng = random.Random(0)
        for _ in range(100):
            s = {w: rng.uniform(1e-6, 1) for w in words}
            c = rng.uniform(1e-3, 1e3)
            p = verbalize(s)
            assert abs(verbalize({w: c * v for w, v in s.items()}) - p) < 1e-9
            assert abs(verbalize(s, MISMATCH_WORDS, MATCH_WORDS) - (1 - p)) < 1e-12


def test_6_uncertainty_gating():
    with criterion("6 uncertainty gating"):
        rng = random.Random(0)
        scores = {f"e{i}": uncertainty_score([rng.random() for _ in range(3)], "max_prob") for i in range(50)}
        assert gate(scores, -math.inf) == set()
        assert gate(scores, math.inf) == set(scores)
        previous = set()
        for tau in [0.5 + i / 100 for i in range(51)]:
            chosen = gate(scores, tau)
            assert previous <= chosen
            previous = chosen
        assert abs(uncertainty_score([0.5], "neg_entropy") + math.log(2)) < 1e-9
        assert uncertainty_score([0.9, 0.6], "max_prob") == 0.9


def test_7_augmenter_offline(tmp_path):
    with criterion("7 augmenter offline"):
        d = make_products(10)
        attrs = ("color", "speed")
        plan = select_attributes(d, "source", attrs)
        responses = {eid: '{"color": "black", "speed": "fast", "extra": "x"}' for eid in d.left}
        responses["b0"] = "I am not able to answer that."
        client = StubClient(responses, default='{"color": "n/a"}')
        path = tmp_path / "cache.jsonl"
        out, report = augment_dataset(d, plan, client, cache=AugmentationCache(path))
        for eid in plan.entity_ids(d):
            assert tuple(out.augmentations[eid].values) == attrs
        assert report.records["b0"].values == {"color": PAD, "speed": PAD}
        assert report.records["b0"].source == "padded"
        calls = client.calls
        _, again = augment_dataset(d, plan, client, cache=AugmentationCache(path))
        assert client.calls == calls and again.client_calls == 0
        assert again.cache_hit_rate == 1.0


BACKBONE_ENV = "GEMPROMPT_BACKBONE"
ITUNES_ENV = "GEMPROMPT_ITUNES_DIR"


def test_8_itunes_amazon_end_to_end(tmp_path):
    name = "8 ITUNES-AMAZON F1 >= 0.90"
    backbone_path, data_dir = os.environ.get(BACKBONE_ENV), os.environ.get(ITUNES_ENV)
    if not backbone_path or not data_dir or not Path(data_dir, "tableA.csv").exists():
        reason = (f"needs a local roberta-base checkpoint (${BACKBONE_ENV}) and the Magellan ITUNES-AMAZON "
                  f"directory (${ITUNES_ENV}); neither can be downloaded in this environment")
        ACCEPTANCE_RESULTS[name] = (False, reason)
        pytest.fail(reason)
    with criterion(name):
        from gemprompt.backbone import load_backbone
        from gemprompt.data import load_magellan
        from gemprompt.matcher import MatchModel
        from gemprompt.serialize import Serializer
        from gemprompt.soft_prompt import SoftPromptConfig
        from gemprompt.train import DEFAULT_PRESET, evaluate, sample_low_resource

        splits = load_magellan(data_dir)
        cfg = TrainConfig()
        train_set = sample_low_resource(splits["train"], cfg.low_resource_ratio, cfg.seed)
        assert len(train_set.pairs) == 32
        backbone, tok = load_backbone(backbone_path, local_files_only=True)
        hidden = backbone.config.hidden_size
        soft = SoftPromptConfig(**DEFAULT_PRESET, d_q=hidden, d_v=hidden, hidden=hidden)
        model = MatchModel(backbone, tok, soft, Serializer("natural", builtin_templates()["itunes_amazon"]))
        if torch.cuda.is_available():
            model.cuda()
        train(model, train_set, cfg, splits.get("valid"), tmp_path)
        _, _, f1 = evaluate(model, splits["test"])
        ACCEPTANCE_RESULTS[name] = (f1 >= 0.90, f"test F1 {f1:.4f}")
        assert f1 >= 0.90


def test_9_overfit_sanity():
    with criterion("9 overfit sanity"):
        d = make_products(4)
        one = d.with_pairs([MatchPair("a0", "b0", 1)] * 8)
        model = tiny_model(d, k=2)
        result = train(model, one, TrainConfig(epochs=5), valid_set=one)
        losses = [h.loss for h in result.history]
        assert all(b < a for a, b in zip(losses, losses[1:])), losses
