"""Token and price estimates: LLM augmentation versus direct LLM inference.

All quantities are exact ``Fraction`` values so identities between the
estimates hold without rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

# USD per 1k tokens (GPT-3.5-turbo, October 2023)
BASE_RATE = "0.002"
FINETUNED_RATE = "0.016"


def _exact(x) -> Fraction:
    if isinstance(x, (Rational, Fraction)):
        return Fraction(x)
    # decimal text keeps 0.002 exact; floats go through their repr
    return Fraction(str(x))


@dataclass(frozen=True)
class CostParams:
    n_entities: int | Fraction  # N, entities per source
    n_keys: int | Fraction  # N_k, key/value pairs per entity
    n_augmented: int | Fraction  # O_k, augmented attributes per entity
    tokens_per_pair: int | Fraction  # L
    fanout: int | Fraction  # B, blocking candidates per entity
    base_rate: str | Fraction = BASE_RATE
    finetuned_rate: str | Fraction = FINETUNED_RATE

    def __post_init__(self):
        for name in ("n_entities", "n_keys", "n_augmented", "tokens_per_pair", "fanout", "base_rate",
                     "finetuned_rate"):
            if _exact(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_mapping(cls, m) -> "CostParams":
        aliases = {"N": "n_entities", "N_k": "n_keys", "O_k": "n_augmented", "L": "tokens_per_pair",
                   "B": "fanout"}
        kwargs = {aliases.get(k, k): v for k, v in m.items()}
        return cls(**kwargs)


def estimate_augmentation_tokens(p: CostParams) -> Fraction:
    """Input ``2N(N_k L)`` plus output ``2N(O_k L)``."""
    n, nk, ok, l = map(_exact, (p.n_entities, p.n_keys, p.n_augmented, p.tokens_per_pair))
    return 2 * n * (nk + ok) * l


def estimate_direct_tokens(p: CostParams) -> Fraction:
    """Every candidate pair sent once: ``N B (2 N_k L)``."""
    n, b, nk, l = map(_exact, (p.n_entities, p.fanout, p.n_keys, p.tokens_per_pair))
    return n * b * 2 * nk * l


@dataclass(frozen=True)
class CostComparison:
    token_difference: Fraction  # d = direct - augmentation
    direct_tokens: Fraction
    augmentation_tokens: Fraction
    direct_cost: Fraction  # at the fine-tuned-model rate
    augmentation_cost: Fraction  # at the base-model rate

    @property
    def token_ratio(self) -> Fraction:
        """Augmentation tokens as a share of direct-inference tokens."""
        return self.augmentation_tokens / self.direct_tokens

    @property
    def token_saving(self) -> Fraction:
        return 1 - self.token_ratio

    def rows(self) -> list[tuple[str, Fraction, Fraction]]:
        return [("augmentation", self.augmentation_tokens, self.augmentation_cost),
                ("direct", self.direct_tokens, self.direct_cost)]


def token_difference(p: CostParams) -> Fraction:
    """``d = 2 N L (B N_k - N_k - O_k)``."""
    n, l, b, nk, ok = map(_exact, (p.n_entities, p.tokens_per_pair, p.fanout, p.n_keys, p.n_augmented))
    return 2 * n * l * (b * nk - nk - ok)


def savings(p: CostParams) -> CostComparison:
    aug = estimate_augmentation_tokens(p)
    direct = estimate_direct_tokens(p)
    return CostComparison(
        token_difference=token_difference(p),
        direct_tokens=direct,
        augmentation_tokens=aug,
        direct_cost=direct * _exact(p.finetuned_rate) / 1000,
        augmentation_cost=aug * _exact(p.base_rate) / 1000,
    )


def format_table(c: CostComparison) -> str:
    lines = [f"{'strategy':<14}{'tokens':>16}{'cost (USD)':>16}"]
    for name, tokens, cost in c.rows():
        lines.append(f"{name:<14}{float(tokens):>16,.0f}{float(cost):>16.4f}")
    lines.append(f"token difference d = {float(c.token_difference):,.0f}")
    if c.direct_tokens:
        lines.append(f"augmentation uses {float(c.token_ratio):.1%} of direct tokens "
                     f"(saves {float(c.token_saving):.1%})")
    return "\n".join(lines)
