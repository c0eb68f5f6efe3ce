"""Uncertainty-gated choice of which entities get augmented."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

METRICS = ("neg_entropy", "max_prob")


def neg_entropy(p: float) -> float:
    """sum p log p over (p, 1-p), natural log, with 0 log 0 = 0."""
    return sum(q * math.log(q) for q in (p, 1.0 - p) if q > 0)


def max_prob(p: float) -> float:
    return max(p, 1.0 - p)


def confidence(p: float, metric: str) -> float:
    if metric == "neg_entropy":
        return neg_entropy(p)
    if metric == "max_prob":
        return max_prob(p)
    raise ValueError(f"unknown uncertainty metric {metric!r}; expected one of {METRICS}")


def uncertainty_score(candidate_predictions: Sequence[float], metric: str = "neg_entropy") -> float:
    """Highest confidence over an entity's candidate pairs (higher = more certain).

    ``candidate_predictions`` are the match probabilities of (e, e_i).
    """
    if len(candidate_predictions) == 0:
        raise ValueError("entity has no candidate predictions")
    return max(confidence(float(p), metric) for p in candidate_predictions)


def entity_scores(predictions: Iterable[Mapping], metric: str = "neg_entropy",
                  sides: Sequence[str] = ("left", "right")) -> dict[str, float]:
    """Scores for every entity appearing in a prediction dump.

    Each prediction row has ``left``, ``right`` and ``p_match``; a pair counts
    as a candidate of both of its entities.
    """
    probs: dict[str, list[float]] = defaultdict(list)
    for row in predictions:
        for side in sides:
            probs[row[side]].append(float(row["p_match"]))
    return {eid: uncertainty_score(ps, metric) for eid, ps in probs.items()}


def gate(scores: Mapping[str, float], tau: float) -> set[str]:
    """Entities whose score is strictly below ``tau``."""
    return {eid for eid, s in scores.items() if s < tau}


def augmented_fraction(scores: Mapping[str, float], tau: float) -> float:
    return len(gate(scores, tau)) / len(scores) if scores else 0.0


def write_scores(path: str | Path, scores: Mapping[str, float], selected: Iterable[str]) -> None:
    chosen = set(selected)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["entity_id", "score", "selected"])
        for eid, s in scores.items():
            w.writerow([eid, repr(s), int(eid in chosen)])


def read_selected(path: str | Path) -> set[str]:
    """Selected ids from a scores CSV, or from a plain one-id-per-line file."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if first.startswith("entity_id,"):
            fh.seek(0)
            return {r["entity_id"] for r in csv.DictReader(fh) if r["selected"] == "1"}
        return {line.strip() for line in [first, *fh] if line.strip()}
