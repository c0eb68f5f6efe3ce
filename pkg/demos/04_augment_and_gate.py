"""LLM augmentation with a canned client, then uncertainty gating.

Training data gets every entity augmented.  At inference only entities the
matcher is unsure about are sent to the LLM; the rest receive all-pad
records so every prompt keeps the same shape.

The gating step uses the ``max_prob`` confidence of each entity's best
candidate pair: entities below the threshold are the ones worth paying for.

Run: python demos/04_augment_and_gate.py
"""

import logging

from gemprompt.augment import AugmentationCache, StubClient, augment_dataset, build_llm_request, select_attributes
from gemprompt.selector import augmented_fraction, entity_scores, gate
from gemprompt.serialize import Serializer
from _toy import DATA, toy_splits

# blocking candidates only run left -> right, so right-side entities are skipped with a warning
logging.getLogger("gemprompt.augment").setLevel(logging.ERROR)

data, test = toy_splits()
plan = select_attributes(data, "instance")
print("instance-level attributes for a0:", plan.attributes_for("a0"))
for m in build_llm_request(data.entity("a0"), plan.attributes_for("a0")):
    print(f"  [{m['role']}] {m['content']}")

client = StubClient.from_file(DATA / "llm_stub.jsonl")
cache = AugmentationCache()
augmented, report = augment_dataset(data, plan, client, cache=cache)
print(f"\ntraining policy: {report.client_calls} calls, coverage {report.coverage:.2f}")
rec = augmented.augmentations["a0"]
print("raw reply:", rec.raw_response)
print("record:   ", rec.values, "(missing and 'N/A' values become <pad>)")
print("prompt text:", Serializer().render(data.entity("a0"), rec.values)[0])

_, again = augment_dataset(data, plan, client, cache=cache)
print(f"second pass: {again.client_calls} calls, cache hit rate {again.cache_hit_rate:.0%}")

# A prediction dump in the format written by `gemprompt eval` (JSON lines).  The values are
# made up: a random tiny backbone is not calibrated enough to make this step interesting.
rows = [
    {"left": "a30", "right": "b30", "p_match": 0.97}, {"left": "a30", "right": "c30", "p_match": 0.04},
    {"left": "a31", "right": "b31", "p_match": 0.55}, {"left": "a31", "right": "c31", "p_match": 0.48},
    {"left": "a32", "right": "b32", "p_match": 0.81}, {"left": "a32", "right": "c32", "p_match": 0.35},
    {"left": "a33", "right": "b33", "p_match": 0.62}, {"left": "a33", "right": "c33", "p_match": 0.12},
]
scores = entity_scores(rows, "max_prob")
left_scores = {e: s for e, s in scores.items() if e.startswith("a")}
print("\nconfidence of each left entity (best candidate):", {e: round(s, 2) for e, s in left_scores.items()})
for tau in (0.5, 0.7, 0.85, 0.9, float("inf")):
    print(f"tau={tau:<4} augment {sorted(gate(left_scores, tau))} ({augmented_fraction(left_scores, tau):.0%})")
selected = gate(left_scores, 0.85)
_, gated = augment_dataset(test, plan, client, policy=selected)
print(f"gated run at tau=0.85: {gated.client_calls} LLM calls, "
      f"{sum(r.source == 'padded' for r in gated.records.values())} all-pad records")
