"""Token budget: augment each entity once versus ask the LLM about every pair.

Run: python demos/05_cost.py
"""

from gemprompt.cost import CostParams, format_table, savings

p = CostParams(n_entities=1000, n_keys=5, n_augmented=5, tokens_per_pair=10, fanout=5)
c = savings(p)
print(format_table(c))
print("exact saving:", c.token_saving)

print("\nThe saving grows with the blocking fan-out B:")
for b in (2, 3, 5, 10, 20):
    c = savings(CostParams(1000, 5, 5, 10, b))
    print(f"  B={b:<3} augmentation/direct = {float(c.token_ratio):.2f}  d = {int(c.token_difference):,}")
