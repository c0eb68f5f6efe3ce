"""What the contextualized soft tokens look at.

K learnable aspect queries attend over an entity's token embeddings; each
query yields one soft token spliced into the prompt after "the keyword is".

With the default small initialisation every query starts almost orthogonal
to every key, so attention is uniform and all K soft tokens coincide.  The
orthogonal penalty is what is supposed to pull them apart, but from that
symmetric start it mostly shrinks the LayerNorm gain instead.  A wider
initialisation (``init_std``) breaks the symmetry and lets the aspects
specialise.  This script shows both.

Run: python demos/02_soft_tokens.py
"""

import torch

from gemprompt.train import TrainConfig, train
from _toy import toy_splits, tiny_matcher

data, _ = toy_splits()
inst = None


def report(model, title):
    rec = model.attention_maps(data, ["a0"])[0]
    print(title)
    for k, row in enumerate(rec["weights"]):
        top = row.topk(3)
        words = ", ".join(f"{rec['tokens'][i]}={w:.2f}" for w, i in zip(top.values.tolist(), top.indices.tolist()))
        print(f"  aspect {k}: {words}")
    soft = model(model.collate([inst]))["soft"][0, 0]
    cos = torch.nn.functional.cosine_similarity(soft[:, None], soft[None], dim=-1)
    off = cos[~torch.eye(len(cos), dtype=torch.bool)]
    print(f"  mean cosine between soft tokens: {off.mean().item():.3f}")


for init_std in (0.02, 1.0):
    model = tiny_matcher(data, k=3, num_layers=1, init_std=init_std)
    inst = model.build(data.left["a0"], data.right["b0"])
    print(f"\n=== aspect init std {init_std} (uniform attention would be {1 / len(inst.left_ids):.2f})")
    report(model, "before training:")
    train(model, data, TrainConfig(epochs=20, learning_rate=1e-3), valid_set=data)
    report(model, "after 20 epochs:")

print("\nPrompt seen by the masked LM:\n  ", inst.text)
