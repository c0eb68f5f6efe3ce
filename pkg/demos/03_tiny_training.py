"""A complete training run on the toy data, offline.

The backbone here is a two-layer RoBERTa with random weights and a
word-level vocabulary.  It can memorise the pairs it is trained on but has
no pretrained knowledge to generalise from, so expect a low test F1.  Swap
in ``load_backbone("roberta-base")`` for real accuracy; nothing else changes.

Run: python demos/03_tiny_training.py
"""

import tempfile
from pathlib import Path

from gemprompt.matcher import load_checkpoint
from gemprompt.train import TrainConfig, evaluate, sample_low_resource, train
from _toy import toy_splits, tiny_matcher

train_full, test = toy_splits()
low = sample_low_resource(train_full, 0.1, seed=0)
print(f"the low-resource setting would keep {len(low.pairs)} of {len(train_full.pairs)} labelled pairs;")
print("with a random backbone we train on all of them to get a visible learning curve\n")

cfg = TrainConfig(epochs=30, learning_rate=1e-3)
model = tiny_matcher(train_full, k=2)
with tempfile.TemporaryDirectory() as out:
    # early epochs are spent shrinking the orthogonal penalty, then cross-entropy takes over
    result = train(model, train_full, cfg, valid_set=train_full, output_dir=out,
                   on_epoch=lambda r: r.epoch % 5 == 0 and print(f"  epoch {r.epoch:2d} loss {r.loss:.4f} F1 {r.f1:.3f}"))
    print(f"best epoch {result.best_epoch} (F1 {result.best_f1:.3f}) saved to best.pt")
    print("metrics.csv header:", (Path(out) / "metrics.csv").read_text().splitlines()[0])
    restored = load_checkpoint(Path(out) / "best.pt")

print("seen pairs  P/R/F1:", tuple(round(x, 3) for x in evaluate(restored, train_full)))
print("unseen test P/R/F1:", tuple(round(x, 3) for x in evaluate(restored, test)))

pred = restored.predict(restored.instances(test))[0]
print(f"\nfirst test pair {pred.left}/{pred.right}: p_match={pred.p_match:.3f}")
print("label-word probabilities at [MASK]:", {w: f"{p:.2e}" for w, p in pred.word_scores.items()})
