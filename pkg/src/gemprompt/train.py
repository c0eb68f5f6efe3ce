"""Prompt+LM tuning: sampling, loss, optimisation loop and evaluation."""

from __future__ import annotations

import copy
import csv
import itertools
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import torch
import torch.nn.functional as F

from .data import Dataset
from .matcher import MatchModel, PromptInstance, save_checkpoint
from .soft_prompt import ASPECT_GRID, LAYER_GRID, PE_MODES

log = logging.getLogger(__name__)

# default hyper-parameter preset for the soft-token module
DEFAULT_PRESET = {"num_layers": 0, "num_aspects": 4}


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 2e-5
    batch_size: int = 24
    ortho_weight: float = 1.0  # lambda
    low_resource_ratio: float = 0.10
    seed: int = 0
    weight_decay: float = 0.01
    valid_fraction: float = 0.10

    def __post_init__(self):
        if not 0 < self.low_resource_ratio <= 1:
            raise ValueError("low_resource_ratio must be in (0, 1]")
        if self.ortho_weight < 0:
            raise ValueError("ortho_weight must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def seed_everything(seed: int) -> None:
    random.seed(seed)
    torch.manual_seed(seed)


def sample_low_resource(d: Dataset, ratio: float, seed: int = 0) -> Dataset:
    """``floor(ratio * |pairs|)`` labeled pairs, uniformly without replacement.

    The sample keeps the original pair order; entity collections are shared.
    """
    labeled = [p for p in d.pairs if p.label is not None]
    if not labeled:
        raise ValueError("dataset has no labeled pairs")
    n = int(math.floor(ratio * len(labeled)))
    if n == 0:
        raise ValueError(f"ratio {ratio} of {len(labeled)} labeled pairs leaves an empty training set")
    idx = sorted(random.Random(seed).sample(range(len(labeled)), n))
    return d.with_pairs(labeled[i] for i in idx)


def orthogonal_loss(emb: torch.Tensor) -> torch.Tensor:
    """Mean over leading dims of ``||E E^T - I||_F / d_s`` for E of shape (..., K, d_s)."""
    k, d_s = emb.shape[-2:]
    gram = emb @ emb.transpose(-1, -2)
    eye = torch.eye(k, dtype=emb.dtype, device=emb.device)
    return torch.linalg.matrix_norm(gram - eye, ord="fro").mean() / d_s


def compute_loss(p_match: torch.Tensor, labels: torch.Tensor, soft: torch.Tensor | None,
                 ortho_weight: float = 1.0) -> tuple[torch.Tensor, dict[str, float]]:
    """Binary cross-entropy on p_match plus ``ortho_weight`` times the orthogonal penalty.

    ``soft`` holds the post-processed soft embeddings, (..., K, d_s); the
    penalty is averaged over every entity it contains.
    """
    eps = 1e-7
    if not torch.isfinite(p_match).all():
        raise FloatingPointError(f"non-finite match probabilities: {p_match.detach().tolist()[:8]}")
    ce =F.binary_cross_entropy(p_match.clamp(eps, 1 - eps), labels.to(p_match.dtype))
    ortho = orthogonal_loss(soft) if soft is not None and ortho_weight > 0 else p_match.new_zeros(())
    loss = ce + ortho_weight * ortho
    if not torch.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss (ce={ce.item()}, ortho={ortho.item()}, "
            f"p_match range=[{p_match.min().item()}, {p_match.max().item()}])")
    return loss, {"ce": ce.item(), "ortho": ortho.item()}


def precision_recall_f1(y_true: Sequence[int], y_pred: Sequence[int]) -> tuple[float, float, float]:
    """Scores for the positive (match) class; zero where undefined."""
    tp = sum(1 for t, p in zip(y_true, y_pred) if t == 1 and p == 1)
    fp = sum(1 for t, p in zip(y_true, y_pred) if t != 1 and p == 1)
    fn = sum(1 for t, p in zip(y_true, y_pred) if t == 1 and p != 1)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def evaluate(model: MatchModel, d: Dataset, batch_size: int = 32) -> tuple[float, float, float]:
    pairs = [p for p in d.pairs if p.label is not None]
    preds = model.predict(model.instances(d, pairs), batch_size)
    return precision_recall_f1([p.label for p in pairs], [x.label for x in preds])


@dataclass
class EpochLog:
    epoch: int
    loss: float
    precision: float
    recall: float
    f1: float


@dataclass
class TrainResult:
    history: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    best_f1: float = -1.0
    checkpoint: Path | None = None


def _batches(instances: list[PromptInstance], labels: list[int], batch_size: int, generator: torch.Generator):
    order = torch.randperm(len(instances), generator=generator).tolist()
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        yield [instances[j] for j in idx], torch.tensor([labels[j] for j in idx], dtype=torch.float32)


def train(model: MatchModel, train_set: Dataset, cfg: TrainConfig, valid_set: Dataset | None = None,
          output_dir: str | Path | None = None,
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Tune backbone and soft-token parameters together with AdamW.

    ``train_set`` is used as given (sample it first for low-resource runs).
    Without ``valid_set`` a ``cfg.valid_fraction`` share of the training pairs
    is held out.  Every epoch logs (epoch, loss, P, R, F1); the best-F1 weights
    are restored into ``model`` at the end and, with ``output_dir``, written
    to ``best.pt`` next to ``metrics.csv``.
    """
    seed_everything(cfg.seed)
    if valid_set is None:
        rest, held = train_set.split(cfg.valid_fraction, cfg.seed)
        if held.pairs:
            train_set, valid_set = rest, held
        else:
            valid_set = train_set
    pairs = [p for p in train_set.pairs if p.label is not None]
    if not pairs:
        raise ValueError("no labeled training pairs")
    instances = model.instances(train_set, pairs)
    labels = [p.label for p in pairs]

    out_dir = Path(output_dir) if output_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / "metrics.csv", "w", newline="")
        writer = csv.writer(metrics_fh)
        writer.writerow(["epoch", "loss", "precision", "recall", "f1"])
    else:
        metrics_fh = writer = None

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    generator = torch.Generator().manual_seed(cfg.seed)
    result = TrainResult()
    best_state = None
    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            losses = []
            for batch, y in _batches(instances, labels, cfg.batch_size, generator):
                try:
                    out = model(model.collate(batch))
                    loss, _ = compute_loss(out["p_match"], y.to(out["p_match"].device), out["soft"],
                                           cfg.ortho_weight)
                    optimizer.zero_grad()
                    loss.backward()
                    optimizer.step()
                except torch.OutOfMemoryError as exc:
                    raise MemoryError(
                        f"out of memory at batch_size={cfg.batch_size}; reduce batch_size or max_length") from exc
                losses.append(loss.item())
            p, r, f1 = evaluate(model, valid_set, cfg.batch_size)
            row = EpochLog(epoch, sum(losses) / len(losses), p, r, f1)
            result.history.append(row)
            log.info("epoch %d loss %.5f P %.4f R %.4f F1 %.4f", epoch, row.loss, p, r, f1)
            if writer is not None:
                writer.writerow([epoch, f"{row.loss:.6f}", f"{p:.6f}", f"{r:.6f}", f"{f1:.6f}"])
                metrics_fh.flush()
            if on_epoch is not None:
                on_epoch(row)
            if f1 > result.best_f1:
                result.best_f1, result.best_epoch = f1, epoch
                best_state = copy.deepcopy(model.state_dict())
                if out_dir is not None:
                    result.checkpoint = out_dir / "best.pt"
                    save_checkpoint(result.checkpoint, model, {"epoch": epoch, "f1": f1})
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    if best_state is not None:
        model.load_state_dict(best_state)
    return result


def hyperparameter_grid(aspects: Iterable[int] = ASPECT_GRID, layers: Iterable[int] = LAYER_GRID,
                        pe_modes: Iterable[str] = PE_MODES) -> list[dict]:
    """Soft-token settings enumerated when searching for the best run."""
    return [{"num_aspects": k, "num_layers": n, "pe_mode": pe}
            for k, n, pe in itertools.product(aspects, layers, pe_modes)]


def grid_search(make_model: Callable[[dict], MatchModel], train_set: Dataset, valid_set: Dataset,
                cfg: TrainConfig, grid: Iterable[dict] | None = None) -> tuple[dict, TrainResult]:
    """Train one model per grid point; return the setting with the best validation F1."""
    best = None
    for setting in (grid if grid is not None else hyperparameter_grid()):
        result = train(make_model(setting), train_set, cfg, valid_set)
        log.info("grid %s -> F1 %.4f", setting, result.best_f1)
        if best is None or result.best_f1 > best[1].best_f1:
            best = (setting, result)
    if best is None:
        raise ValueError("empty hyper-parameter grid")
    return best
