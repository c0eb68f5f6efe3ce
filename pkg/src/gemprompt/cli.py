"""Command-line entry point: ``gemprompt <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import augment as aug
from . import cost as cost_mod
from . import selector
from .data import Dataset, load_dataset, load_magellan, read_entities, read_pairs, write_candidates, \
    write_entities, write_pairs
from .serialize import Serializer, load_registry, resolve_template, save_registry, serialize_ditto, \
    serialize_natural

log = logging.getLogger("gemprompt")

SUBCOMMANDS = ("ingest", "serialize", "paraphrase", "train", "eval", "augment", "gate", "estimate-cost")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)  # left/right/train/valid/test/candidates or magellan
    template: str = "basic"
    registry: str | None = None
    backbone: str = "roberta-base"  # or "tiny"
    local_files_only: bool = False
    max_length: int | None = None
    soft_prompt: dict = field(default_factory=lambda: {"num_aspects": 4, "num_layers": 0, "pe_mode": "POS"})
    train: dict = field(default_factory=dict)
    augment: dict = field(default_factory=dict)
    uncertainty: dict = field(default_factory=lambda: {"metric": "max_prob", "tau": None})
    cost: dict = field(default_factory=dict)
    output_dir: str = "runs/default"
    seed: int = 0

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict | None = None) -> "RunConfig":
        raw: dict[str, Any] = {}
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise UsageError(f"config file not found: {p}")
            raw = yaml.safe_load(p.read_text()) or {}
            base = p.parent
            # data paths are relative to the config file
            for k, v in list((raw.get("data") or {}).items()):
                if isinstance(v, str) and not Path(v).is_absolute():
                    raw["data"][k] = str(base / v)
            for k in ("stub", "cache", "records", "scores"):
                v = (raw.get("augment") or {}).get(k)
                if isinstance(v, str) and not Path(v).is_absolute():
                    raw["augment"][k] = str(base / v)
            if isinstance(raw.get("registry"), str) and not Path(raw["registry"]).is_absolute():
                raw["registry"] = str(base / raw["registry"])
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            section, _, name = key.partition(".")
            if name:
                getattr(cfg, section)[name] = value
            else:
                setattr(cfg, section, value)
        return cfg

    def check(self) -> None:
        a = self.augment
        if a.get("policy") == "gated" and a.get("threshold") is None:
            raise UsageError("gated augmentation needs a threshold (augment.threshold / --threshold)")
        for k, v in self.data.items():
            if isinstance(v, str) and k != "name" and not Path(v).exists():
                raise UsageError(f"data.{k} does not exist: {v}")


# ---------------------------------------------------------------------------
# helpers


def _serializer(cfg: RunConfig) -> Serializer:
    if cfg.template == "ditto":
        return Serializer("ditto")
    return Serializer("natural", resolve_template(cfg.template, load_registry(cfg.registry)))


def _splits(cfg: RunConfig) -> dict[str, Dataset]:
    d = cfg.data
    if "magellan" in d:
        return load_magellan(d["magellan"])
    if "left" not in d or "right" not in d:
        raise UsageError("config data needs either 'magellan' or 'left' and 'right'")
    base = load_dataset(d["left"], d["right"], candidates=d.get("candidates"))
    out = {}
    for split in ("train", "valid", "test"):
        if d.get(split):
            out[split] = base.with_pairs(read_pairs(d[split]))
    if not out:
        out["all"] = base
    return out


def _attach_records(splits: dict[str, Dataset], cfg: RunConfig) -> dict[str, Dataset]:
    path = cfg.augment.get("records")
    if not path:
        return splits
    records = aug.read_records(path)
    return {k: v.with_augmentations(records) for k, v in splits.items()}


def _build_model(cfg: RunConfig, splits: dict[str, Dataset]):
    from .backbone import build_tiny_backbone, load_backbone
    from .matcher import MATCH_WORDS, MISMATCH_WORDS, MatchModel, KEYWORD_PHRASE
    from .soft_prompt import SoftPromptConfig

    serializer = _serializer(cfg)
    if cfg.backbone == "tiny":
        texts = []
        for ds in splits.values():
            for e in ds.entities():
                rec = ds.augmentations.get(e.id)
                texts.append(serializer(e, dict(rec.values) if rec else None))
        words = list(MATCH_WORDS + MISMATCH_WORDS) + KEYWORD_PHRASE.split() + ["is", "to", "."]
        backbone, tokenizer = build_tiny_backbone(texts, words, seed=cfg.seed)
    else:
        backbone, tokenizer = load_backbone(cfg.backbone, cfg.local_files_only)
    hidden = backbone.get_input_embeddings().embedding_dim
    sp = dict(cfg.soft_prompt or {})
    soft = None
    if sp.get("num_aspects", 0) > 0:
        sp.setdefault("hidden", hidden)
        sp.setdefault("d_q", hidden)
        sp.setdefault("d_v", hidden)
        if cfg.backbone == "tiny":
            sp.setdefault("num_heads", 2)
        soft = SoftPromptConfig(**sp)
    return MatchModel(backbone, tokenizer, soft, serializer, cfg.max_length)


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    left, right = read_entities(args.left), read_entities(args.right)
    pairs = read_pairs(args.pairs) if args.pairs else []
    cands = {}
    if args.candidates:
        from .data import read_candidates
        cands = read_candidates(args.candidates)
    ds = Dataset(left, right, tuple(pairs), cands)  # validates references
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_entities(out / "left.jsonl", ds.left.values())
    write_entities(out / "right.jsonl", ds.right.values())
    if pairs:
        write_pairs(out / "pairs.tsv", ds.pairs)
    if cands:
        write_candidates(out / "candidates.jsonl", ds.candidates)
    summary = {
        "left": len(left), "right": len(right), "pairs": len(pairs),
        "positives": sum(1 for p in pairs if p.label == 1),
        "shapes": {s: sum(1 for e in ds.entities() if e.shape.value == s)
                   for s in ("structured", "semi_structured", "textual")},
        "mean_fanout": (sum(len(c) for c in cands.values()) / len(cands)) if cands else None,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return 0


def cmd_serialize(args) -> int:
    entities = read_entities(args.entity_file)
    if args.template == "ditto":
        render = serialize_ditto
    else:
        t = resolve_template(args.template, load_registry(args.registry))
        render = lambda e: serialize_natural(e, t)  # noqa: E731
    for e in entities.values():
        print(render(e))
    return 0


def cmd_paraphrase(args) -> int:
    from .paraphrase import paraphrase_template

    registry = load_registry(args.registry)
    t = resolve_template(args.template, registry)
    if t is None:
        raise UsageError("the basic rule has no template to paraphrase")
    corpus = list(read_entities(args.corpus).values())
    outcome = paraphrase_template(t, corpus, args.beam, pivot=args.pivot)
    if outcome.fallback:
        print(f"warning: {outcome.warning}; keeping the manual template", file=sys.stderr)
    print(outcome.template.pattern)
    if args.out:
        registry[outcome.template.name] = outcome.template
        save_registry(args.out, registry.values())
    return 0


def cmd_train(args) -> int:
    from .train import TrainConfig, evaluate, sample_low_resource, train
    from .matcher import write_predictions

    cfg = RunConfig.load(args.config, {"output_dir": args.output_dir, "seed": args.seed,
                                       "train.epochs": args.epochs})
    cfg.check()
    tcfg = TrainConfig(**{"seed": cfg.seed, **cfg.train})
    splits = _attach_records(_splits(cfg), cfg)
    train_full = splits.get("train") or splits.get("all")
    train_set = sample_low_resource(train_full, tcfg.low_resource_ratio, tcfg.seed)
    model = _build_model(cfg, splits)
    out = Path(cfg.output_dir)
    result = train(model, train_set, tcfg, splits.get("valid"), out,
                   on_epoch=lambda r: print(f"epoch {r.epoch} loss {r.loss:.5f} "
                                            f"P {r.precision:.4f} R {r.recall:.4f} F1 {r.f1:.4f}"))
    print(f"best epoch {result.best_epoch} F1 {result.best_f1:.4f}; checkpoint {result.checkpoint}")
    if "test" in splits:
        p, r, f1 = evaluate(model, splits["test"], tcfg.batch_size)
        preds = model.predict(model.instances(splits["test"]), tcfg.batch_size)
        write_predictions(out / "test_predictions.jsonl", preds)
        (out / "test_metrics.json").write_text(json.dumps({"precision": p, "recall": r, "f1": f1}))
        print(f"test P {p:.4f} R {r:.4f} F1 {f1:.4f}")
    return 0


def cmd_eval(args) -> int:
    from .matcher import load_checkpoint, write_predictions
    from .train import precision_recall_f1

    cfg = RunConfig.load(args.config, {"output_dir": args.output_dir})
    splits = _attach_records(_splits(cfg), cfg)
    if args.split not in splits:
        raise UsageError(f"split {args.split!r} not configured; have {sorted(splits)}")
    ds = splits[args.split]
    model = load_checkpoint(args.checkpoint)
    preds = model.predict(model.instances(ds))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(out / f"{args.split}_predictions.jsonl", preds)
    labeled = [(p.label, x.label) for p, x in zip(ds.pairs, preds) if p.label is not None]
    if labeled:
        prec, rec, f1 = precision_recall_f1([a for a, _ in labeled], [b for _, b in labeled])
        print(f"P {prec:.4f} R {rec:.4f} F1 {f1:.4f}")
    return 0


def cmd_augment(args) -> int:
    cfg = RunConfig.load(args.config, {"augment.mode": args.mode, "augment.policy": args.policy,
                                       "augment.threshold": args.threshold, "augment.scores": args.scores,
                                       "augment.stub": args.stub, "output_dir": args.output_dir})
    cfg.check()
    a = cfg.augment
    splits = _splits(cfg)
    ds = next(iter(splits.values()))
    mode = a.get("mode", "source")
    fixed = a.get("attributes")
    if mode == "source" and not fixed:
        raise UsageError("source-level augmentation needs augment.attributes")
    plan = aug.select_attributes(ds, mode, fixed)
    if a.get("stub"):
        client = aug.StubClient.from_file(a["stub"], model=a.get("model", "stub"))
    else:
        client = aug.OpenAIChatClient(model=a.get("model", "gpt-3.5-turbo"),
                                      min_interval=float(a.get("min_interval", 0.0)))
    policy = a.get("policy", "all")
    if policy == "gated":
        if not a.get("scores"):
            raise UsageError("gated policy needs a scores CSV (augment.scores / --scores)")
        import csv
        with open(a["scores"], newline="") as fh:
            scores = {r["entity_id"]: float(r["score"]) for r in csv.DictReader(fh)}
        policy = selector.gate(scores, float(a["threshold"]))
    elif policy != "all":
        raise UsageError(f"unknown policy {policy!r}")
    cache = aug.AugmentationCache(a.get("cache") or Path(cfg.output_dir) / "augment_cache.jsonl")
    _, report = aug.augment_dataset(ds, plan, client, policy, cache, int(a.get("concurrency", 4)))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    aug.write_records(out / "augmentations.jsonl", report.records.values())
    print(json.dumps({"entities": len(report.records), "selected": report.selected,
                      "client_calls": report.client_calls, "cache_hits": report.cache_hits,
                      "failures": report.failures, "coverage": report.coverage}))
    return 0


def cmd_gate(args) -> int:
    from .matcher import read_predictions

    cfg = RunConfig.load(args.config, {"uncertainty.metric": args.metric, "uncertainty.tau": args.tau,
                                       "output_dir": args.output_dir})
    u = cfg.uncertainty
    if u.get("tau") is None:
        raise UsageError("gate needs --tau")
    if not args.predictions:
        raise UsageError("gate needs --predictions")
    scores = selector.entity_scores(read_predictions(args.predictions), u.get("metric", "max_prob"))
    chosen = selector.gate(scores, float(u["tau"]))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    selector.write_scores(out / "scores.csv", scores, chosen)
    (out / "selected.txt").write_text("".join(f"{e}\n" for e in scores if e in chosen))
    print(f"selected {len(chosen)}/{len(scores)} entities "
          f"(augmented fraction {selector.augmented_fraction(scores, float(u['tau'])):.4f})")
    return 0


def cmd_estimate_cost(args) -> int:
    if args.params:
        text = Path(args.params).read_text()
        raw = yaml.safe_load(text) or {}
        raw = raw.get("cost", raw)
    else:
        raw = {}
    for k in ("N", "N_k", "O_k", "L", "B"):
        v = getattr(args, k.lower())
        if v is not None:
            raw[k] = v
    try:
        params = cost_mod.CostParams.from_mapping(raw)
    except TypeError as exc:
        raise UsageError(f"incomplete cost parameters: {exc}") from exc
    print(cost_mod.format_table(cost_mod.savings(params)))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gemprompt", description="Low-resource generalized entity matching")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalise entity/pair/candidate files")
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--pairs")
    p.add_argument("--candidates")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("serialize", help="print one serialized line per entity")
    p.add_argument("--entity-file", required=True)
    p.add_argument("--template", default="basic", help="basic, ditto or a registry template name")
    p.add_argument("--registry")
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("paraphrase", help="mine a paraphrased template by back-translation")
    p.add_argument("--template", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--beam", type=int, default=3)
    p.add_argument("--pivot", default="de")
    p.add_argument("--registry")
    p.add_argument("--out", help="write the updated registry here")
    p.set_defaults(func=cmd_paraphrase)

    p = sub.add_parser("train", help="prompt-tune a matcher")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split with a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment", help="query an LLM for extra attributes")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("source", "instance"))
    p.add_argument("--policy", choices=("all", "gated"))
    p.add_argument("--threshold", type=float)
    p.add_argument("--scores", help="scores CSV written by 'gate'")
    p.add_argument("--stub", help="canned responses (JSON lines) instead of a live endpoint")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("gate", help="uncertainty scores and the entities worth augmenting")
    p.add_argument("--config")
    p.add_argument("--predictions", help="prediction dump (JSON lines)")
    p.add_argument("--metric", choices=selector.METRICS)
    p.add_argument("--tau", type=float)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_gate)

    p = sub.add_parser("estimate-cost", help="augmentation vs direct inference token cost")
    p.add_argument("--params", help="YAML/JSON file with N, N_k, O_k, L, B and optional rates")
    for k in ("N", "N_k", "O_k", "L", "B"):
        p.add_argument(f"--{k.lower().replace('_', '-')}", dest=k.lower(), type=int)
    p.set_defaults(func=cmd_estimate_cost)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits 2
    except (FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
