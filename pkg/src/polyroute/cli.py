"""Command line entry point: ``polyroute <command> ...``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from polyroute.errors import IncompleteScores, PolyrouteError
from polyroute.harness.config import RunConfig, build
from polyroute.harness.dataset import (
    DEFAULT_FRACTIONS,
    DatasetRecord,
    file_sha256,
    load_dataset,
    read_records,
    split,
    to_tasks,
    write_records,
)
from polyroute.harness.grid import build_indexes, read_rows, read_scores, run_grid, write_scores
from polyroute.harness.report import GROUP_KEYS, report
from polyroute.selector.train import Backbone, TrainState, evaluate, train_offline, train_online

log = logging.getLogger("polyroute")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _load_cfg(args) -> RunConfig:
    return RunConfig.load(getattr(args, "config", None))


def _labelled(records_path, scores_path):
    """Pair records with their score tensors; every record needs one."""
    records = read_records(records_path)
    scores = read_scores(scores_path)
    missing = [r.id for r in records if r.id not in scores]
    if missing:
        raise IncompleteScores(f"{len(missing)} records have no scores (first: {missing[0]})")
    return records, scores


def _dataset(records, scores, cfg: RunConfig):
    tasks = to_tasks(records, gold_context=True)
    return [(t, scores[t.id]) for t in tasks]


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    records = load_dataset(args.input, args.format)
    write_records(records, args.out)
    langs = sorted({r.language for r in records})
    _emit({"records": len(records), "languages": langs, "out": str(args.out)})
    return 0


def cmd_split(args) -> int:
    records = read_records(args.records)
    excluded = [x for x in (args.exclude_langs or "").split(",") if x]
    parts = split(records, tuple(args.fractions), args.seed, stratify=not args.uniform, exclude_langs=excluded)
    out = Path(args.out_dir)
    sizes = {}
    for name, part in zip(("offline", "online", "test"), parts):
        write_records(part, out / f"{name}.jsonl")
        sizes[name] = len(part)
    _emit(sizes)
    return 0


def cmd_run_grid(args) -> int:
    cfg = RunConfig.load(args.config, {"cache_dir": args.cache_dir} if args.cache_dir else None)
    metric = args.metric or cfg["metric"]
    built = build(cfg)
    space = cfg.space
    records = read_records(args.records)
    gold = cfg["context"] == "gold"
    if not gold:
        built.providers.indexes = build_indexes(records, built.providers, space, **cfg["chunk"])
    tasks = to_tasks(records, built.providers.pivots, gold_context=gold, seed=cfg["seed"])
    result = run_grid(tasks, space, built.providers, metric, built.judge, cfg.shots, args.workers or cfg["concurrency"])
    paths = result.write(args.out)
    manifest = {
        "dataset": {"path": str(args.records), "sha256": file_sha256(args.records)},
        "space": space.to_json(),
        "seed": cfg["seed"],
        "metric": metric,
        "config_sha256": cfg.digest(),
        "providers": sorted(b.provider_id for b in built.backends()),
    }
    manifest["manifest_hash"] = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()
    (Path(args.out) / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    _emit({"rows": len(result.rows), "tasks": len(result.scores), "network_calls": built.network_calls(),
           "judge_flags": len(result.judge_flags), **{k: str(v) for k, v in paths.items()}})
    return 0


def cmd_report(args) -> int:
    rows = read_rows(args.results)
    paths = report(rows, args.out, args.group_by, args.columns, args.metric, figure=not args.no_figure)
    print(Path(paths["markdown"]).read_text(encoding="utf-8"), end="")
    _emit({k: str(v) for k, v in paths.items()})
    return 0


def cmd_train_offline(args) -> int:
    cfg = _load_cfg(args)
    built = build(cfg)
    records, scores = _labelled(args.records, args.scores)
    backbone = Backbone(built.backbone)
    hyper = cfg.hyper
    state = train_offline(_dataset(records, scores, cfg), backbone, cfg.space, args.epochs, hyper,
                          log_path=args.log, checkpoint_dir=args.checkpoint_dir)
    state.save(args.out)
    _emit({"epochs": state.epoch, "checkpoint": str(args.out)})
    return 0


def _online(state, records, scores, cfg, built, epochs, temperature, log_path):
    space = cfg.space
    tasks = to_tasks(records, gold_context=True)
    backbone = Backbone(built.backbone)
    applicable = np.stack([scores[t.id].applicable_mask for t in tasks])

    def env(task, config):
        # only the selected configuration's score is revealed to the learner
        return float(scores[task.id].values[space.positions(config)])

    return train_online(state, tasks, env, backbone, space, epochs, temperature, applicable, log_path)


def cmd_train_online(args) -> int:
    cfg = _load_cfg(args)
    built = build(cfg)
    state = TrainState.load(args.checkpoint)
    records, scores = _labelled(args.records, args.scores)
    state = _online(state, records, scores, cfg, built, args.epochs, args.temperature, args.log)
    state.save(args.out)
    _emit({"epochs": state.epoch, "checkpoint": str(args.out)})
    return 0


def cmd_adapt(args) -> int:
    """Adapt a trained selector to a new dataset using a fraction of it; test on the rest."""
    cfg = _load_cfg(args)
    built = build(cfg)
    records, scores = _labelled(args.records, args.scores)
    adapt_part, _, test_part = split(records, (args.fraction, 0.0, 1.0 - args.fraction), args.seed)
    backbone = Backbone(built.backbone)
    frozen = TrainState.load(args.checkpoint)
    before = evaluate(frozen, _dataset(test_part, scores, cfg), backbone, cfg.space)
    state = _online(TrainState.load(args.checkpoint), adapt_part, scores, cfg, built, args.epochs,
                    args.temperature, args.log)
    after = evaluate(state, _dataset(test_part, scores, cfg), backbone, cfg.space)
    state.save(args.out)
    _emit({"adapt_records": len(adapt_part), "test_records": len(test_part), "frozen": before, "adapted": after,
           "checkpoint": str(args.out)})
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    built = build(cfg)
    records, scores = _labelled(args.records, args.scores)
    state = TrainState.load(args.checkpoint)
    metrics = evaluate(state, _dataset(records, scores, cfg), Backbone(built.backbone), cfg.space)
    _emit(metrics)
    return 0


def cmd_serve(args) -> int:
    from polyroute.harness.service import serve

    cfg = _load_cfg(args)
    built = build(cfg)
    space = cfg.space
    if args.records:
        built.providers.indexes = build_indexes(read_records(args.records), built.providers, space, **cfg["chunk"])
    state = TrainState.load(args.checkpoint)
    serve(state, space, built.providers, Backbone(built.backbone), args.port, args.host, shots=cfg.shots,
          sample=args.sample, temperature=cfg["temperature"], seed=cfg["seed"])
    return 0


def cmd_synth(args) -> int:
    """Write a planted-landscape dataset (records + scores) for selector experiments."""
    from polyroute.selector.synthetic import generate, make_landscape, shifted

    cfg = _load_cfg(args)
    land = make_landscape(cfg.space, seed=args.seed)
    if args.shift:
        land = shifted(land, strategy_offset=2)
    data = generate(land, args.tasks, seed=args.seed + 1, prefix="shift" if args.shift else "syn")
    out = Path(args.out)
    records = [DatasetRecord(t.id, t.language.code, "synthetic", t.question, t.gold_answers) for t, _ in data]
    write_records(records, out / "records.jsonl")
    write_scores({t.id: y for t, y in data}, out / "scores.jsonl")
    _emit({"tasks": len(data), "out": str(out)})
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyroute", description="Per-query configuration routing for multilingual QA.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="validate a dataset and store it as JSONL records")
    s.add_argument("--input", required=True)
    s.add_argument("--format", default="squad_json", choices=("squad_json", "jsonl"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("split", help="offline / online / test split")
    s.add_argument("--records", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--fractions", type=float, nargs=3, default=DEFAULT_FRACTIONS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--uniform", action="store_true", help="do not stratify by language")
    s.add_argument("--exclude-langs", default="", help="comma-separated languages kept out of the offline part")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("run-grid", help="run every configuration on every record")
    s.add_argument("--records", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--metric", choices=("mlqa_f1", "gptannotator_f1"))
    s.add_argument("--cache-dir")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_run_grid)

    s = sub.add_parser("report", help="aggregate results into markdown, CSV and a figure")
    s.add_argument("--results", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--group-by", default="language", choices=GROUP_KEYS)
    s.add_argument("--columns", default="strategy", choices=GROUP_KEYS)
    s.add_argument("--metric", default="mlqa_f1", choices=("mlqa_f1", "gptannotator_f1"))
    s.add_argument("--no-figure", action="store_true")
    s.set_defaults(func=cmd_report)

    def selector_common(s, checkpoint=True):
        s.add_argument("--config")
        s.add_argument("--records", required=True)
        s.add_argument("--scores", required=True)
        if checkpoint:
            s.add_argument("--checkpoint", required=True)

    s = sub.add_parser("train-offline", help="dense-MSE training on full score tensors")
    selector_common(s, checkpoint=False)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--checkpoint-dir")
    s.add_argument("--log")
    s.set_defaults(func=cmd_train_offline)

    s = sub.add_parser("train-online", help="sampled, sparse-feedback adaptation")
    selector_common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--temperature", type=float)
    s.add_argument("--log")
    s.set_defaults(func=cmd_train_online)

    s = sub.add_parser("adapt", help="adapt to a new dataset with a fraction of it and compare on the rest")
    selector_common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--fraction", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int)
    s.add_argument("--temperature", type=float)
    s.add_argument("--log")
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("evaluate", help="selector metrics on a labelled set")
    selector_common(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("serve", help="HTTP routing service")
    s.add_argument("--config")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--records", help="corpus for retrieval when requests carry no context")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--sample", action="store_true", help="sample from softmax instead of argmax")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("synth", help="write a planted synthetic landscape")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--tasks", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--shift", action="store_true", help="shifted languages and strategy preferences")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PolyrouteError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
