"""Command-line entry point for the full workflow.

Subcommands: gen-data, train-inspirer, distill, train-supervised, evaluate,
ablate, sweep-alignments, cost. Every run directory receives manifest.json
(full resolved config + seed), metrics.jsonl (deterministic stream),
summary.json (accuracies + wall clock), and checkpoints with sidecars.
FLITEXT_SEED overrides the seed from the environment.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import config_from_dict, load_config
from .data import (SyntheticSpec, generate_synthetic_records, load_jsonl,
                   tokenize_and_encode, write_jsonl)
from .efficiency import (CostReport, benchmark_inference, count_params,
                         estimate_flops, flops_breakdown, make_probe, speedup)
from .errors import ConfigError, DataError, FlitextError
from .losses import COMPONENT_NAMES
from .models import inspirer_forward, target_forward
from .pipeline import (accuracy, build_bundle, distill_target, evaluate_params,
                       load_model, run_ablation, run_alignment_sweep, save_model,
                       train_inspirer, train_supervised_target, write_manifest,
                       write_metrics, write_summary, _model_configs)


def _load_run_config(path, seed_flag):
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    env_seed = os.environ.get("FLITEXT_SEED")
    if env_seed is not None:
        raw["seed"] = int(env_seed)
    elif seed_flag is not None:
        raw["seed"] = int(seed_flag)
    return config_from_dict(raw)


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args):
    with open(args.spec, "r", encoding="utf-8") as f:
        raw = json.load(f)
    if "seq_len" in raw:
        raw["seq_len"] = tuple(raw["seq_len"])
    try:
        spec = SyntheticSpec(**raw)
    except TypeError as e:
        raise ConfigError(f"bad synthetic spec: {e}") from e
    out = _out_dir(args.out)
    records = generate_synthetic_records(spec)
    for split in ("train", "unlabeled", "dev", "test"):
        write_jsonl(out / f"{split}.jsonl", records[split])
    with open(out / "spec.json", "w", encoding="utf-8") as f:
        json.dump(raw, f, indent=2, default=list)
        f.write("\n")
    print(f"wrote {sum(len(v) for v in records.values())} records to {out}")
    return 0


def cmd_train_inspirer(args):
    cfg = _load_run_config(args.config, args.seed)
    out = _out_dir(args.out)
    write_manifest(out, "train-inspirer", cfg)
    bundle = build_bundle(cfg)
    i_cfg, _ = _model_configs(cfg, bundle)
    store, metrics = train_inspirer(cfg, bundle)
    write_metrics(out, metrics)
    write_summary(out, metrics)
    save_model(out, "inspirer", "inspirer", i_cfg, store, bundle.vocab)
    print(f"inspirer best_dev={metrics.best_dev:.4f} test_acc={metrics.final_test:.4f}")
    return 0


def cmd_distill(args):
    cfg = _load_run_config(args.config, args.seed)
    out = _out_dir(args.out)
    write_manifest(out, "distill", cfg, extra={"inspirer_ckpt": str(args.inspirer)})
    kind, i_cfg, teacher, _ = load_model(args.inspirer)
    if kind != "inspirer":
        raise ConfigError(f"{args.inspirer} holds a {kind} model, need an inspirer")
    bundle = build_bundle(cfg)
    _, t_cfg = _model_configs(cfg, bundle)
    store, metrics = distill_target(cfg, teacher, bundle)
    write_metrics(out, metrics)
    write_summary(out, metrics)
    save_model(out, "target", "target", t_cfg, store, bundle.vocab)
    print(f"target best_dev={metrics.best_dev:.4f} test_acc={metrics.final_test:.4f}")
    return 0


def cmd_train_supervised(args):
    cfg = _load_run_config(args.config, args.seed)
    out = _out_dir(args.out)
    write_manifest(out, "train-supervised", cfg)
    bundle = build_bundle(cfg)
    _, t_cfg = _model_configs(cfg, bundle)
    store, metrics = train_supervised_target(cfg, bundle)
    write_metrics(out, metrics)
    write_summary(out, metrics)
    save_model(out, "target", "target", t_cfg, store, bundle.vocab)
    print(f"supervised target best_dev={metrics.best_dev:.4f} test_acc={metrics.final_test:.4f}")
    return 0


def cmd_evaluate(args):
    kind, config, params, vocab = load_model(args.ckpt)
    records = [r for r in load_jsonl(args.data) if r["label"] is not None]
    if not records:
        raise DataError(f"{args.data}: no labeled records to evaluate")
    if kind == "inspirer":
        max_len, min_len = config.max_len, 1
    else:
        max_len, min_len = 10_000, max(config.filter_sizes) + 1
    split = [(tokenize_and_encode(r["text"], vocab, max_len), r["label"]) for r in records]
    acc = evaluate_params(kind, config, params, split, min_len)
    print(f"accuracy {acc:.4f}")
    return 0


def cmd_ablate(args):
    cfg = _load_run_config(args.config, args.seed)
    removals = [r.strip() for r in args.remove.split(",") if r.strip()]
    bad = set(removals) - set(COMPONENT_NAMES)
    if bad:
        raise ConfigError(f"unknown components {sorted(bad)}; valid: {COMPONENT_NAMES}")
    out = _out_dir(args.out)
    write_manifest(out, "ablate", cfg, extra={"remove": removals})
    bundle = build_bundle(cfg)
    i_cfg, t_cfg = _model_configs(cfg, bundle)
    if args.inspirer:
        kind, _, teacher, _ = load_model(args.inspirer)
        if kind != "inspirer":
            raise ConfigError(f"{args.inspirer} holds a {kind} model, need an inspirer")
    else:
        teacher, t_metrics = train_inspirer(cfg, bundle)
        save_model(out, "inspirer", "inspirer", i_cfg, teacher, bundle.vocab)
        print(f"stage-1 inspirer test_acc={t_metrics.final_test:.4f}")
    rows = run_ablation(cfg, removals, bundle, teacher)
    table = []
    for row in rows:
        arm_dir = _out_dir(out / row["arm"].replace("-", "no_") if row["arm"] != "baseline" else out / "baseline")
        write_metrics(arm_dir, row["metrics"])
        write_summary(arm_dir, row["metrics"], extra={"arm": row["arm"], "removed": row["removed"]})
        save_model(arm_dir, "target", "target", t_cfg, row["store"], bundle.vocab)
        table.append({"arm": row["arm"], "removed": row["removed"],
                      "test_acc": row["test_acc"], "best_dev": row["best_dev"]})
        print(f"{row['arm']:>24s}  test_acc={row['test_acc']:.4f}")
    with open(out / "table.json", "w", encoding="utf-8") as f:
        json.dump(table, f, indent=2)
        f.write("\n")
    return 0


def cmd_sweep_alignments(args):
    cfg = _load_run_config(args.config, args.seed)
    with open(args.specs, "r", encoding="utf-8") as f:
        spec_texts = [line.strip() for line in f if line.strip()]
    if not spec_texts:
        raise ConfigError(f"{args.specs}: no alignment specs found")
    out = _out_dir(args.out)
    write_manifest(out, "sweep-alignments", cfg, extra={"specs": spec_texts})
    bundle = build_bundle(cfg)
    i_cfg, t_cfg = _model_configs(cfg, bundle)
    if args.inspirer:
        kind, _, teacher, _ = load_model(args.inspirer)
        if kind != "inspirer":
            raise ConfigError(f"{args.inspirer} holds a {kind} model, need an inspirer")
    else:
        teacher, t_metrics = train_inspirer(cfg, bundle)
        save_model(out, "inspirer", "inspirer", i_cfg, teacher, bundle.vocab)
        print(f"stage-1 inspirer test_acc={t_metrics.final_test:.4f}")
    rows = run_alignment_sweep(cfg, spec_texts, bundle, teacher)
    table = []
    for i, row in enumerate(rows):
        arm_dir = _out_dir(out / f"arm{i:02d}")
        write_metrics(arm_dir, row["metrics"])
        write_summary(arm_dir, row["metrics"], extra={"alignment": row["alignment"]})
        save_model(arm_dir, "target", "target", t_cfg, row["store"], bundle.vocab)
        table.append({"alignment": row["alignment"], "test_acc": row["test_acc"],
                      "best_dev": row["best_dev"]})
        print(f"{row['alignment']:>36s}  test_acc={row['test_acc']:.4f}")
    with open(out / "table.json", "w", encoding="utf-8") as f:
        json.dump(table, f, indent=2)
        f.write("\n")
    return 0


def cmd_cost(args):
    cfg = _load_run_config(args.config, args.seed)
    bundle = build_bundle(cfg)
    i_cfg, t_cfg = _model_configs(cfg, bundle)
    from .models import init_inspirer, init_target
    from .pipeline import rng_for

    i_params = init_inspirer(i_cfg, rng_for(cfg.seed, "inspirer_init"))
    t_params = init_target(t_cfg, rng_for(cfg.seed, "target_init"))
    reports = {}
    latencies = {}
    for kind, config, params, forward in (
        ("inspirer", i_cfg, i_params, lambda ids: inspirer_forward(ids, i_cfg, i_params, "eval")),
        ("target", t_cfg, t_params, lambda ids: target_forward(ids, t_cfg, t_params, "eval")),
    ):
        probe = make_probe(i_cfg, count=4, seed=cfg.seed)  # same length for both
        mean_s, std_s = benchmark_inference(forward, probe, trials=args.trials)
        latencies[kind] = mean_s
        reports[kind] = CostReport(
            kind=kind, params=count_params(config),
            flops=estimate_flops(config, i_cfg.max_len), seq_len=i_cfg.max_len,
            latency_mean_s=mean_s, latency_std_s=std_s, trials=args.trials,
        ).as_dict()
        reports[kind]["breakdown"] = flops_breakdown(config, i_cfg.max_len)
    reports["target"]["speedup_vs_baseline"] = speedup(latencies["inspirer"], latencies["target"])
    if args.baseline:
        with open(args.baseline, "r", encoding="utf-8") as f:
            base = json.load(f)
        base_lat = base.get("target", base).get("latency_mean_s")
        if base_lat:
            reports["target"]["speedup_vs_external_baseline"] = speedup(base_lat, latencies["target"])
    doc = json.dumps(reports, indent=2)
    print(doc)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(doc + "\n")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="flitext",
                                description="Two-stage semi-supervised distillation workbench")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", help="write synthetic train/dev/test/unlabeled files")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_gen_data)

    for name, fn, extra in (
        ("train-inspirer", cmd_train_inspirer, ()),
        ("distill", cmd_distill, ("inspirer",)),
        ("train-supervised", cmd_train_supervised, ()),
    ):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--seed", type=int, default=None)
        if "inspirer" in extra:
            sp.add_argument("--inspirer", required=True)
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("evaluate", help="print argmax accuracy of a checkpoint on a dataset file")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("ablate", help="retrain the target with components removed")
    sp.add_argument("--config", required=True)
    sp.add_argument("--remove", required=True,
                    help=f"comma list from {COMPONENT_NAMES}")
    sp.add_argument("--out", required=True)
    sp.add_argument("--inspirer", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("sweep-alignments", help="stage-2 run per alignment spec line")
    sp.add_argument("--config", required=True)
    sp.add_argument("--specs", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--inspirer", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(fn=cmd_sweep_alignments)

    sp = sub.add_parser("cost", help="parameter/FLOPs/latency report")
    sp.add_argument("--config", required=True)
    sp.add_argument("--baseline", default=None)
    sp.add_argument("--out", default=None)
    sp.add_argument("--trials", type=int, default=30)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(fn=cmd_cost)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FlitextError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
