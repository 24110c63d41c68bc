"""Command-line harness: synth, preprocess, build-graph, train, evaluate, ablate, gradcheck.

All commands share one output directory; each step reads what the previous
one wrote there. Reports are written as text (human) and JSON (machine).

Exit codes: 0 ok, 1 other error, 2 usage, 3 parse/schema error,
4 empty graph, 5 non-finite training, 6 gradcheck failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import builder, data, gradcheck, synth
from .config import ExperimentConfig
from .errors import GradcheckFailed, HHGNNError, NonFinite
from .metrics import evaluate
from .model import Variant, load_checkpoint, save_checkpoint
from .training import grid_search, report_for

log = logging.getLogger("hhgnn")

GRADCHECK_TOL = 1e-4
SPLITS = ("train", "val", "test")
ABLATION_ORDER = (Variant.HETERO_GCN, Variant.HYPER_GCN, Variant.ONE_LAYER, Variant.FULL)
ABLATION_TITLES = {
    Variant.HETERO_GCN: "Hetero GCN",
    Variant.HYPER_GCN: "Hyper GCN",
    Variant.ONE_LAYER: "1-layer-HHGNN",
    Variant.FULL: "HHGNN-CHAR",
}
HEADLINE_KEYS = ("pp_mcc", "pp_macf1", "act_mcc", "act_macf1", "overall_mcc", "overall_macf1")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.synthetic = replace(cfg.synthetic, seed=args.seed)
    if getattr(args, "variant", None):
        cfg.variant = Variant(args.variant)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg


def _load_split(cfg: ExperimentConfig, name: str) -> data.InstanceTable:
    return data.load_instances(cfg.out_dir / f"{name}.csv")


def _load_weights(cfg: ExperimentConfig) -> data.LossWeights:
    return data.LossWeights.from_dict(json.loads((cfg.out_dir / "loss_weights.json").read_text()))


def cmd_synth(cfg: ExperimentConfig, args) -> int:
    table = synth.generate(cfg.synthetic)
    path = cfg.out_dir / "synthetic.csv"
    data.save_instances(table, path)
    _write_json(cfg.out_dir / "synthetic.json", asdict(cfg.synthetic))
    print(f"wrote {len(table)} instances to {path}")
    return 0


def cmd_preprocess(cfg: ExperimentConfig, args) -> int:
    table = data.load_instances(cfg.data_path)
    rules = (
        data.CleaningRules.load(cfg.rules)
        if cfg.rules
        else data.CleaningRules.phone_placement_exclusive(table.schema)
    )
    cleaned, report = data.clean_labels(table, rules)
    parts = data.split(cleaned, cfg.split, seed=cfg.seed)
    stats = data.fit_normalizer(parts[0])
    parts = [data.apply_normalizer(t, stats) for t in parts]
    weights = data.compute_loss_weights(parts[0])

    out = cfg.out_dir
    for name, t in zip(SPLITS, parts):
        data.save_instances(t, out / f"{name}.csv")
    _write_json(out / "norm_stats.json", stats.to_dict())
    _write_json(out / "loss_weights.json", weights.to_dict())
    _write_json(out / "cleaning_report.json", {**report.to_dict(), "seed": cfg.seed})
    lines = [f"{rule}: {n}" for rule, n in report.exclusivity_corrections.items()]
    lines += [f"{rule}: {n}" for rule, n in report.cooccurrence_corrections.items()]
    (out / "cleaning_report.txt").write_text(
        "exclusivity / co-occurrence corrections\n" + "\n".join(lines) + f"\ntotal: {report.total}\n",
        encoding="utf-8",
    )
    summary = {
        "seed": cfg.seed,
        "sizes": {n: len(t) for n, t in zip(SPLITS, parts)},
        "dropped_features": [stats.feature_names[j] for j in stats.dropped],
        "corrections": report.total,
    }
    _write_json(out / "preprocess.json", summary)
    sizes = "/".join(str(len(t)) for t in parts)
    print(f"split {sizes} (train/val/test), {report.total} label corrections, "
          f"{len(stats.dropped)} constant features dropped")
    return 0


def cmd_build_graph(cfg: ExperimentConfig, args) -> int:
    train = _load_split(cfg, "train")
    bundle = builder.build_graph(train, min_frequency=cfg.min_combo_frequency)
    builder.save_bundle(bundle, cfg.out_dir)
    g = bundle.graph
    sizes = [len(e) for e in g.hyperedges]
    summary = {
        "seed": cfg.seed,
        "num_nodes": g.num_nodes,
        "num_edges": g.num_edges,
        "users": len(bundle.user_nodes),
        "phone_placements": len(bundle.pp_nodes),
        "activities": len(bundle.act_nodes),
        "max_edge_size": max(sizes),
        "edges_by_size": {str(k): sizes.count(k) for k in sorted(set(sizes))},
        "absent_labels": list(bundle.absent_labels),
    }
    _write_json(cfg.out_dir / "graph_summary.json", summary)
    print(f"{g.num_nodes} nodes ({summary['users']} users, {summary['phone_placements']} placements, "
          f"{summary['activities']} activities), {g.num_edges} hyperedges, max size {max(sizes)}")
    if bundle.absent_labels:
        print("warning: no node for labels " + ", ".join(bundle.absent_labels), file=sys.stderr)
    return 0


def _search(cfg: ExperimentConfig, variant: Variant, log_lines: list | None = None):
    train = _load_split(cfg, "train")
    val = _load_split(cfg, "val")
    bundle = builder.load_bundle(cfg.out_dir, train.schema)
    weights = _load_weights(cfg)

    def on_epoch(trial, row):
        if log_lines is not None:
            log_lines.append(json.dumps({"trial": trial, **row}, sort_keys=True))

    trials, winner = grid_search(
        bundle,
        cfg.model_config(train.features.shape[1]),
        cfg.train_settings(),
        cfg.grid,
        train,
        val,
        weights,
        variant=variant,
        seed=cfg.effective_model_seed,
        on_epoch=on_epoch,
    )
    if winner is None:
        raise NonFinite("every grid trial hit a non-finite value")
    return trials, winner, weights


def _trial_summary(trials, winner) -> dict:
    return {
        "trials": [
            {"index": t.index, "params": t.params, "best_epoch": t.best_epoch,
             "best_val_mcc": None if t.error else t.best_val_mcc, "error": t.error}
            for t in trials
        ],
        "winner": winner.index,
    }


def cmd_train(cfg: ExperimentConfig, args) -> int:
    log_lines: list[str] = []
    trials, winner, _ = _search(cfg, cfg.variant, log_lines)
    out = cfg.out_dir
    (out / "train_log.jsonl").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    summary = {**_trial_summary(trials, winner), "seed": cfg.seed,
               "model_seed": cfg.effective_model_seed, "variant": cfg.variant.value}
    _write_json(out / "grid.json", summary)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt"
    save_checkpoint(winner.model, ckpt, extra={
        "seed": cfg.seed, "trial": winner.index, "grid_point": winner.params,
        "best_epoch": winner.best_epoch,
    })
    print(f"{len(trials)} trial(s); winner #{winner.index} {winner.params} "
          f"best epoch {winner.best_epoch}, val MCC {winner.best_val_mcc:.4f} -> {ckpt}")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.out_dir / "model.ckpt"
    model, header = load_checkpoint(ckpt)
    table = _load_split(cfg, args.split)
    report = report_for(model, table, _load_weights(cfg))
    stem = cfg.out_dir / f"report_{args.split}"
    doc = {**report.to_dict(), "split": args.split, "seed": header["seed"], "variant": header["variant"]}
    _write_json(stem.with_suffix(".json"), doc)
    stem.with_suffix(".txt").write_text(report.to_text(), encoding="utf-8")
    print(report.to_text(), end="")
    return 0


def _table_text(rows: dict[str, dict], trivial: dict) -> str:
    head = f"{'':<16}{'PP MCC':>9}{'PP F1':>9}{'ACT MCC':>9}{'ACT F1':>9}{'All MCC':>9}{'All F1':>9}"
    lines = [head]
    for title, cells in rows.items():
        lines.append(f"{title:<16}" + "".join(f"{cells[k]:>9.3f}" for k in HEADLINE_KEYS))
    lines.append(f"(trivial all-negative predictor: overall MCC {trivial['overall_mcc']:.3f}, "
                 f"MacF1 {trivial['overall_macf1']:.3f})")
    return "\n".join(lines) + "\n"


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    table = _load_split(cfg, args.split)
    rows, detail = {}, {}
    weights = None
    for kind in ABLATION_ORDER:
        trials, winner, weights = _search(cfg, kind)
        rows[ABLATION_TITLES[kind]] = report_for(winner.model, table, weights).headline()
        detail[kind.value] = _trial_summary(trials, winner)
    zeros = np.zeros_like(table.labels)
    trivial = evaluate(table.labels, zeros, table.schema.pp_names, table.schema.act_names,
                       weights.active).headline()
    doc = {"split": args.split, "seed": cfg.seed, "model_seed": cfg.effective_model_seed,
           "rows": [{"model": title, **cells} for title, cells in rows.items()],
           "trivial_all_negative": trivial, "trials": detail}
    _write_json(cfg.out_dir / "ablation.json", doc)
    text = _table_text(rows, trivial)
    (cfg.out_dir / "ablation.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_gradcheck(cfg: ExperimentConfig | None, args) -> int:
    results = gradcheck.run_all()
    worst = max(max(v.values()) for v in results.values())
    for variant, per_param in results.items():
        print(f"{variant:<12} max rel err {max(per_param.values()):.3e} over {len(per_param)} parameters")
    status = "PASS" if worst < GRADCHECK_TOL else "FAIL"
    print(f"{status}: max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out) / "gradcheck.json",
                    {"max_rel_err": worst, "tolerance": GRADCHECK_TOL, "per_variant": results})
    if worst >= GRADCHECK_TOL:
        raise GradcheckFailed(f"max relative error {worst:.3e} >= {GRADCHECK_TOL:g}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hhgnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="override the config's seed")
        p.add_argument("--out", help="output directory (overrides config)")
        if name in ("train", "evaluate"):
            p.add_argument("--checkpoint", help="checkpoint path (default <out>/model.ckpt)")
        if name == "train":
            p.add_argument("--variant", choices=[v.value for v in Variant])
        if name in ("evaluate", "ablate"):
            p.add_argument("--split", choices=SPLITS, default="test")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = None if args.command == "gradcheck" else _config(args)
        return COMMANDS[args.command](cfg, args)
    except HHGNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
