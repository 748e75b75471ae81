"""Command-line pipeline: prepare, train, eval, ablate, grid, epidemic.

Every command writes its outputs under --out with fixed names and records a
manifest.json holding the command, the resolved configuration, the seeds,
sha256 digests of the inputs, the output paths, and wall-clock timings.
report.json never contains timestamps, so reruns with identical inputs and
seeds are byte-identical; manifests differ only in their timing fields.

Config files are flat JSON objects; keys are routed to the model, training,
and epidemic configs by field name and validated together, so one error
message lists every offending key.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .bundle import Dataset, load_bundle, maybe_sparsify, save_bundle
from .complex_core import load_edge_list, load_features
from .epidemic import (
    SeirConfig,
    load_scores,
    run_epidemic_pipeline,
    save_curve,
    trial_seeds,
)
from .figures import (
    plot_epidemic_curves,
    plot_training_history,
    plot_variant_means,
)
from .graph_features import centrality_features, standardize_columns
from .model import ModelConfig, VARIANTS, load_checkpoint, BscnetsModel
from .training import (
    TrainConfig,
    _worker_count,
    roc_auc,
    run_experiment,
    split_edges,
    t_test_one_sided,
    train,
)

#: hyperparameter grid searched by cmd_grid, one axis per overridable field
GRID = {
    "hidden_pair": (1, 8, 16, 32, 64, 128),
    "hidden_conv": (64, 128, 1024),
    "conv_out": (4, 16, 32),
    "learning_rate": (0.001, 0.005, 0.008, 0.01, 0.05),
    "dropout": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    "walk_length": (2, 3, 4, 5),
    "weight_conv": (0.01, 0.1, 1.0, 10.0, 100.0),
    "weight_pair": (1.0, 10.0),
}


class CliError(ValueError):
    """Raised for unusable command-line inputs."""


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(payload, path) -> str:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return str(path)


def _load_raw_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise CliError(f"{path}: config must be a flat JSON object")
    return raw


def build_configs(raw: dict, overrides: dict | None = None):
    """Route flat config keys to the three config types and validate them
    together, reporting every problem at once."""
    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    seir_keys = {f.name for f in fields(SeirConfig)}
    errors = []
    unknown = sorted(set(merged) - model_keys - train_keys - seir_keys)
    if unknown:
        errors.append(f"unknown config keys: {', '.join(unknown)}")
    model_config = ModelConfig(
        **{k: v for k, v in merged.items() if k in model_keys}
    )
    train_config = TrainConfig(
        **{k: v for k, v in merged.items() if k in train_keys}
    )
    seir_config = SeirConfig(**{k: v for k, v in merged.items() if k in seir_keys})
    errors.extend(model_config.validation_errors())
    errors.extend(train_config.validation_errors())
    errors.extend(seir_config.validation_errors())
    if errors:
        raise CliError("; ".join(errors))
    return model_config, train_config, seir_config


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(
    command: str,
    config_snapshot: dict,
    seeds: dict,
    inputs: dict,
    outputs: dict,
    timings: dict,
    out_dir: Path,
) -> str:
    payload = {
        "command": command,
        "config": config_snapshot,
        "seeds": seeds,
        "inputs": {str(k): v for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "timings": timings,
    }
    return _write_json(payload, out_dir / "manifest.json")


class _Stopwatch:
    def __init__(self):
        self._t0 = time.monotonic()
        self.started_at = datetime.now(timezone.utc).isoformat()

    def finish(self) -> dict:
        return {
            "started_at": self.started_at,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "total_seconds": round(time.monotonic() - self._t0, 3),
        }


def _load_dataset(args) -> tuple[Dataset, dict]:
    data_dir = Path(args.data)
    dataset = load_bundle(data_dir)
    dataset.features = maybe_sparsify(dataset.features)
    inputs = {}
    for name in ("edges.txt", "features.csv", "features.npz", "stats.json"):
        candidate = data_dir / name
        if candidate.is_file():
            inputs[candidate] = _sha256(candidate)
    return dataset, inputs


def cmd_prepare(args) -> int:
    watch = _Stopwatch()
    out = _out_dir(args)
    edges_path = Path(args.edges)
    if not edges_path.is_file():
        raise CliError(f"edge file not found: {edges_path}")
    graph = load_edge_list(edges_path)
    inputs = {edges_path: _sha256(edges_path)}

    if args.features is not None and args.synthesize_features:
        raise CliError("choose either --features or --synthesize-features")
    if args.features is not None:
        features_path = Path(args.features)
        features = load_features(features_path, n_expected=graph.n)
        inputs[features_path] = _sha256(features_path)
    elif args.synthesize_features:
        features = standardize_columns(centrality_features(graph))
    else:
        raise CliError("features required: pass --features or --synthesize-features")

    dataset = Dataset(out.name, graph, maybe_sparsify(features))
    paths = save_bundle(dataset, out)
    _manifest(
        "prepare",
        {"synthesize_features": bool(args.synthesize_features)},
        {},
        inputs,
        paths,
        watch.finish(),
        out,
    )
    print(json.dumps(dataset.stats()))
    return 0


def cmd_train(args) -> int:
    watch = _Stopwatch()
    out = _out_dir(args)
    dataset, inputs = _load_dataset(args)
    raw = _load_raw_config(args.config)
    if args.config:
        inputs[Path(args.config)] = _sha256(args.config)
    model_config, train_config, _ = build_configs(
        raw, {"seed": args.seed, "runs": args.runs}
    )

    checkpoint = out / "model.ckpt"
    report = run_experiment(
        dataset,
        model_config,
        train_config,
        variants=("full",),
        resplit=args.resplit,
        collect_history=True,
        checkpoint_path=checkpoint,
    )
    history = report.pop("history", {})
    outputs = {
        "report": _write_json(report, out / "report.json"),
        "checkpoint": str(checkpoint),
    }
    if history:
        outputs["history_figure"] = plot_training_history(
            history, out / "training_history.png"
        )
    run_seeds = [train_config.seed + 1 + i for i in range(train_config.runs)]
    _manifest(
        "train",
        {"model": model_config.to_dict(), "train": train_config.to_dict(),
         "resplit": bool(args.resplit)},
        {"master": train_config.seed, "run_seeds": run_seeds},
        inputs,
        outputs,
        watch.finish(),
        out,
    )
    print(f"mean test AUC {report['mean_auc']:.4f} "
          f"(std {report['std_auc']:.4f}, {report['runs']} runs)")
    return 0


def cmd_eval(args) -> int:
    watch = _Stopwatch()
    out = _out_dir(args)
    dataset, inputs = _load_dataset(args)
    checkpoint_path = Path(args.checkpoint)
    if not checkpoint_path.is_file():
        raise CliError(f"checkpoint not found: {checkpoint_path}")
    inputs[checkpoint_path] = _sha256(checkpoint_path)

    config, variant, params, meta = load_checkpoint(checkpoint_path)
    split_seed = int(meta.get("split_seed", 0)) if args.seed is None else args.seed
    run_seed = int(meta.get("run_seed", split_seed + 1))
    split = split_edges(dataset.graph, split_seed)
    model = BscnetsModel(
        config, variant, split.train_graph(), dataset.features, seed=run_seed
    )
    model.params = params
    report = {
        "dataset": dataset.name,
        "checkpoint": checkpoint_path.name,
        "variant": variant,
        "split_seed": split_seed,
        "val_auc": roc_auc(
            model.pair_probabilities(split.val_pos),
            model.pair_probabilities(split.val_neg),
        ),
        "test_auc": roc_auc(
            model.pair_probabilities(split.test_pos),
            model.pair_probabilities(split.test_neg),
        ),
        "config": config.to_dict(),
    }
    outputs = {"report": _write_json(report, out / "report.json")}
    _manifest(
        "eval",
        {"model": config.to_dict(), "variant": variant},
        {"split": split_seed, "run": run_seed},
        inputs,
        outputs,
        watch.finish(),
        out,
    )
    print(f"val AUC {report['val_auc']:.4f}, test AUC {report['test_auc']:.4f}")
    return 0


def cmd_ablate(args) -> int:
    watch = _Stopwatch()
    out = _out_dir(args)
    dataset, inputs = _load_dataset(args)
    raw = _load_raw_config(args.config)
    if args.config:
        inputs[Path(args.config)] = _sha256(args.config)
    model_config, train_config, _ = build_configs(
        raw, {"seed": args.seed, "runs": args.runs}
    )

    experiment = run_experiment(
        dataset,
        model_config,
        train_config,
        variants=tuple(VARIANTS),
        resplit=args.resplit,
    )
    report = {
        "full": {
            "mean_auc": experiment["mean_auc"],
            "std_auc": experiment["std_auc"],
            "per_run": experiment["per_run"],
        }
    }
    full_runs = experiment["per_run"]
    for variant, summary in experiment["ablation"].items():
        entry = {
            "mean_auc": summary["mean_auc"],
            "std_auc": summary["std_auc"],
            "per_run": summary["per_run"],
        }
        if train_config.runs >= 2:
            entry["p_value_full_greater"] = t_test_one_sided(
                full_runs, summary["per_run"]
            )
        report[variant] = entry

    outputs = {
        "report": _write_json(report, out / "report.json"),
        "figure": plot_variant_means(report, out / "ablation.png"),
    }
    run_seeds = [train_config.seed + 1 + i for i in range(train_config.runs)]
    _manifest(
        "ablate",
        {"model": model_config.to_dict(), "train": train_config.to_dict(),
         "resplit": bool(args.resplit)},
        {"master": train_config.seed, "run_seeds": run_seeds},
        inputs,
        outputs,
        watch.finish(),
        out,
    )
    for variant in VARIANTS:
        print(f"{variant}: mean AUC {report[variant]['mean_auc']:.4f}")
    return 0


def cmd_grid(args) -> int:
    watch = _Stopwatch()
    out = _out_dir(args)
    dataset, inputs = _load_dataset(args)
    raw = _load_raw_config(args.config)
    if args.config:
        inputs[Path(args.config)] = _sha256(args.config)
    model_config, train_config, _ = build_configs(
        raw, {"seed": args.seed, "runs": args.runs}
    )

    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    bad = sorted(set(axes) - set(GRID))
    if bad:
        raise CliError(
            f"unknown grid axes: {', '.join(bad)}; choose from {', '.join(sorted(GRID))}"
        )
    if not axes:
        raise CliError("no grid axes selected")

    base_model = model_config.to_dict()
    base_train = train_config.to_dict()
    split = split_edges(dataset.graph, train_config.seed)
    run_seeds = [train_config.seed + 1 + i for i in range(train_config.runs)]

    cells = [dict(zip(axes, values)) for values in
             itertools.product(*(GRID[a] for a in axes))]
    model_keys = {f.name for f in fields(ModelConfig)}

    def run_cell(cell_index):
        overrides = cells[cell_index]
        cell_model = ModelConfig.from_dict(
            {**base_model, **{k: v for k, v in overrides.items() if k in model_keys}}
        )
        cell_train = TrainConfig.from_dict(
            {**base_train,
             **{k: v for k, v in overrides.items() if k not in model_keys}}
        )
        val_losses, test_aucs = [], []
        for seed in run_seeds:
            result = train(
                dataset.graph, dataset.features, split, cell_model, cell_train,
                seed=seed,
            )
            val_losses.append(result.best_val_loss)
            test_aucs.append(roc_auc(
                result.model.pair_probabilities(split.test_pos),
                result.model.pair_probabilities(split.test_neg),
            ))
        return {
            "overrides": overrides,
            "mean_val_loss": float(np.mean(val_losses)),
            "mean_test_auc": float(np.mean(test_aucs)),
            "per_run_val_loss": val_losses,
            "per_run_test_auc": test_aucs,
        }

    workers = _worker_count()
    indices = range(len(cells))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, indices))
    else:
        results = [run_cell(i) for i in indices]

    best_index = min(
        range(len(results)), key=lambda i: results[i]["mean_val_loss"]
    )
    report = {
        "dataset": dataset.name,
        "axes": axes,
        "runs": train_config.runs,
        "cells": results,
        "best": {"index": best_index, **results[best_index]},
    }
    outputs = {"report": _write_json(report, out / "report.json")}
    _manifest(
        "grid",
        {"model": base_model, "train": base_train, "axes": axes},
        {"master": train_config.seed, "run_seeds": run_seeds},
        inputs,
        outputs,
        watch.finish(),
        out,
    )
    best = results[best_index]
    print(f"best cell {best['overrides']} "
          f"(val loss {best['mean_val_loss']:.4f}, "
          f"test AUC {best['mean_test_auc']:.4f})")
    return 0


def cmd_epidemic(args) -> int:
    watch = _Stopwatch()
    out = _out_dir(args)
    dataset, inputs = _load_dataset(args)
    raw = _load_raw_config(args.config)
    if args.config:
        inputs[Path(args.config)] = _sha256(args.config)
    model_config, train_config, seir_config = build_configs(
        raw, {"seed": args.seed, "trials": args.trials}
    )

    external = None
    if args.scorer_file:
        scorer_path = Path(args.scorer_file)
        external = load_scores(scorer_path)
        inputs[scorer_path] = _sha256(scorer_path)

    report, curves = run_epidemic_pipeline(
        dataset,
        model_config,
        train_config,
        seir_config,
        perturbation=args.perturb,
        strategy=args.strategy,
        fraction=args.fraction,
        seed=train_config.seed,
        variant=args.variant,
        external_scores=external,
    )
    outputs = {"report": _write_json(report, out / "report.json")}
    for label in ("base", "model", "external"):
        if label in curves:
            path = out / f"curves_{label}.csv"
            save_curve(curves[label], path)
            outputs[f"curves_{label}"] = str(path)
    outputs["figure"] = plot_epidemic_curves(curves, out / "epidemic_curves.png")
    _manifest(
        "epidemic",
        {
            "model": model_config.to_dict(),
            "train": train_config.to_dict(),
            "seir": seir_config.to_dict(),
            "perturb": args.perturb,
            "strategy": args.strategy,
            "fraction": args.fraction,
            "variant": args.variant,
        },
        {
            "master": train_config.seed,
            "trial_seeds": [list(s) for s in
                            trial_seeds(train_config.seed, seir_config.trials)],
        },
        inputs,
        outputs,
        watch.finish(),
        out,
    )
    comparison = report["comparison"]["model"]
    print(f"model curve: peak diff {comparison['peak_diff']:.4f}, "
          f"L1 {comparison['l1_distance']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bscnets",
        description="Block simplicial-complex link prediction and epidemic pipeline",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    prepare = commands.add_parser(
        "prepare", help="build a canonical dataset bundle from an edge list"
    )
    prepare.add_argument("--edges", required=True, help="edge list file")
    prepare.add_argument("--features", help="node feature CSV")
    prepare.add_argument(
        "--synthesize-features", action="store_true",
        help="derive four standardized centrality features",
    )
    prepare.add_argument("--out", required=True, help="bundle directory")
    prepare.set_defaults(func=cmd_prepare)

    def training_flags(sub, runs_help="training runs"):
        sub.add_argument("--data", required=True, help="dataset bundle directory")
        sub.add_argument("--config", help="flat JSON config file")
        sub.add_argument("--seed", type=int, help="experiment seed")
        sub.add_argument("--runs", type=int, help=runs_help)
        sub.add_argument("--out", required=True, help="output directory")

    train_cmd = commands.add_parser("train", help="train and report mean test AUC")
    training_flags(train_cmd)
    train_cmd.add_argument(
        "--resplit", action="store_true", help="fresh split per run"
    )
    train_cmd.set_defaults(func=cmd_train)

    eval_cmd = commands.add_parser("eval", help="evaluate a saved checkpoint")
    eval_cmd.add_argument("--data", required=True, help="dataset bundle directory")
    eval_cmd.add_argument("--checkpoint", required=True, help="model checkpoint")
    eval_cmd.add_argument("--seed", type=int, help="override the split seed")
    eval_cmd.add_argument("--out", required=True, help="output directory")
    eval_cmd.set_defaults(func=cmd_eval)

    ablate = commands.add_parser(
        "ablate", help="compare the full model with its three ablations"
    )
    training_flags(ablate)
    ablate.add_argument("--resplit", action="store_true", help="fresh split per run")
    ablate.set_defaults(func=cmd_ablate)

    grid = commands.add_parser("grid", help="hyperparameter grid search")
    training_flags(grid, runs_help="runs per grid cell")
    grid.add_argument(
        "--axes", default="learning_rate",
        help="comma-separated grid axes (default: learning_rate)",
    )
    grid.set_defaults(func=cmd_grid)

    epidemic = commands.add_parser(
        "epidemic", help="perturb, rebuild, and simulate contagion"
    )
    epidemic.add_argument("--data", required=True, help="dataset bundle directory")
    epidemic.add_argument("--config", help="flat JSON config file")
    epidemic.add_argument("--seed", type=int, help="pipeline seed")
    epidemic.add_argument("--perturb", type=float, default=0.2,
                          help="edge perturbation rate (0 disables)")
    epidemic.add_argument("--strategy", default="none",
                          choices=("betweenness", "degree", "none"),
                          help="mitigation strategy")
    epidemic.add_argument("--fraction", type=float, default=0.2,
                          help="fraction of nodes mitigated")
    epidemic.add_argument("--variant", default="full", choices=VARIANTS,
                          help="scorer variant to train")
    epidemic.add_argument("--scorer-file", help="external 'u v score' file")
    epidemic.add_argument("--trials", type=int, help="SEIR trials")
    epidemic.add_argument("--out", required=True, help="output directory")
    epidemic.set_defaults(func=cmd_epidemic)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
