"""Command-line experiment runner.

Subcommands: ``gen-data`` (synthesize a meta-set to CSV), ``train`` (fit a
detector and write a checkpoint plus report), ``eval`` (score a checkpoint on
test pools), and ``ablate`` (run one of the predefined study grids). Results
are appended as JSON lines, one self-describing record per row; tables go to
stdout. Exit codes: 0 success, 2 usage or config error, 3 runtime or numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, parse_flat_config, resolve_config
from .data import (
    GAUSSIAN_PRESETS,
    GaussianMetaSpec,
    TabularSource,
    augment_with_permutations,
    generate_gaussian_metaset,
    load_tabular,
    save_metaset_csv,
)
from .errors import ConfigError
from .evaluation import collect_latents, evaluate, tv_distance_diagnostic
from .model import load_checkpoint, save_checkpoint
from .training import TrainConfig, train

THREADS_ENV = "BATCHAD_THREADS"


def _workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be at least 1, got {n}")
    return n


def _load_config(args) -> ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        values = parse_flat_config(Path(args.config).read_text())
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed" if args.cmd == "train" else "eval_seed"] = args.seed
    if getattr(args, "ratios", None) is not None:
        overrides["ratios"] = [float(r) for r in args.ratios.split(",")]
    if getattr(args, "runs", None) is not None:
        overrides["runs"] = args.runs
    return resolve_config(values, overrides)


def _gaussian_spec(cfg: ExperimentConfig) -> GaussianMetaSpec:
    if cfg.data_preset not in GAUSSIAN_PRESETS:
        known = ", ".join(sorted(GAUSSIAN_PRESETS))
        raise ConfigError(f"unknown data preset {cfg.data_preset!r} (known: {known})")
    base = GAUSSIAN_PRESETS[cfg.data_preset]
    overrides = {
        name: getattr(cfg, name)
        for name in (
            "dim",
            "train_distributions",
            "test_distributions",
            "samples_per_distribution",
            "mean_scale",
            "within_scale",
        )
        if getattr(cfg, name) is not None
    }
    if overrides:
        base = GaussianMetaSpec(
            **{
                **{
                    "dim": base.dim,
                    "train_distributions": base.train_distributions,
                    "test_distributions": base.test_distributions,
                    "samples_per_distribution": base.samples_per_distribution,
                    "mean_scale": base.mean_scale,
                    "within_scale": base.within_scale,
                },
                **overrides,
            }
        )
    return base


def build_metasets(cfg: ExperimentConfig):
    """Materialize (train, test) meta-sets from the configured source."""
    if cfg.data_csv:
        csv_path = Path(cfg.data_csv)
        train_bins = cfg.train_bins
        sidecar = csv_path.with_suffix(".json")
        if train_bins is None and sidecar.exists():
            train_bins = len(json.loads(sidecar.read_text())["bins"]["train"])
        source = TabularSource(
            path=str(csv_path),
            label_col=cfg.label_col,
            timestamp_col=cfg.timestamp_col or None,
            train_bins=train_bins,
            delimiter=cfg.delimiter,
        )
        train_meta, test_meta = load_tabular(source)
    else:
        train_meta, test_meta = generate_gaussian_metaset(_gaussian_spec(cfg), cfg.data_seed)
    if cfg.permutations > 0:
        train_meta = augment_with_permutations(train_meta, cfg.permutations, cfg.data_seed + 1)
    return train_meta, test_meta


def train_config_from(cfg: ExperimentConfig, **replacements) -> TrainConfig:
    base = dict(
        iterations=cfg.iterations,
        tasks_per_iter=cfg.tasks_per_iter,
        batch_size=cfg.batch_size,
        pi=cfg.pi,
        learning_rate=cfg.learning_rate,
        seed=cfg.seed,
        head=cfg.head,
        hidden=tuple(cfg.hidden),
        latent_dim=cfg.latent_dim,
        input_bn=cfg.input_bn,
        bn_mode=cfg.bn_mode,
        bn_mask=tuple(bool(m) for m in cfg.bn_mask) if cfg.bn_mask is not None else None,
        loss=cfg.loss,
        center_frozen=cfg.center_frozen,
    )
    base.update(replacements)
    return TrainConfig(**base)


def _append_record(path, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _record_skeleton(kind: str, cfg: ExperimentConfig) -> dict:
    return {
        "record": kind,
        "version": __version__,
        "config": cfg.as_dict(),
        "config_hash": cfg.hash(),
    }


def _print_table(headers: list[str], rows: list[list]) -> None:
    cells = [headers] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    for i, row in enumerate(cells):
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        if i == 0:
            print("  ".join("-" * w for w in widths))


def _fmt_auc(mean: float, std: float) -> str:
    return f"{100 * mean:.1f}+-{100 * std:.1f}"


# ----- subcommands -------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.preset not in GAUSSIAN_PRESETS:
        known = ", ".join(sorted(GAUSSIAN_PRESETS))
        raise ConfigError(f"unknown preset {args.preset!r} (known: {known})")
    spec = GAUSSIAN_PRESETS[args.preset]
    train_meta, test_meta = generate_gaussian_metaset(spec, args.seed)
    csv_path, json_path = save_metaset_csv(train_meta, test_meta, args.out, seed=args.seed)
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train_meta, _ = build_metasets(cfg)
    started = time.perf_counter()
    model, report = train(train_meta, train_config_from(cfg))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    record = _record_skeleton("train", cfg)
    record.update(
        {
            "seed": cfg.seed,
            "final_loss": report.final_loss,
            "loss_curve": report.loss_curve,
            "diverged_iterations": report.diverged_iterations,
            "wall_clock_s": time.perf_counter() - started,
            "checkpoint": str(out),
        }
    )
    report_path = out.with_suffix(".report.json")
    with open(report_path, "w") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"trained {cfg.iterations} iterations, final loss {report.final_loss:.6f}")
    print(f"wrote {out}")
    print(f"wrote {report_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    model = load_checkpoint(args.model)
    train_meta, test_meta = build_metasets(cfg)
    if test_meta is None:
        raise ConfigError("the configured data source has no test side")
    started = time.perf_counter()
    report = evaluate(
        model,
        test_meta,
        ratios=cfg.ratios,
        runs=cfg.runs,
        seed=cfg.eval_seed,
        batch_size=cfg.eval_batch_size,
        batches_per_run=cfg.eval_batches,
        workers=_workers(),
    )
    # shift diagnostic: train-mixture vs unseen-test gap, in latent space and raw
    kw = dict(n_batches=20, batch_size=cfg.eval_batch_size, seed=cfg.eval_seed)
    lat_train = collect_latents(model, train_meta, 1.0 - cfg.pi, source="train-mix", **kw)
    lat_test = collect_latents(model, test_meta, cfg.ratios[0], source="test", **kw)
    raw_train = collect_latents(model, train_meta, 1.0 - cfg.pi, raw=True, **kw)
    raw_test = collect_latents(model, test_meta, cfg.ratios[0], raw=True, **kw)
    report.tv_estimate = tv_distance_diagnostic(lat_train, lat_test)
    tv_raw = tv_distance_diagnostic(raw_train, raw_test)

    record = _record_skeleton("eval", cfg)
    record.update(
        {
            "seed": cfg.eval_seed,
            "model": str(args.model),
            "auroc": {str(r): list(ms) for r, ms in report.per_ratio.items()},
            "auroc_mean": report.auroc,
            "cells": {str(r): c for r, c in report.cells.items()},
            "diagnostics": {"tv_latent": report.tv_estimate, "tv_raw": tv_raw},
            "n_scored": report.n_scored,
            "wall_clock_s": time.perf_counter() - started,
        }
    )
    if args.out:
        _append_record(args.out, record)
    _print_table(
        ["anomaly_ratio", "auroc"],
        [[f"{r:g}", _fmt_auc(m, s)] for r, (m, s) in report.per_ratio.items()],
    )
    print(f"shift diagnostic: tv latent {report.tv_estimate:.3f} vs raw {tv_raw:.3f}")
    if args.out:
        print(f"appended record to {args.out}")
    return 0


ABLATE_SUITES = ("bn-mode", "batch-size", "num-classes", "pi", "loss-variant", "bn-position")


def _ablate_cells(suite: str, cfg: ExperimentConfig):
    """Yield (cell description, TrainConfig replacements) for a suite."""
    if suite == "bn-mode":
        for mode in ("batch", "frozen", "identity"):
            yield {"bn_mode": mode}, {"bn_mode": mode}
    elif suite == "pi":
        for pi in (0.6, 0.8, 0.9, 0.95, 0.99):
            yield {"pi": pi}, {"pi": pi}
    elif suite == "loss-variant":
        # the plain one-class objective is trained on uncontaminated tasks
        yield {"loss": "meta_oe", "pi": cfg.pi}, {"loss": "meta_oe"}
        yield {"loss": "one_class", "pi": 1.0}, {"loss": "one_class", "pi": 1.0}
    elif suite == "bn-position":
        n = int(cfg.input_bn) + len(cfg.hidden) + (1 if cfg.head == "dsvdd" else 0)
        for pos in range(n):
            mask = tuple(i == pos for i in range(n))
            yield {"bn_position": pos, "bn_mask": list(map(int, mask))}, {"bn_mask": mask}
        yield {"bn_position": "all", "bn_mask": [1] * n}, {"bn_mask": (True,) * n}
    else:
        raise ConfigError(f"unknown suite {suite!r}")


def cmd_ablate(args) -> int:
    if args.suite not in ABLATE_SUITES:
        raise ConfigError(
            f"unknown suite {args.suite!r} (known: {', '.join(ABLATE_SUITES)})"
        )
    cfg = _load_config(args)
    workers = _workers()
    rows = []
    records = []

    def eval_model(model, test_meta, ratios):
        return evaluate(
            model,
            test_meta,
            ratios=ratios,
            runs=cfg.runs,
            seed=cfg.eval_seed,
            batch_size=cfg.eval_batch_size,
            batches_per_run=cfg.eval_batches,
            workers=workers,
        )

    if args.suite == "batch-size":
        # single trained model, swept over scoring batch sizes; tiny batches
        # hold exactly one anomaly, larger ones a 10% admixture
        train_meta, test_meta = build_metasets(cfg)
        model, _ = train(train_meta, train_config_from(cfg))
        for b in (3, 6, 11, 16, 20, 40, 60):
            started = time.perf_counter()
            ratio = 1.0 / b if b < 20 else 0.1
            report = evaluate(
                model,
                test_meta,
                ratios=[ratio],
                runs=cfg.runs,
                seed=cfg.eval_seed,
                batch_size=b,
                batches_per_run=cfg.eval_batches,
                workers=workers,
            )
            mean, std = report.per_ratio[ratio]
            cell = {"batch_size": b, "anomaly_ratio": ratio}
            rows.append([b, f"{ratio:.3f}", _fmt_auc(mean, std)])
            records.append((cell, mean, std, time.perf_counter() - started))
        headers = ["batch_size", "anomaly_ratio", "auroc"]
    elif args.suite == "num-classes":
        headers = ["train_classes", "auroc"]
        for k in (1, 2, 4, 8):
            started = time.perf_counter()
            spec = _gaussian_spec(cfg)
            spec = GaussianMetaSpec(
                dim=spec.dim,
                train_distributions=max(k, 2),
                test_distributions=spec.test_distributions,
                samples_per_distribution=spec.samples_per_distribution,
                mean_scale=spec.mean_scale,
                within_scale=spec.within_scale,
            )
            train_meta, test_meta = generate_gaussian_metaset(spec, cfg.data_seed)
            replacements = {}
            if k == 1:
                # a single pool has an empty complement; train uncontaminated
                train_meta = type(train_meta)(
                    pools=train_meta.pools[:1], ids=train_meta.ids[:1]
                )
                replacements["pi"] = 1.0
            model, _ = train(train_meta, train_config_from(cfg, **replacements))
            report = eval_model(model, test_meta, [0.1])
            mean, std = report.per_ratio[0.1]
            cell = {"train_classes": k, "pi": replacements.get("pi", cfg.pi)}
            rows.append([k, _fmt_auc(mean, std)])
            records.append((cell, mean, std, time.perf_counter() - started))
    else:
        train_meta, test_meta = build_metasets(cfg)
        headers = ["cell", "auroc"]
        for cell, replacements in _ablate_cells(args.suite, cfg):
            started = time.perf_counter()
            model, _ = train(train_meta, train_config_from(cfg, **replacements))
            report = eval_model(model, test_meta, [0.1])
            mean, std = report.per_ratio[0.1]
            rows.append([json.dumps(cell, sort_keys=True), _fmt_auc(mean, std)])
            records.append((cell, mean, std, time.perf_counter() - started))

    for cell, mean, std, wall in records:
        record = _record_skeleton("ablate-cell", cfg)
        record.update(
            {
                "suite": args.suite,
                "cell": cell,
                "seed": cfg.seed,
                "auroc_mean": mean,
                "auroc_std": std,
                "wall_clock_s": wall,
            }
        )
        if args.out:
            _append_record(args.out, record)
    print(f"suite: {args.suite}")
    _print_table(headers, rows)
    if args.out:
        print(f"appended {len(records)} records to {args.out}")
    return 0


# ----- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="batchad",
        description="Zero-shot batch-level anomaly detection experiments",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic meta-set as CSV + sidecar")
    p.add_argument("--preset", default="gaussian8")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="meta-train a detector")
    p.add_argument("--config", help="flat key-value config file")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on unseen pools")
    p.add_argument("--config", help="flat key-value config file")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int, help="override the evaluation seed")
    p.add_argument("--ratios", help="comma-separated anomaly ratios, e.g. 0.01,0.1")
    p.add_argument("--runs", type=int, help="independent test runs per cell")
    p.add_argument("--out", help="JSON-lines results file (appended)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a predefined study grid")
    p.add_argument("--suite", required=True, help="|".join(ABLATE_SUITES))
    p.add_argument("--config", help="flat key-value config file")
    p.add_argument("--seed", type=int, help="override the evaluation seed")
    p.add_argument("--runs", type=int, help="independent test runs per cell")
    p.add_argument("--out", help="JSON-lines results file (appended)")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
