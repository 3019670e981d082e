"""Command-line workbench wiring the pipeline stages together.

Subcommands mirror the experiment lifecycle: gen-data writes a dataset
cache, train fits a model variant and checkpoints it, certify emits one
record per test point, evaluate turns record files into summary tables and
a curve plot, and sweep expands a parameter grid into child runs. Every
command validates its config before doing work, writes all artifacts under
--out, and drops a manifest naming its inputs and outputs with hashes.

Exit codes: 0 success, 2 validation/config error, 3 runtime or numeric
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import nets
from .certify import certify_dataset, read_records, write_records
from .config import RunConfig, load_config, parse_config, scm_spec_from_config
from .data import (EnvDataset, load_dataset, make_cmnist, make_scm, read_idx,
                   save_dataset, split)
from .errors import ConfigError
from .evaluation import (VARIANT_SPECS, RadiusGrid, build_variant_model,
                         mean_curves, summarize, write_curves, write_summary)
from .plots import render_curves
from .rng import KEY_DATA, stream
from .training import train, write_report

DATA_FILE = "data.bin"
CHECKPOINT_FILE = "checkpoint.bin"


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir, command: str, cfg: RunConfig,
                    inputs: list[str], artifacts: list[str]) -> None:
    manifest = {
        "schema_version": 1,
        "command": command,
        "config_sha256": cfg.sha256,
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
        "artifacts": {os.path.basename(p): _sha256(p) for p in artifacts},
    }
    path = os.path.join(out_dir, f"manifest-{command}.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.override_seed(args.seed)
    return cfg


def build_dataset(cfg: RunConfig) -> EnvDataset:
    ds = cfg.dataset
    rng = stream(ds.seed, KEY_DATA, 1)
    if ds.generator == "scm":
        return make_scm(scm_spec_from_config(ds), ds.n_per_env, rng)
    images = read_idx(ds.images)
    labels = read_idx(ds.labels)
    return make_cmnist(images, labels, ds.strengths, ds.label_noise, rng)


def realized_strengths(cfg: RunConfig, dataset: EnvDataset) -> list[float]:
    """Empirical alignment between the spurious signal and the labels."""
    out = []
    if cfg.dataset.generator == "scm":
        spec = scm_spec_from_config(cfg.dataset)
        for env in dataset.environments:
            concept = env.x @ spec.mixing
            bit = concept[:, spec.causal_dim] > 0
            out.append(float(np.mean(bit == (env.y == 1))))
    else:
        half = dataset.input_dim // 2
        for env in dataset.environments:
            color = env.x[:, half:].sum(axis=1) > 0
            out.append(float(np.mean(color == (env.y == 1))))
    return out


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    dataset = build_dataset(cfg)
    path = os.path.join(args.out, DATA_FILE)
    save_dataset(path, dataset)
    for env, realized in zip(dataset.environments, realized_strengths(cfg, dataset)):
        print(f"env {env.domain_id}: target strength {env.spurious_strength:g}, "
              f"realized {realized:.4f}, {len(env.y)} examples")
    _write_manifest(args.out, "gen-data", cfg, [args.config], [path])
    return 0


def _data_path(args) -> str:
    return args.data if args.data else os.path.join(args.out, DATA_FILE)


def cmd_train(args) -> int:
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    data_path = _data_path(args)
    dataset = load_dataset(data_path)
    train_set, _ = split(dataset, cfg.dataset.train_envs, cfg.dataset.test_env)
    vspec = VARIANT_SPECS[cfg.model.variant]
    model = build_variant_model(cfg.model.variant, dataset.input_dim,
                                cfg.model.widths, dataset.num_classes,
                                cfg.model.group_size, cfg.train.seed)
    tc = replace(cfg.train, variant=vspec.train_variant, aug_space=vspec.aug_space,
                 penalty_weight=0.0 if vspec.zero_penalty else cfg.train.penalty_weight)
    model, report = train(model, train_set, tc)
    ckpt_path = os.path.join(args.out, CHECKPOINT_FILE)
    report_path = os.path.join(args.out, "train_report.csv")
    nets.save_model(ckpt_path, model)
    write_report(report_path, report)
    for env_id, acc in report.final_accuracies.items():
        print(f"train env {env_id}: accuracy {acc:.4f}")
    print(f"encoder Lipschitz bound: {nets.model_lipschitz_bound(model):g}")
    _write_manifest(args.out, "train", cfg, [args.config, data_path],
                    [ckpt_path, report_path])
    return 0


def cmd_certify(args) -> int:
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    data_path = _data_path(args)
    ckpt_path = args.checkpoint if args.checkpoint else os.path.join(args.out, CHECKPOINT_FILE)
    dataset = load_dataset(data_path)
    model = nets.load_model(ckpt_path)
    test_env = dataset.env_by_id(cfg.dataset.test_env)
    records = certify_dataset(model, test_env, cfg.certify,
                              master_seed=cfg.train.seed, subsample=cfg.subsample,
                              workers=args.workers, progress=True)
    records_path = os.path.join(args.out, "records.csv")
    write_records(records_path, records)
    certified = sum(1 for r in records if not r.abstained)
    correct = sum(1 for r in records if r.correct)
    print(f"certified {len(records)} points: {certified} predictions, "
          f"{len(records) - certified} abstentions, {correct} certified correct")
    _write_manifest(args.out, "certify", cfg,
                    [args.config, data_path, ckpt_path], [records_path])
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    grid = cfg.eval.grid or RadiusGrid.default()
    summaries = []
    for path in args.records:
        records = read_records(path)
        label = os.path.splitext(os.path.basename(path))[0]
        summaries.append(summarize(records, grid, label, cfg.certify.sigma,
                                   cfg.train.penalty_weight, cfg.train.seed))
    summary_path = os.path.join(args.out, "summary.csv")
    curve_path = os.path.join(args.out, "curve.csv")
    svg_path = os.path.join(args.out, "curve.svg")
    write_summary(summary_path, summaries, grid)
    curves = mean_curves(summaries, grid)
    write_curves(curve_path, curves)
    render_curves(svg_path, {name: (grid.radii, [vals[r] for r in grid.radii])
                             for name, vals in curves.items()})
    for s in summaries:
        print(f"{s.variant}: acr {s.acr:.4f} (grid approximation {s.acr_grid:.4f}), "
              f"clean certified accuracy {s.clean_accuracy:.4f}, "
              f"abstain rate {s.abstain_rate:.4f}")
    _write_manifest(args.out, "evaluate", cfg, [args.config] + list(args.records),
                    [summary_path, curve_path, svg_path])
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)  # validates the base config up front
    with open(args.config, "rb") as fh:
        base_doc = json.loads(fh.read().decode("utf-8"))
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {args.values!r}: {exc}") from exc
    if not values:
        raise ConfigError("sweep needs at least one value")
    os.makedirs(args.out, exist_ok=True)
    all_rows = []
    grid = cfg.eval.grid or RadiusGrid.default()
    for value in values:
        doc = json.loads(json.dumps(base_doc))
        if args.param == "lambda":
            doc.setdefault("train", {})["lambda"] = value
        else:
            doc.setdefault("certify", {})["sigma"] = value
            doc.setdefault("train", {})["sigma_train"] = value
        child_bytes = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        child_cfg = parse_config(doc, sha256=hashlib.sha256(child_bytes).hexdigest())
        if args.seed is not None:
            child_cfg.override_seed(args.seed)
        child_out = os.path.join(args.out, f"{args.param}-{value:g}")
        os.makedirs(child_out, exist_ok=True)
        child_config_path = os.path.join(child_out, "config.json")
        with open(child_config_path, "wb") as fh:
            fh.write(child_bytes + b"\n")
        print(f"sweep {args.param}={value:g} -> {child_out}")
        dataset = build_dataset(child_cfg)
        data_path = os.path.join(child_out, DATA_FILE)
        save_dataset(data_path, dataset)
        train_set, _ = split(dataset, child_cfg.dataset.train_envs,
                             child_cfg.dataset.test_env)
        vspec = VARIANT_SPECS[child_cfg.model.variant]
        model = build_variant_model(child_cfg.model.variant, dataset.input_dim,
                                    child_cfg.model.widths, dataset.num_classes,
                                    child_cfg.model.group_size, child_cfg.train.seed)
        tc = replace(child_cfg.train, variant=vspec.train_variant,
                     aug_space=vspec.aug_space,
                     penalty_weight=0.0 if vspec.zero_penalty
                     else child_cfg.train.penalty_weight)
        model, report = train(model, train_set, tc)
        nets.save_model(os.path.join(child_out, CHECKPOINT_FILE), model)
        write_report(os.path.join(child_out, "train_report.csv"), report)
        test_env = dataset.env_by_id(child_cfg.dataset.test_env)
        records = certify_dataset(model, test_env, child_cfg.certify,
                                  master_seed=child_cfg.train.seed,
                                  subsample=child_cfg.subsample,
                                  workers=args.workers, progress=True)
        records_path = os.path.join(child_out, "records.csv")
        write_records(records_path, records)
        summary = summarize(records, grid, f"{args.param}={value:g}",
                            child_cfg.certify.sigma, tc.penalty_weight,
                            child_cfg.train.seed)
        all_rows.append(summary)
        write_summary(os.path.join(child_out, "summary.csv"), [summary], grid)
    sweep_path = os.path.join(args.out, "sweep_summary.csv")
    write_summary(sweep_path, all_rows, grid)
    curves = mean_curves(all_rows, grid)
    write_curves(os.path.join(args.out, "sweep_curve.csv"), curves)
    render_curves(os.path.join(args.out, "sweep_curve.svg"),
                  {name: (grid.radii, [vals[r] for r in grid.radii])
                   for name, vals in curves.items()})
    _write_manifest(args.out, "sweep", cfg, [args.config],
                    [sweep_path, os.path.join(args.out, "sweep_curve.csv"),
                     os.path.join(args.out, "sweep_curve.svg")])
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crosscert",
        description="Train, certify, and evaluate smoothing-certified "
                    "cross-domain classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers=False, data=False, checkpoint=False):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override every config seed")
        if workers:
            p.add_argument("--workers", type=int, default=1,
                           help="parallel certification workers")
        if data:
            p.add_argument("--data", default=None,
                           help=f"dataset cache (default <out>/{DATA_FILE})")
        if checkpoint:
            p.add_argument("--checkpoint", default=None,
                           help=f"model checkpoint (default <out>/{CHECKPOINT_FILE})")

    common(sub.add_parser("gen-data", help="generate and cache a dataset"))
    common(sub.add_parser("train", help="train a model variant"), data=True)
    common(sub.add_parser("certify", help="certify the held-out environment"),
           workers=True, data=True, checkpoint=True)
    evaluate = sub.add_parser("evaluate", help="summarize record files")
    common(evaluate)
    evaluate.add_argument("records", nargs="+", help="certification record CSVs")
    sweep = sub.add_parser("sweep", help="run the pipeline over a parameter grid")
    common(sweep, workers=True)
    sweep.add_argument("--param", choices=("lambda", "sigma"), required=True)
    sweep.add_argument("--values", required=True,
                       help="comma-separated sweep values")
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "certify": cmd_certify,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
