"""Command-line interface.

Commands: train, eval, sweep, depth-study, generate, bench. Shared flags:
--dataset, --out, --config, --seed, --overwrite, --jobs, --format. Training
flags mirror TrainConfig and override same-named keys from --config JSON.
Exit codes: 0 success, 1 usage/validation, 2 runtime failure (diverged loss).
DMBA_LOG={error,info,debug} sets verbosity.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from .data import SplitSpec, generate_sbm, load_dataset, make_splits, save_dataset
from .errors import TrainingDivergedError, ValidationError
from .experiments import bench, depth_study, sweep
from .model import TrainConfig, evaluate, init_model, train

log = logging.getLogger("dmbagcn")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

_TRAIN_FLAGS = [
    ("depth", int), ("d_model", int), ("d_state", int), ("alpha", float),
    ("beta", float), ("lr", float), ("weight_decay", float), ("epochs", int),
    ("patience", int), ("dropout", float), ("seed", int),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are exit code 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("DMBA_LOG", "error"),
                                         logging.ERROR)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _atomic_write(path: str, content: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="\n") as f:
        f.write(content)
    os.replace(tmp, path)


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _guard_overwrite(path: str, overwrite: bool) -> None:
    if os.path.exists(path) and not overwrite:
        raise ValidationError(f"{path} exists; pass --overwrite to replace")


def _build_config(args, defaults: TrainConfig | None = None) -> TrainConfig:
    """defaults < --config file < explicit flags."""
    values = asdict(defaults or TrainConfig())
    if args.config:
        with open(args.config) as f:
            file_cfg = json.load(f)
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(file_cfg) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_cfg)
    for name, _ in _TRAIN_FLAGS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return TrainConfig(**values)


def _load_graph(args):
    if not args.dataset:
        raise ValidationError("--dataset is required")
    split_seed = getattr(args, "seed", None)
    graph = load_dataset(args.dataset, split_seed=split_seed)
    if not graph.train_mask.any() and graph.n_nodes >= 10:
        seed = split_seed if split_seed is not None else 0
        masks = make_splits(graph, SplitSpec(seed=seed))
        graph.train_mask = masks["train"]
        graph.val_mask = masks["val"]
        graph.test_mask = masks["test"]
        log.info("dataset had no split for seed %s; generated 60/20/20", seed)
    return graph


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--dataset", help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file (keys = train flags)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--overwrite", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="stdout summary format")


def _add_train_flags(p: argparse.ArgumentParser):
    for name, typ in _TRAIN_FLAGS:
        if name == "seed":
            continue  # already a common flag
        p.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None,
                       dest=name)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmbagcn",
                     description="Dual selective-state-space GCN toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model, write report + weights")
    _add_common(p_train)
    _add_train_flags(p_train)

    p_eval = sub.add_parser("eval", help="score saved weights on a dataset")
    _add_common(p_eval)
    p_eval.add_argument("--model-dir", required=True,
                        help="directory holding model.npz + model_config.json")

    p_sweep = sub.add_parser("sweep", help="alpha/beta grid search")
    _add_common(p_sweep)
    _add_train_flags(p_sweep)
    p_sweep.add_argument("--alphas", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p_sweep.add_argument("--betas", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")

    p_depth = sub.add_parser("depth-study", help="accuracy/metric per depth")
    _add_common(p_depth)
    _add_train_flags(p_depth)
    p_depth.add_argument("--depths", default="2,4,8,16,32")

    p_gen = sub.add_parser("generate", help="write a synthetic block-model dataset")
    _add_common(p_gen)
    p_gen.add_argument("--n", type=int, default=200)
    p_gen.add_argument("--blocks", type=int, default=2)
    p_gen.add_argument("--p-in", type=float, default=0.5, dest="p_in")
    p_gen.add_argument("--p-out", type=float, default=0.02, dest="p_out")
    p_gen.add_argument("--feat-dim", type=int, default=8, dest="feat_dim")
    p_gen.add_argument("--sigma", type=float, default=0.5)
    p_gen.add_argument("--regular", action="store_true",
                       help="exact-degree block model")

    p_bench = sub.add_parser("bench", help="scan vs dense-attention scaling")
    _add_common(p_bench)
    p_bench.add_argument("--sizes", default="1024,2048,4096,8192,16384,32768,65536")
    p_bench.add_argument("--d-model", type=int, default=16, dest="d_model")
    p_bench.add_argument("--d-state", type=int, default=16, dest="d_state")

    return parser


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _summary(args, payload: dict) -> None:
    if args.format == "json":
        print(json.dumps(payload, sort_keys=True))
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(payload.keys())
        writer.writerow([_fmt(v) for v in payload.values()])


def cmd_train(args) -> int:
    config = _build_config(args)
    graph = _load_graph(args)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.json")
    _guard_overwrite(report_path, args.overwrite)

    model = init_model(graph.n_features, graph.n_classes, config)
    try:
        report = train(model, graph, config)
    except TrainingDivergedError as e:
        sys.stderr.write(f"error: {e}\n")
        if e.partial_report is not None:
            _atomic_write(report_path, e.partial_report.to_json())
        return EXIT_RUNTIME

    _atomic_write(report_path, report.to_json())
    curves = _csv_text(
        ["epoch", "train_loss", "val_acc"],
        [[rec.epoch, _fmt(rec.train_loss), _fmt(rec.val_acc)]
         for rec in report.curves],
    )
    _atomic_write(os.path.join(args.out, "curves.csv"), curves)
    _atomic_write(os.path.join(args.out, "timing.json"),
                  json.dumps({"wall_clock_sec": report.wall_clock_sec},
                             sort_keys=True) + "\n")
    np.savez(os.path.join(args.out, "model.npz"), **model.state_dict())
    _atomic_write(
        os.path.join(args.out, "model_config.json"),
        json.dumps({"config": asdict(config), "n_features": graph.n_features,
                    "n_classes": graph.n_classes}, sort_keys=True, indent=2)
        + "\n",
    )
    _summary(args, {"test_accuracy": report.test_accuracy,
                    "best_epoch": report.best_epoch,
                    "epochs_run": report.epochs_run})
    return EXIT_OK


def cmd_eval(args) -> int:
    with open(os.path.join(args.model_dir, "model_config.json")) as f:
        saved = json.load(f)
    config = TrainConfig(**saved["config"])
    graph = _load_graph(args)
    if graph.n_features != saved["n_features"]:
        raise ValidationError("dataset feature width disagrees with saved model")
    model = init_model(saved["n_features"], saved["n_classes"], config)
    state = dict(np.load(os.path.join(args.model_dir, "model.npz")))
    model.load_state_dict(state)
    from .graph import normalize
    from .model import forward

    _, logits = forward(model, graph, normalize(graph), training=False)
    result = {}
    for part in ("train", "val", "test"):
        mask = getattr(graph, f"{part}_mask")
        result[f"{part}_accuracy"] = (
            evaluate(model, graph, mask, logits=logits.data) if mask.any() else None
        )
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, f"eval.{args.format}")
    _guard_overwrite(out_path, args.overwrite)
    if args.format == "json":
        _atomic_write(out_path, json.dumps(result, sort_keys=True, indent=2) + "\n")
    else:
        _atomic_write(out_path, _csv_text(list(result.keys()),
                                          [[_fmt(v) for v in result.values()]]))
    _summary(args, result)
    return EXIT_OK


def cmd_sweep(args) -> int:
    alphas, betas = _float_list(args.alphas), _float_list(args.betas)
    for v in alphas + betas:
        if not 0.0 < v < 1.0:
            raise ValidationError(f"grid values must lie in (0,1), got {v}")
    config = _build_config(args)
    graph = _load_graph(args)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "sweep.csv")
    _guard_overwrite(out_path, args.overwrite)

    if args.jobs > 1:
        cells = _parallel_cells(args, config, alphas, betas, mode="sweep")
    else:
        cells = sweep(graph, alphas, betas, config)
    rows = [[c.alpha, c.beta, _fmt(c.test_accuracy)] for c in cells]
    _atomic_write(out_path, _csv_text(["alpha", "beta", "test_acc"], rows))
    scored = [c for c in cells if c.test_accuracy is not None]
    best = max(scored, key=lambda c: c.test_accuracy) if scored else None
    _summary(args, {
        "cells": len(cells),
        "best_alpha": best.alpha if best else None,
        "best_beta": best.beta if best else None,
        "best_test_accuracy": best.test_accuracy if best else None,
    })
    return EXIT_OK


def cmd_depth_study(args) -> int:
    depths = _int_list(args.depths)
    if not depths:
        raise ValidationError("--depths must list at least one depth")
    config = _build_config(args)
    graph = _load_graph(args)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "depth_study.csv")
    _guard_overwrite(out_path, args.overwrite)

    if args.jobs > 1:
        rows_data = _parallel_cells(args, config, depths, None, mode="depth")
    else:
        rows_data = depth_study(graph, depths, config)
    rows = [[r.depth, _fmt(r.test_accuracy), _fmt(r.oversmooth_model),
             _fmt(r.oversmooth_plain), _fmt(r.baseline_accuracy)]
            for r in rows_data]
    _atomic_write(out_path, _csv_text(
        ["depth", "test_acc", "oversmooth_model", "oversmooth_plain",
         "baseline_acc"], rows))
    ok = [r for r in rows_data if r.test_accuracy is not None]
    _summary(args, {"depths": len(rows_data), "succeeded": len(ok)})
    return EXIT_OK if ok else EXIT_RUNTIME


def _parallel_cells(args, config, first, second, mode: str):
    """Worker-pool execution for sweep/depth cells; each worker reloads the
    dataset so no state is shared."""
    from concurrent.futures import ProcessPoolExecutor

    jobs = []
    if mode == "sweep":
        jobs = [(args.dataset, args.seed, asdict(config), "sweep", a, b)
                for a in first for b in second]
    else:
        jobs = [(args.dataset, args.seed, asdict(config), "depth", d, None)
                for d in first]
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        return list(pool.map(_run_remote_cell, jobs))


def _run_remote_cell(job):
    dataset_dir, seed, config_dict, mode, a, b = job
    graph = load_dataset(dataset_dir, split_seed=seed)
    if not graph.train_mask.any():
        masks = make_splits(graph, SplitSpec(seed=seed if seed is not None else 0))
        graph.train_mask = masks["train"]
        graph.val_mask = masks["val"]
        graph.test_mask = masks["test"]
    config = TrainConfig(**config_dict)
    if mode == "sweep":
        return sweep(graph, [a], [b], config)[0]
    return depth_study(graph, [a], config)[0]


def cmd_generate(args) -> int:
    seed = args.seed if args.seed is not None else 0
    graph = generate_sbm(args.n, args.blocks, args.p_in, args.p_out,
                         feat_dim=args.feat_dim, feat_sigma=args.sigma,
                         seed=seed, regular=args.regular)
    masks = make_splits(graph, SplitSpec(seed=seed))
    graph.train_mask = masks["train"]
    graph.val_mask = masks["val"]
    graph.test_mask = masks["test"]
    manifest = save_dataset(graph, args.out, split_seed=seed,
                            overwrite=args.overwrite)
    _summary(args, {"n_nodes": manifest["n_nodes"], "n_edges": manifest["n_edges"],
                    "out": args.out})
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = _int_list(args.sizes)
    if not sizes:
        raise ValidationError("--sizes must list at least one size")
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "bench.csv")
    _guard_overwrite(out_path, args.overwrite)
    rows_data = bench(sizes, d_model=args.d_model, d_state=args.d_state,
                      seed=args.seed if args.seed is not None else 0)
    rows = [[r.n_nodes, _fmt(r.gcamba_ms), _fmt(r.dense_attention_ms),
             _fmt(r.peak_mem_estimate_mb)] for r in rows_data]
    _atomic_write(out_path, _csv_text(
        ["n_nodes", "gcamba_ms", "dense_attention_ms", "peak_mem_estimate_mb"],
        rows))
    _summary(args, {"sizes": len(rows_data)})
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "depth-study": cmd_depth_study,
    "generate": cmd_generate,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, FileNotFoundError, ValueError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USAGE
    except TrainingDivergedError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
