"""``jetgen`` command line: gen-data, train, sample, evaluate, floor and ablate.

Exit codes: 0 success, 2 configuration/validation error, 3 numeric failure,
4 I/O or file-format error.  Errors print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from . import ablation
from .config import ConfigError, RunConfig, load_config, with_overrides, write_resolved
from .evalsuite import evaluate, split_halves
from .sampling import generate, matched_labels
from .synthgen import build_corpus, make_dataset, read_dataset, write_dataset
from .trainer import format_log, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _echo(cfg: RunConfig, out: Path, command: str) -> None:
    write_resolved(cfg, out)
    print(json.dumps({"command": command, "seed": cfg.seed, "out": str(out)}), flush=True)


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _out(args, cfg: RunConfig) -> Path:
    return Path(args.out if args.out else cfg.out)


def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = _out(args, cfg)
    _echo(cfg, out, "gen-data")
    splits = ("train", "eval") if args.split == "both" else (args.split,)
    for split in splits:
        spec = cfg.corpus if split == "train" else cfg.eval_corpus()
        path, manifest = build_corpus(spec, out / "data" / f"{split}.jetd")
        print(json.dumps({"split": split, "dataset": str(path), "manifest": str(manifest),
                          "counts": list(spec.counts), "seed": spec.seed}))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out(args, cfg) / "train"
    data_path = Path(args.data) if args.data else _out(args, cfg) / "data" / "train.jetd"
    ds = read_dataset(data_path)
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        cfg = with_overrides(cfg, {"seed": resume.train.seed})
    _echo(cfg, out, "train")
    every = max(1, args.log_every)

    def progress(row):
        if row["step"] % every == 0:
            print(json.dumps({k: (round(v, 6) if isinstance(v, float) else v) for k, v in row.items()}), flush=True)

    result = train(cfg.train_config(), ds, model=cfg.jet_config(), resume=resume, until=args.until,
                   progress=progress)
    save_checkpoint(out / "checkpoint.jetc", result.checkpoint)
    log_path = out / "loss.csv"
    if resume is not None and log_path.exists():
        text = log_path.read_text() + format_log(result.log).split("\n", 1)[1]
    else:
        text = format_log(result.log)
    _write_text(log_path, text)
    print(json.dumps({"checkpoint": str(out / "checkpoint.jetc"), "steps": result.checkpoint.step}))
    return EXIT_OK


def cmd_sample(args, cfg: RunConfig) -> int:
    ck = load_checkpoint(args.checkpoint)
    s = cfg.sample
    count = s.count if args.count is None else args.count
    class_id = s.class_id if args.class_id is None else args.class_id
    seed = s.seed if args.sample_seed is None else args.sample_seed
    if args.match:
        labels = matched_labels(read_dataset(args.match, with_events=False).labels)
    else:
        if not 0 <= class_id < ck.model.num_classes:
            raise ConfigError(f"class must lie in [0, {ck.model.num_classes - 1}], got {class_id}")
        if count < 0:
            raise ConfigError("count must be >= 0")
        labels = np.full(count, class_id, dtype=np.int64)
    flow = ck.train.flow
    if args.guidance is not None:
        flow = replace(flow, guidance_scale=args.guidance)
    if args.ode_steps is not None:
        flow = replace(flow, ode_steps=args.ode_steps)
    out = Path(args.output) if args.output else _out(args, cfg) / "samples" / "generated.jetd"
    _echo(cfg, out.parent, "sample")
    data = generate(ck, labels, seed, flow, use_ema=s.use_ema)
    classes = [c.name for c in cfg.corpus.classes]
    if len(classes) != ck.model.num_classes:
        classes = [f"class{k}" for k in range(ck.model.num_classes)]
    write_dataset(out, make_dataset(data, labels, classes, cfg.corpus.fs, cfg.corpus.scale, seed))
    print(json.dumps({"dataset": str(out), "count": int(labels.size), "seed": seed}))
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    real = read_dataset(args.real)
    gen = read_dataset(args.gen, with_events=False)
    proxy = read_dataset(args.proxy_train, with_events=False) if args.proxy_train else None
    out = Path(args.output) if args.output else _out(args, cfg) / "eval" / "report.json"
    _echo(cfg, out.parent, "evaluate")
    report = evaluate(real, gen, cfg.eval, proxy_train=proxy)
    report.save(out)
    m = report.metrics
    print(json.dumps({"report": str(out), "ts_fid": m.ts_fid, "silhouette": m.silhouette}))
    return EXIT_OK


def cmd_floor(args, cfg: RunConfig) -> int:
    """Real-vs-real floor: metrics between the two class-stratified halves of one real set."""
    real = read_dataset(args.real)
    out = Path(args.output) if args.output else _out(args, cfg) / "eval" / "floor.json"
    _echo(cfg, out.parent, "floor")
    ia, ib = split_halves(real.labels)
    half_a, half_b = real.subset(ia), real.subset(ib)
    report = evaluate(half_a, half_b, replace(cfg.eval, floor=False))
    report.save(out)
    print(json.dumps({"report": str(out), "ts_fid": report.metrics.ts_fid,
                      "drift_w1": report.metrics.drift_w1}))
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    out = Path(args.output) if args.output else _out(args, cfg) / "ablate" / f"{args.grid or 'custom'}.csv"
    if args.grid_file:
        try:
            spec = yaml.safe_load(Path(args.grid_file).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{args.grid_file}: invalid YAML ({exc})") from exc
        if not isinstance(spec, dict) or set(spec) - {"axes"}:
            raise ConfigError("grid file must be a mapping with a single 'axes' key")
        cells = ablation.axes_grid(spec.get("axes") or {})
        name = Path(args.grid_file).stem
    elif args.grid:
        cells = ablation.named_grid(args.grid, cfg)
        name = args.grid
    else:
        raise ConfigError("ablate needs --grid or --grid-file")
    for cell in cells:
        with_overrides(cfg, cell.overrides)  # validate every cell before training any
    seeds = [cfg.seed + i for i in range(args.seeds)]
    _echo(cfg, out.parent, "ablate")

    def progress(row):
        print(json.dumps({k: row.get(k) for k in ("cell", "seed", "status", "ts_fid", "error")}), flush=True)

    rows = ablation.run_grid(cfg, cells, seeds, grid=name, jobs=args.jobs, progress=progress)
    _write_text(out, ablation.rows_to_csv(rows))
    print(json.dumps({"csv": str(out), "cells": len(cells), "rows": len(rows)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults: desk scale)")
    common.add_argument("--seed", type=int, help="model/run seed override")
    common.add_argument("--out", help="output directory override")
    common.add_argument("--jobs", type=int, default=1, help="parallel ablation cells")

    p = argparse.ArgumentParser(prog="jetgen", description="Flow-matching generation of EEG-like signals.",
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="build the synthetic corpus")
    g.add_argument("--split", choices=("train", "eval", "both"), default="both")

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--data", help="training dataset (default <out>/data/train.jetd)")
    t.add_argument("--base", choices=("gaussian", "zero"), help="base distribution override")
    t.add_argument("--steps", type=int, help="cap on total optimizer steps")
    t.add_argument("--until", type=int, help="stop at this global step (for staged runs)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--log-every", type=int, default=100)

    s = sub.add_parser("sample", parents=[common], help="generate segments from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--class", dest="class_id", type=int)
    s.add_argument("--count", type=int)
    s.add_argument("--sample-seed", type=int, help="generation seed (default sample.seed)")
    s.add_argument("--match", help="reproduce the class histogram of this dataset")
    s.add_argument("--guidance", type=float)
    s.add_argument("--ode-steps", type=int)
    s.add_argument("--output", help="output dataset path")

    e = sub.add_parser("evaluate", parents=[common], help="metric report for real vs generated")
    e.add_argument("--real", required=True)
    e.add_argument("--gen", required=True)
    e.add_argument("--proxy-train", help="real training set for the utility proxy")
    e.add_argument("--output")

    f = sub.add_parser("floor", parents=[common], help="real-vs-real floor from one held-out set")
    f.add_argument("--real", required=True)
    f.add_argument("--output")

    a = sub.add_parser("ablate", parents=[common], help="run an ablation grid")
    a.add_argument("--grid", choices=("noise", "constraints", "weights", "patch"))
    a.add_argument("--grid-file", help="YAML {axes: {dotted.key: [values]}}")
    a.add_argument("--seeds", type=int, default=3, help="model seeds per cell")
    a.add_argument("--output")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "sample": cmd_sample, "evaluate": cmd_evaluate,
            "floor": cmd_floor, "ablate": cmd_ablate}


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(json.dumps({"error": kind, "code": code, "message": str(exc).replace("\n", " ")}), file=sys.stderr)
    return code


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "base", None):
        overrides["train.flow.base_mode"] = args.base
    if getattr(args, "steps", None) is not None:
        overrides["train.max_steps"] = args.steps
    return with_overrides(cfg, overrides) if overrides else cfg


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except FloatingPointError as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, "validation", exc)


if __name__ == "__main__":
    sys.exit(main())
