"""Ablation grids: each cell trains, generates and evaluates one configuration."""

from __future__ import annotations

import csv
import io
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import RunConfig, with_overrides
from .evalsuite import evaluate
from .sampling import generate, matched_labels
from .synthgen import Dataset, generate_corpus, make_dataset
from .trainer import train

CONSTRAINT_ON = {"cons": 1.0, "tv": 0.1, "corr": 0.1}
WEIGHT_GRID = {"cons": (0.0, 1.0, 3.0), "tv": (0.0, 0.05, 0.1), "corr": (0.0, 0.05, 0.1)}
# patch sizes 50/100/200/400 at T=2000, rescaled to the configured T
PATCH_FRACTIONS = (1 / 40, 1 / 20, 1 / 10, 1 / 5)

METRIC_COLUMNS = (
    "ts_fid", "silhouette", "drift_slope", "drift_d_mu", "drift_d_sigma", "hjorth_activity",
    "hjorth_mobility", "hjorth_complexity", "psd_slope_w1", "envelope_w1", "event_pearson", "event_dtw",
)
COLUMNS = ("grid", "cell", "seed", "overrides", "status", "error", "final_recon", "steps") + METRIC_COLUMNS


@dataclass(frozen=True)
class Cell:
    name: str
    overrides: Dict[str, object]


def noise_grid() -> List[Cell]:
    return [Cell(mode, {"train.flow.base_mode": mode}) for mode in ("gaussian", "zero")]


def _weights_cell(cons: float, tv: float, corr: float) -> Dict[str, object]:
    return {"train.weights.cons": cons, "train.weights.tv": tv, "train.weights.corr": corr}


def constraint_grid() -> List[Cell]:
    """All 8 on/off masks of the three constraints, recon-only first and full last."""
    cells = []
    for k in range(4):
        for mask in itertools.combinations(("cons", "tv", "corr"), k):
            w = {name: (CONSTRAINT_ON[name] if name in mask else 0.0) for name in CONSTRAINT_ON}
            cells.append(Cell("recon" + "".join("+" + m for m in mask), _weights_cell(**w)))
    return cells


def weight_grid() -> List[Cell]:
    cells = []
    for cons, tv, corr in itertools.product(*WEIGHT_GRID.values()):
        cells.append(Cell(f"cons={cons:g},tv={tv:g},corr={corr:g}", _weights_cell(cons, tv, corr)))
    return cells


def patch_grid(samples: int) -> List[Cell]:
    cells = []
    for frac in PATCH_FRACTIONS:
        p = max(1, int(round(samples * frac)))
        cells.append(Cell(f"P={p}", {"model.patch_size": p}))
    return cells


def axes_grid(axes: Dict[str, Sequence]) -> List[Cell]:
    """Cartesian product of dotted-path axes; an empty mapping gives no cells."""
    if not axes:
        return []
    keys = list(axes)
    cells = []
    for values in itertools.product(*(axes[k] for k in keys)):
        ov = dict(zip(keys, values))
        cells.append(Cell(",".join(f"{k.split('.')[-1]}={v}" for k, v in ov.items()), ov))
    return cells


def named_grid(name: str, cfg: RunConfig) -> List[Cell]:
    if name == "noise":
        return noise_grid()
    if name == "constraints":
        return constraint_grid()
    if name == "weights":
        return weight_grid()
    if name == "patch":
        return patch_grid(cfg.corpus.samples)
    raise ValueError(f"unknown grid {name!r}; expected noise, constraints, weights or patch")


def _metric_row(report) -> Dict[str, object]:
    m = report.metrics
    hj = m.hjorth_w1 or {}
    return {
        "ts_fid": m.ts_fid, "silhouette": m.silhouette,
        "drift_slope": m.drift_w1["slope"], "drift_d_mu": m.drift_w1["d_mu"], "drift_d_sigma": m.drift_w1["d_sigma"],
        "hjorth_activity": hj.get("activity"), "hjorth_mobility": hj.get("mobility"),
        "hjorth_complexity": hj.get("complexity"), "psd_slope_w1": m.psd_slope_w1, "envelope_w1": m.envelope_w1,
        "event_pearson": m.event_pearson, "event_dtw": m.event_dtw,
    }


def run_cell(cfg: RunConfig, cell: Cell, seed: int, train_ds: Dataset, eval_ds: Dataset,
             grid: str = "") -> Dict[str, object]:
    """Train, generate (class histogram of ``eval_ds``) and evaluate; failures are recorded, not raised."""
    row: Dict[str, object] = {"grid": grid, "cell": cell.name, "seed": seed,
                              "overrides": json.dumps(cell.overrides, sort_keys=True)}
    try:
        ccfg = with_overrides(cfg, {**cell.overrides, "seed": seed})
        result = train(ccfg.train_config(), train_ds, model=ccfg.jet_config())
        row["steps"] = result.checkpoint.step
        row["final_recon"] = float(np.mean([r["recon"] for r in result.log[-50:]])) if result.log else None
        labels = matched_labels(eval_ds.labels)
        gen = generate(result.checkpoint, labels, seed=ccfg.sample.seed + seed)
        gds = make_dataset(gen, labels, eval_ds.header["classes"], eval_ds.fs, eval_ds.header["scale"])
        report = evaluate(eval_ds, gds, replace(ccfg.eval, floor=False))
        row.update(_metric_row(report))
        row["status"] = "ok"
    except Exception as exc:  # any cell failure is recorded and the grid continues
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _run_cell_job(args):
    return run_cell(*args)


def run_grid(cfg: RunConfig, cells: Sequence[Cell], seeds: Sequence[int], grid: str = "",
             jobs: int = 1, train_ds: Optional[Dataset] = None, eval_ds: Optional[Dataset] = None,
             progress=None) -> List[Dict[str, object]]:
    """Rows in (cell, seed) order; every cell shares the corpus seeds and varies only the model seed."""
    train_ds = generate_corpus(cfg.corpus) if train_ds is None else train_ds
    eval_ds = generate_corpus(cfg.eval_corpus()) if eval_ds is None else eval_ds
    tasks = [(cfg, cell, s, train_ds, eval_ds, grid) for cell in cells for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell_job, tasks))
    else:
        rows = []
        for t in tasks:
            rows.append(run_cell(*t))
            if progress is not None:
                progress(rows[-1])
    return rows


def rows_to_csv(rows: Sequence[Dict[str, object]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n", restval="")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in COLUMNS})
    return buf.getvalue()
