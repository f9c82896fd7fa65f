"""Desk-scale experiment runners: single runs on synthetic or CSV corpora and
grid sweeps over alignment weight, branch count and patch size.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import Corpus, NormStats, SyntheticShiftSpec, generate_synthetic
from .training import TrainConfig, evaluate, train

__all__ = [
    "prepare_synthetic",
    "normalize_pair",
    "run_once",
    "SweepGrid",
    "sweep",
    "sweep_workers",
]


def normalize_pair(source: Corpus, target: Corpus) -> tuple[Corpus, Corpus]:
    """z-score both domains with statistics fitted on the source only."""
    stats = NormStats.fit(source.X)
    return source.normalized(stats), target.normalized(stats)


def prepare_synthetic(spec: SyntheticShiftSpec) -> tuple[Corpus, Corpus]:
    return normalize_pair(*generate_synthetic(spec))


def run_once(source: Corpus, target: Corpus, cfg: TrainConfig) -> dict:
    """Train with ``target`` unlabeled, then score on labeled source and target."""
    model, report = train(source, target.without_labels(), cfg)
    out = {"source": evaluate(model, source, cfg.score_divisors).summary()}
    if target.labeled:
        out["target"] = evaluate(model, target, cfg.score_divisors).summary()
    out["final_loss"] = report.trace[-1] if report.trace else None
    return out


@dataclass
class SweepGrid:
    lambdas: tuple[float, ...] | None = None
    heads: tuple[int, ...] | None = None
    patches: tuple[int, ...] | None = None
    repeats: int = 1

    def cells(self, base: TrainConfig) -> list[dict]:
        lam = self.lambdas or (None,)
        heads = self.heads or (base.n_branches,)
        patches = self.patches or (base.patch,)
        out = []
        for l, h, p in itertools.product(lam, heads, patches):
            cell = {"heads": h, "patch": p}
            if l is not None:
                cell["lambda"] = l
            out.append(cell)
        if not out:
            raise ValueError("empty sweep grid")
        return out


def _cell_config(base: TrainConfig, cell: dict, repeat: int) -> TrainConfig:
    align = base.alignment
    if "lambda" in cell:
        align = replace(align, lambda_sca=cell["lambda"], lambda_sfa=cell["lambda"])
    return replace(
        base,
        alignment=align,
        n_branches=cell["heads"],
        patch=cell["patch"],
        seed=base.seed + repeat,
    )


def _run_cell(args) -> dict:
    source, target, base, cell, repeats = args
    row = dict(cell)
    metrics: dict[str, list[float]] = {}
    try:
        for r in range(repeats):
            res = run_once(source, target, _cell_config(base, cell, r))
            for k, v in res.get("target", res["source"]).items():
                if k != "n":
                    metrics.setdefault(k, []).append(v)
        for k, vals in metrics.items():
            row[k] = float(np.mean(vals))
            if repeats > 1:
                row[f"{k}_std"] = float(np.std(vals))
        row["error"] = ""
    except Exception as exc:  # a failing cell must not abort the sweep
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep_workers() -> int:
    env = os.environ.get("SEAPP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def sweep(source: Corpus, target: Corpus, base: TrainConfig, grid: SweepGrid, workers=None) -> list[dict]:
    """One row per grid cell (mean over ``grid.repeats`` seeds ``base.seed + r``)."""
    cells = grid.cells(base)
    jobs = [(source, target, base, c, grid.repeats) for c in cells]
    workers = min(workers or sweep_workers(), len(jobs))
    if workers <= 1:
        return [_run_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_cell, jobs))
