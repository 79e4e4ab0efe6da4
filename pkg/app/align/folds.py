# app/align/folds.py
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

METRIC_SKIP = ("n_test", "config_digest", "fold", "epoch", "best_epoch")


def summarize_folds(reports: Sequence[dict[str, Any]]) -> dict[str, Any]:
    """Mean and population std (ddof=0) of every numeric metric across fold reports."""
    if not reports:
        raise ValueError("no fold reports to summarize")
    keys = [k for k, v in reports[0].items() if k not in METRIC_SKIP and isinstance(v, (int, float))]
    mean = {k: float(np.mean([r[k] for r in reports])) for k in keys}
    std = {k: float(np.std([r[k] for r in reports])) for k in keys}
    return {
        "folds": len(reports),
        "mean": mean,
        "std": std,
        "per_fold": list(reports),
        "config_digest": reports[0].get("config_digest"),
    }


@dataclass(frozen=True)
class FoldJob:
    fold: int
    payload: Any


def run_folds(
    worker: Callable[[FoldJob], dict[str, Any]],
    payloads: Sequence[Any],
    *,
    parallel: bool = False,
    max_workers: int | None = None,
) -> list[dict[str, Any]]:
    """
    Run one job per fold and return the reports ordered by fold index.
    With `parallel`, jobs go to a process pool; `worker` must be a module-level
    function and payloads picklable.
    """
    jobs = [FoldJob(i, p) for i, p in enumerate(payloads)]
    if not parallel or len(jobs) < 2:
        reports = []
        for job in jobs:
            logger.info("fold start fold=%d", job.fold)
            reports.append(worker(job))
        return reports
    with ProcessPoolExecutor(max_workers=max_workers) as ex:
        futures = [ex.submit(worker, job) for job in jobs]
        return [f.result() for f in futures]
