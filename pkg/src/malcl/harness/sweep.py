"""Sweep driver: run every (strategy cell x seed) pair, skipping runs already on disk."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from malcl.harness.config import ExperimentConfig
from malcl.harness.persistence import has_run, persist_run
from malcl.harness.runner import OK, run_experiment

log = logging.getLogger(__name__)


@dataclass
class SweepSummary:
    planned: int = 0
    skipped: int = 0
    completed: list[str] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)


def plan(cells: list[ExperimentConfig], seeds: list[int] | None = None) -> list[tuple[ExperimentConfig, int]]:
    return [(cfg, int(s)) for cfg in cells for s in (cfg.seeds if seeds is None else seeds)]


def _execute(cfg: ExperimentConfig, seed: int, out_dir: str):
    result = run_experiment(cfg, seed)
    persist_run(result, out_dir)
    return result.run_id, result.status, result.error


def run_sweep(cells: list[ExperimentConfig], out_dir, seeds: list[int] | None = None, force: bool = False,
              jobs: int = 1) -> SweepSummary:
    """Runs are independent; with ``jobs > 1`` they go to worker processes."""
    out_dir = str(Path(out_dir))
    summary = SweepSummary()
    todo = []
    for cfg, seed in plan(cells, seeds):
        summary.planned += 1
        if not force and has_run(out_dir, cfg.run_id(seed)):
            summary.skipped += 1
            continue
        todo.append((cfg, seed))

    def record(outcome):
        run_id, status, error = outcome
        if status == OK:
            summary.completed.append(run_id)
        else:
            summary.failed.append(run_id)
            log.error("run %s failed: %s", run_id, error)

    if jobs <= 1:
        for cfg, seed in todo:
            log.info("running %s seed %d", cfg.strategy.name, seed)
            record(_execute(cfg, seed, out_dir))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_execute, cfg, seed, out_dir) for cfg, seed in todo]
            for fut in futures:
                record(fut.result())
    return summary
