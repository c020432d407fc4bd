"""Run documents on disk: ``runs/<run_id>.json`` plus an append-only ``index.jsonl``."""

from __future__ import annotations

import json
import os
from pathlib import Path

from malcl.errors import FormatError
from malcl.harness.runner import SCHEMA_VERSION, RunResult

RUNS_DIR = "runs"
INDEX_FILE = "index.jsonl"


def run_path(out_dir, run_id: str) -> Path:
    return Path(out_dir) / RUNS_DIR / f"{run_id}.json"


def dumps_run(result: RunResult) -> str:
    return json.dumps(result.to_dict(), indent=1, sort_keys=True, allow_nan=True) + "\n"


def read_index(out_dir) -> list[dict]:
    path = Path(out_dir) / INDEX_FILE
    if not path.exists():
        return []
    records = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{n}: corrupt index record: {exc}") from None
    return records


def has_run(out_dir, run_id: str) -> bool:
    return run_path(out_dir, run_id).exists()


def persist_run(result: RunResult, out_dir) -> Path:
    """Write the run document atomically and add it to the index once."""
    path = run_path(out_dir, result.run_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(dumps_run(result))
    os.replace(tmp, path)
    if result.run_id not in {r.get("run_id") for r in read_index(out_dir)}:
        record = {
            "run_id": result.run_id, "config_hash": result.config_hash, "seed": result.seed,
            "strategy": result.strategy, "label": result.label, "dataset": result.dataset,
            "scenario": result.scenario, "status": result.status,
            "path": str(path.relative_to(Path(out_dir))),
        }
        with open(Path(out_dir) / INDEX_FILE, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def load_run(path, run_id: str | None = None) -> RunResult:
    """Load a run document from its file, or from ``(out_dir, run_id)``."""
    path = run_path(path, run_id) if run_id is not None else Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise FormatError(f"{path}: cannot read run document: {exc}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt run document: {exc}") from None
    if not isinstance(data, dict):
        raise FormatError(f"{path}: run document is not an object")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported schema_version {data.get('schema_version')!r}")
    try:
        return RunResult.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed run document: {exc}") from None


def load_runs(out_dir) -> list[RunResult]:
    """Every run document under ``out_dir``, in index order (then any unindexed files)."""
    out_dir = Path(out_dir)
    seen, results = set(), []
    for rec in read_index(out_dir):
        if rec["run_id"] not in seen:
            seen.add(rec["run_id"])
            results.append(load_run(out_dir / rec["path"]))
    for path in sorted((out_dir / RUNS_DIR).glob("*.json")) if (out_dir / RUNS_DIR).exists() else []:
        if path.stem not in seen:
            seen.add(path.stem)
            results.append(load_run(path))
    return results
