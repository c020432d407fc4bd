"""Summary tables and figures computed from persisted run documents only."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from malcl.data.scenarios import CLASS_IL, SCENARIOS
from malcl.harness.metrics import AggregateResult, aggregate_seeds, closer_to_joint
from malcl.harness.runner import OK, RunResult
from malcl.strategies import FAMILY_ORDER, row_key

log = logging.getLogger(__name__)

FAMILY_NAMES = {
    "baselines": "Baselines",
    "regularization": "Regul.",
    "replay": "Replay",
    "replay_exemplars": "Replay + Exemplars",
    "partial_replay": "Partial replay",
}
SCENARIO_NAMES = {"task_il": "Task-IL", "class_il": "Class-IL", "domain_il": "Domain-IL"}
Column = tuple[str, str]   # (dataset, scenario)


@dataclass
class ReportRow:
    label: str
    strategy: str
    family: str
    order: tuple
    cells: dict[Column, AggregateResult] = field(default_factory=dict)


@dataclass
class ReportTable:
    columns: list[Column]
    rows: list[ReportRow]
    flags: dict[tuple[str, Column], bool]
    flags_enabled: dict[Column, bool]
    warnings: list[str]

    def row(self, label: str) -> ReportRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def _fraction(result: RunResult) -> float:
    return float(result.hyperparameters.get("fraction", 0.0)) if result.strategy == "pjr" else 0.0


def build_report(results: list[RunResult]) -> ReportTable:
    """Aggregate seeds per config and lay cells out by method row and (dataset, scenario) column."""
    warnings = []
    failed = [r for r in results if r.status != OK]
    for r in failed:
        warnings.append(f"run {r.run_id} ({r.label}, seed {r.seed}) failed: {r.error}")
    ok = [r for r in results if r.status == OK]
    if not ok:
        raise ValueError("no completed runs to report")

    groups: dict[str, list[RunResult]] = defaultdict(list)
    for r in ok:
        groups[r.config_hash].append(r)

    rows: dict[str, ReportRow] = {}
    columns: set[Column] = set()
    for runs in groups.values():
        agg = aggregate_seeds(runs)
        col = (agg.dataset, agg.scenario)
        columns.add(col)
        label = agg.label
        if label in rows and col in rows[label].cells:
            # same method with different settings in one column
            label = f"{agg.label} [{agg.config_hash[:6]}]"
        first = runs[0]
        row = rows.setdefault(label, ReportRow(
            label, agg.strategy, agg.family,
            (FAMILY_ORDER.index(agg.family) if agg.family in FAMILY_ORDER else len(FAMILY_ORDER),
             row_key(agg.strategy), _fraction(first), label)))
        row.cells[col] = agg

    ordered_cols = sorted(columns, key=lambda c: (c[0], SCENARIOS.index(c[1]) if c[1] in SCENARIOS else 9))
    ordered_rows = sorted(rows.values(), key=lambda r: r.order)

    flags, enabled = {}, {}
    for col in ordered_cols:
        joint = next((r.cells[col] for r in ordered_rows if r.strategy == "joint" and col in r.cells), None)
        none = next((r.cells[col] for r in ordered_rows if r.strategy == "none" and col in r.cells), None)
        enabled[col] = joint is not None and none is not None
        if not enabled[col]:
            missing = " and ".join(n for n, a in (("Joint", joint), ("None", none)) if a is None)
            warnings.append(f"{col[0]}/{col[1]}: no {missing} runs; closer-to-Joint flags disabled")
            continue
        for r in ordered_rows:
            if col in r.cells:
                flags[(r.label, col)] = closer_to_joint(r.cells[col].mean.mean, joint.mean.mean, none.mean.mean)
    for w in warnings:
        log.warning(w)
    return ReportTable(ordered_cols, ordered_rows, flags, enabled, warnings)


def _header(col: Column) -> str:
    return f"{col[0]} {SCENARIO_NAMES.get(col[1], col[1])}"


def table_cells(table: ReportTable) -> tuple[list[str], list[list[str]]]:
    """Header and body as strings; flagged Mean cells carry a trailing ``*``."""
    header = ["Approach", "Method"]
    for col in table.columns:
        header += [f"{_header(col)} Mean", f"{_header(col)} Min"]
    body, last_family = [], None
    for r in table.rows:
        family = FAMILY_NAMES.get(r.family, r.family)
        line = [family if family != last_family else "", r.label]
        last_family = family
        for col in table.columns:
            agg = r.cells.get(col)
            if agg is None:
                line += ["-", "-"]
                continue
            mark = "*" if table.flags.get((r.label, col)) else ""
            line += [agg.mean.format() + mark, agg.min.format()]
        body.append(line)
    return header, body


def render_text(table: ReportTable) -> str:
    header, body = table_cells(table)
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    fmt = lambda row: "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths), *(fmt(r) for r in body)]
    notes = ["", "* Mean closer to Joint than to None. Spreads below 1.0 point are omitted."]
    notes += [f"warning: {w}" for w in table.warnings]
    return "\n".join(lines + notes) + "\n"


def render_tsv(table: ReportTable) -> str:
    header = ["approach", "method"]
    for d, s in table.columns:
        header += [f"{d}/{s}/mean", f"{d}/{s}/mean_std", f"{d}/{s}/min", f"{d}/{s}/min_std",
                   f"{d}/{s}/n_seeds", f"{d}/{s}/closer_to_joint"]
    lines = ["\t".join(header)]
    for r in table.rows:
        line = [r.family, r.label]
        for col in table.columns:
            agg = r.cells.get(col)
            if agg is None:
                line += [""] * 6
                continue
            std = lambda m: "" if m.std is None else repr(m.std)
            flag = "" if not table.flags_enabled[col] else str(int(table.flags[(r.label, col)]))
            line += [repr(agg.mean.mean), std(agg.mean), repr(agg.min.mean), std(agg.min), str(agg.mean.n), flag]
        lines.append("\t".join(line))
    return "\n".join(lines) + "\n"


# -- figures -------------------------------------------------------------------

ACCURACY, TIME = "accuracy_curves", "time_curves"


def _x_axis(result: RunResult) -> tuple[list[float], str]:
    tasks = result.stream.get("tasks", [])
    n = len(result.per_increment_accuracy)
    if result.scenario == CLASS_IL and tasks:
        return list(np.cumsum([len(t["classes"]) for t in tasks])[:n].astype(float)), "classes learned"
    if result.scenario == "domain_il":
        return [float(i + 1) for i in range(n)], "months learned"
    return [float(i + 1) for i in range(n)], "tasks learned"


def curve_data(results: list[RunResult], kind: str = ACCURACY) -> dict[Column, dict[str, dict]]:
    """Per (dataset, scenario) and method: x, per-seed y, mean and seed spread."""
    if kind not in (ACCURACY, TIME):
        raise ValueError(f"unknown plot kind {kind!r}")
    ok = [r for r in results if r.status == OK]
    if not ok:
        raise ValueError("no completed runs to plot")
    by_col: dict[Column, dict[str, list[RunResult]]] = defaultdict(lambda: defaultdict(list))
    for r in ok:
        by_col[(r.dataset, r.scenario)][r.label].append(r)
    out: dict[Column, dict[str, dict]] = {}
    for col, methods in by_col.items():
        ordered = sorted(methods.items(), key=lambda kv: (row_key(kv[1][0].strategy), _fraction(kv[1][0]), kv[0]))
        out[col] = {}
        for label, runs in ordered:
            runs = sorted(runs, key=lambda r: r.seed)
            x, xlabel = _x_axis(runs[0])
            if kind == ACCURACY:
                ys = [list(r.per_increment_accuracy) for r in runs]
            else:
                ys = [list(np.cumsum(r.wall_time_per_task)) for r in runs]
            arr = np.asarray(ys, dtype=float)
            out[col][label] = {"x": x, "xlabel": xlabel, "seeds": [r.seed for r in runs], "y": ys,
                               "mean": arr.mean(axis=0).tolist(), "lo": arr.min(axis=0).tolist(),
                               "hi": arr.max(axis=0).tolist()}
    return out


def make_figure(col: Column, methods: dict[str, dict], kind: str):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, d in methods.items():
        line, = ax.plot(d["x"], d["mean"], marker="o", ms=3, label=label)
        if len(d["seeds"]) > 1:
            ax.fill_between(d["x"], d["lo"], d["hi"], alpha=0.2, color=line.get_color())
    first = next(iter(methods.values()))
    ax.set_xlabel(first["xlabel"])
    ax.set_ylabel("accuracy" if kind == ACCURACY else "cumulative training time (s)")
    ax.set_title(_header(col))
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def plot_curves(results: list[RunResult], out_dir, kind: str = ACCURACY) -> list[Path]:
    """One PNG and one PDF per (dataset, scenario)."""
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for col, methods in curve_data(results, kind).items():
        fig = make_figure(col, methods, kind)
        stem = f"{kind}_{col[0]}_{col[1]}"
        for ext in ("png", "pdf"):
            path = out_dir / f"{stem}.{ext}"
            fig.savefig(path, dpi=120)
            paths.append(path)
        plt.close(fig)
    return paths
