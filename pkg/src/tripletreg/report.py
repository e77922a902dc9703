"""Benchmark report rendering: delimited tables, timing sidecars, figures."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import InvalidInputError

# All numeric cells go through one format so that identical inputs yield
# identical bytes regardless of platform float printing quirks.
_CELL_FORMAT = "%.12g"

_COLUMNS = ("model", "pair", "rmse", "rmse_over_resolution", "rotation_error_deg")
_SUMMARY_STATS = ("min", "median", "mean", "max")


@dataclass(frozen=True)
class BenchRow:
    """One registered view pair: accuracy metrics plus per-stage timings.

    Timings are kept out of the main table (they vary run to run) and land in
    a sidecar file instead.
    """

    model_id: str
    fixed_view: int
    moving_view: int
    rmse: float
    rmse_over_resolution: float
    rotation_error_degrees: float
    stage_seconds: Mapping[str, float] = field(default_factory=dict)

    @property
    def pair_label(self) -> str:
        return f"{self.fixed_view:02d}-{self.moving_view:02d}"


def _format_cell(value: float) -> str:
    return _CELL_FORMAT % float(value)


def format_report(rows: Sequence[BenchRow]) -> str:
    """Render rows as a tab-separated table with a recomputed summary block.

    Summary statistics are derived from the *formatted* cell strings parsed
    back to floats, so the table is a pure function of its printed cells.
    """
    if not rows:
        raise InvalidInputError("report needs at least one row")
    lines = ["\t".join(_COLUMNS)]
    printed: dict[str, list[float]] = {name: [] for name in _COLUMNS[2:]}
    for row in rows:
        cells = [
            _format_cell(row.rmse),
            _format_cell(row.rmse_over_resolution),
            _format_cell(row.rotation_error_degrees),
        ]
        for name, cell in zip(_COLUMNS[2:], cells):
            printed[name].append(float(cell))
        lines.append("\t".join([row.model_id, row.pair_label, *cells]))
    for stat in _SUMMARY_STATS:
        reduce = getattr(np, stat)
        cells = [_format_cell(reduce(printed[name])) for name in _COLUMNS[2:]]
        lines.append("\t".join(["summary", stat, *cells]))
    return "\n".join(lines) + "\n"


def format_timings(rows: Sequence[BenchRow]) -> str:
    """Render the per-stage wall-clock sidecar table (seconds)."""
    lines = ["model\tpair\tstage\tseconds"]
    for row in rows:
        for stage, seconds in row.stage_seconds.items():
            lines.append(
                "\t".join([row.model_id, row.pair_label, stage, _CELL_FORMAT % seconds])
            )
    return "\n".join(lines) + "\n"


def _figure_paths(report_path: Path) -> tuple[Path, Path]:
    stem = report_path.with_suffix("")
    return Path(f"{stem}_rmse.png"), Path(f"{stem}_times.png")


def _render_rmse_figure(rows: Sequence[BenchRow], path: Path) -> None:
    labels = [f"{r.model_id}:{r.pair_label}" for r in rows]
    values = [r.rmse_over_resolution for r in rows]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.35 * len(rows)), 4.0))
    ax.bar(range(len(rows)), values, color="#4878a8")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("RMSE / resolution")
    ax.set_title("Registration error per view pair")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _render_times_figure(rows: Sequence[BenchRow], path: Path) -> None:
    labels = [f"{r.model_id}:{r.pair_label}" for r in rows]
    totals = [sum(r.stage_seconds.values()) for r in rows]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.35 * len(rows)), 4.0))
    ax.bar(range(len(rows)), totals, color="#70a870")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("seconds")
    ax.set_title("Registration time per view pair")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_report(rows: Sequence[BenchRow], path, figures: bool = True) -> Path:
    """Write the report table, its timing sidecar, and companion figures.

    The table lands at `path`; timings go to `<stem>.times.tsv`; figures go
    to `<stem>_rmse.png` and `<stem>_times.png` when `figures` is true.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(rows), encoding="ascii")
    sidecar = path.with_suffix(".times.tsv")
    sidecar.write_text(format_timings(rows), encoding="ascii")
    if figures:
        rmse_path, times_path = _figure_paths(path)
        _render_rmse_figure(rows, rmse_path)
        _render_times_figure(rows, times_path)
    return path
