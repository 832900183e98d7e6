"""Aggregate result rows into tables: markdown, CSV and a bar chart."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from polyroute.errors import InvalidInput
from polyroute.harness.grid import ResultRow

GROUP_KEYS = ("language", "strategy", "model", "embedding")


@dataclass
class Table:
    row_key: str
    col_key: str
    metric: str
    rows: list[str]
    cols: list[str]
    cells: dict[tuple[str, str], float]
    counts: dict[tuple[str, str], int]

    def get(self, r: str, c: str) -> Optional[float]:
        return self.cells.get((r, c))

    def row_max(self, r: str) -> Optional[float]:
        vals = [v for (rr, _), v in self.cells.items() if rr == r]
        return max(vals) if vals else None


def aggregate(rows: Sequence[ResultRow], group_by: str = "language", columns: str = "strategy",
              metric: str = "mlqa_f1") -> Table:
    """Mean score per (group_by, columns) pair; inapplicable rows are left out.

    ``math.fsum`` makes the means independent of row order.
    """
    for key in (group_by, columns):
        if key not in GROUP_KEYS:
            raise InvalidInput(f"cannot group by {key!r}; choose from {GROUP_KEYS}")
    if group_by == columns:
        raise InvalidInput("row and column keys must differ")
    buckets: dict[tuple[str, str], list[float]] = defaultdict(list)
    for r in rows:
        value = r.score(metric)
        if r.status == "inapplicable" or value is None:
            continue
        buckets[(getattr(r, group_by), getattr(r, columns))].append(float(value))
    cells = {k: math.fsum(v) / len(v) for k, v in buckets.items()}
    counts = {k: len(v) for k, v in buckets.items()}
    row_ids = sorted({k[0] for k in cells})
    col_ids = sorted({k[1] for k in cells})
    return Table(group_by, columns, metric, row_ids, col_ids, cells, counts)


def _fmt(v: Optional[float], digits: int) -> str:
    return "" if v is None else f"{v:.{digits}f}"


def to_markdown(table: Table, digits: int = 2) -> str:
    """Pipe table; the best cell of each row is bold (all of them on ties)."""
    head = f"| {table.row_key} | " + " | ".join(table.cols) + " |"
    sep = "|---|" + "---|" * len(table.cols)
    lines = [head, sep]
    for r in table.rows:
        best = table.row_max(r)
        cells = []
        for c in table.cols:
            v = table.get(r, c)
            text = _fmt(v, digits)
            if v is not None and _fmt(v, digits) == _fmt(best, digits):
                text = f"**{text}**"
            cells.append(text)
        lines.append(f"| {r} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def to_csv(table: Table, digits: int = 6) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([table.row_key, *table.cols])
    for r in table.rows:
        w.writerow([r, *(_fmt(table.get(r, c), digits) for c in table.cols)])
    return buf.getvalue()


def plot(table: Table, path) -> Path:
    """Grouped bar chart, one group per row key."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    n_cols = max(len(table.cols), 1)
    width = 0.8 / n_cols
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(table.rows) + 2), 3.5))
    for j, c in enumerate(table.cols):
        xs = [i + j * width for i in range(len(table.rows))]
        ys = [table.get(r, c) or 0.0 for r in table.rows]
        ax.bar(xs, ys, width=width, label=c)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(table.rows))])
    ax.set_xticklabels(table.rows)
    ax.set_ylim(0, 1)
    ax.set_ylabel(table.metric)
    ax.set_xlabel(table.row_key)
    ax.legend(title=table.col_key, fontsize="small", ncol=min(n_cols, 5))
    fig.tight_layout()
    # fixed metadata keeps the PNG bytes stable across runs
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def report(rows: Sequence[ResultRow], out_dir, group_by: str = "language", columns: str = "strategy",
           metric: str = "mlqa_f1", figure: bool = True) -> dict[str, Path]:
    """Write ``<stem>.md``, ``<stem>.csv`` and optionally ``<stem>.png``; return their paths."""
    table = aggregate(rows, group_by, columns, metric)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{metric}_by_{group_by}_{columns}"
    paths = {"markdown": out / f"{stem}.md", "csv": out / f"{stem}.csv"}
    paths["markdown"].write_text(to_markdown(table), encoding="utf-8")
    paths["csv"].write_text(to_csv(table), encoding="utf-8")
    if figure:
        paths["figure"] = plot(table, out / f"{stem}.png")
    return paths
