"""Datasets, grid runs, reports and the routing service."""

from polyroute.harness.dataset import DatasetRecord, load_dataset, read_records, split, to_tasks, write_records
from polyroute.harness.grid import GridResult, ResultRow, read_rows, read_scores, run_grid
from polyroute.harness.report import aggregate, report

__all__ = [
    "DatasetRecord",
    "load_dataset",
    "read_records",
    "split",
    "to_tasks",
    "write_records",
    "GridResult",
    "ResultRow",
    "read_rows",
    "read_scores",
    "run_grid",
    "aggregate",
    "report",
]
