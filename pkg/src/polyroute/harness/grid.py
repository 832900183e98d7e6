"""Run every (task, configuration) cell, score the answers, emit score tensors."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from polyroute.backends import ChatBackend, thread_tally
from polyroute.config_space import Configuration, ConfigurationSpace, QueryTask, ScoreTensor
from polyroute.errors import InvalidConfiguration, StrategyFailed, StrategyInapplicable
from polyroute.evaluation import enrich, gpt_annotate, gptannotator_f1, mlqa_f1
from polyroute.harness.dataset import DatasetRecord
from polyroute.retrieval import build_index, chunk
from polyroute.strategies import Providers, ShotMode, run

log = logging.getLogger(__name__)

METRICS = ("mlqa_f1", "gptannotator_f1")


@dataclass
class ResultRow:
    task_id: str
    language: str
    model: str
    embedding: str
    strategy: str
    status: str  # ok | failed | inapplicable
    answer: Optional[str] = None
    mlqa_f1: Optional[float] = None
    gptannotator_f1: Optional[float] = None
    error: Optional[str] = None

    @property
    def configuration(self) -> Configuration:
        return Configuration(self.model, self.embedding, self.strategy)

    def score(self, metric: str) -> Optional[float]:
        return getattr(self, metric)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ResultRow":
        return cls(**obj)


@dataclass
class Telemetry:
    task_id: str
    linear_index: int
    latency_s: float
    network_calls: int
    cache_hits: int

    @property
    def cache_hit(self) -> bool:
        return self.network_calls == 0


@dataclass
class GridResult:
    rows: list[ResultRow]
    scores: dict[str, ScoreTensor]
    telemetry: list[Telemetry]
    judge_flags: list[dict]

    def write(self, out_dir) -> dict[str, Path]:
        """Deterministic artifacts (rows, scores) plus a separate telemetry file."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"results": out / "results.jsonl", "scores": out / "scores.jsonl", "telemetry": out / "telemetry.jsonl"}
        write_rows(self.rows, paths["results"])
        write_scores(self.scores, paths["scores"])
        with paths["telemetry"].open("w", encoding="utf-8") as fh:
            for t in self.telemetry:
                fh.write(json.dumps({**asdict(t), "cache_hit": t.cache_hit}, sort_keys=True) + "\n")
        return paths


def write_rows(rows: Sequence[ResultRow], path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    return path


def read_rows(path) -> list[ResultRow]:
    with Path(path).open(encoding="utf-8") as fh:
        return [ResultRow.from_json(json.loads(line)) for line in fh if line.strip()]


def write_scores(scores: dict[str, ScoreTensor], path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for tid, s in scores.items():
            fh.write(json.dumps({"task_id": tid, "scores": s.to_json()}, sort_keys=True) + "\n")
    return path


def read_scores(path) -> dict[str, ScoreTensor]:
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[obj["task_id"]] = ScoreTensor.from_json(obj["scores"])
    return out


def build_indexes(records: Sequence[DatasetRecord], providers: Providers, space: ConfigurationSpace,
                  max_chars: int = 400, overlap: int = 50) -> dict:
    """One exhaustive index per embedding over the de-duplicated record contexts."""
    docs: dict[str, DatasetRecord] = {}
    for r in records:
        docs.setdefault(r.context, r)
    chunks = []
    for text, r in docs.items():
        doc_id = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
        chunks.extend(chunk(text, max_chars, overlap, doc_id))
    indexes = {}
    for emb in space.embeddings:
        try:
            embedder = providers.embedders[emb]
        except KeyError:
            raise InvalidConfiguration(f"no embedder for {emb!r}") from None
        indexes[emb] = build_index(chunks, embedder)
    return indexes


def _run_cell(task: QueryTask, k: int, space: ConfigurationSpace, providers: Providers, shots: ShotMode):
    config = space.multi_index(k)
    calls0, hits0 = thread_tally()
    t0 = time.perf_counter()
    row = ResultRow(task.id, task.language.code, *config.as_tuple(), status="ok")
    try:
        outcome = run(config.strategy_id, task, config, providers, shots)
        row.answer = outcome.final_answer
        row.mlqa_f1 = mlqa_f1(outcome.final_answer, task.gold_answers, task.language)
    except StrategyInapplicable as exc:
        row.status, row.error = "inapplicable", str(exc)
    except StrategyFailed as exc:
        row.status, row.error, row.mlqa_f1 = "failed", str(exc), 0.0
    calls1, hits1 = thread_tally()
    tel = Telemetry(task.id, k, time.perf_counter() - t0, calls1 - calls0, hits1 - hits0)
    return row, tel


def _judge_task(task: QueryTask, rows: list[ResultRow], judge: ChatBackend, flags: list[dict]) -> None:
    """Pool this task's answers across all configurations, judge them once, re-score."""
    pool = sorted({r.answer for r in rows if r.status == "ok"})
    gt = task.gold_answers[0]
    flagged: list[int] = []
    verdicts = gpt_annotate(task.question, task.context or "", gt, pool, judge, strict=False, flagged=flagged)
    for i in flagged:
        flags.append({"task_id": task.id, "answer": pool[i]})
    enriched = enrich(gt, pool, verdicts)
    accepted = enriched.accepted + tuple(g for g in task.gold_answers[1:] if g not in enriched.accepted)
    enriched = type(enriched)(gt, accepted)
    for r in rows:
        if r.status == "ok":
            r.gptannotator_f1 = gptannotator_f1(r.answer, enriched, task.language)
        elif r.status == "failed":
            r.gptannotator_f1 = 0.0


def run_grid(tasks: Sequence[QueryTask], space: ConfigurationSpace, providers: Providers,
             metric: str = "mlqa_f1", judge: Optional[ChatBackend] = None, shots: ShotMode = ShotMode.few(),
             workers: int = 1) -> GridResult:
    """Evaluate every cell; rows come back in (task order, linear index) order whatever ``workers`` is."""
    if metric not in METRICS:
        raise InvalidConfiguration(f"unknown metric {metric!r}")
    if metric == "gptannotator_f1" and judge is None:
        raise InvalidConfiguration("gptannotator_f1 needs a judge backend")
    jobs = [(t, k) for t in tasks for k in range(space.size)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _run_cell(job[0], job[1], space, providers, shots), jobs))
    else:
        results = [_run_cell(t, k, space, providers, shots) for t, k in jobs]
    rows = [r for r, _ in results]
    telemetry = [t for _, t in results]
    flags: list[dict] = []
    scores = {}
    for ti, task in enumerate(tasks):
        task_rows = rows[ti * space.size:(ti + 1) * space.size]
        if metric == "gptannotator_f1":
            _judge_task(task, task_rows, judge, flags)
        values = np.zeros(space.size)
        applicable = np.ones(space.size, dtype=bool)
        for k, r in enumerate(task_rows):
            if r.status == "inapplicable":
                applicable[k] = False
            else:
                values[k] = r.score(metric)
        scores[task.id] = ScoreTensor(values.reshape(space.shape), applicable_mask=applicable.reshape(space.shape))
    if flags:
        log.warning("%d judge replies were unparseable and treated as No", len(flags))
    return GridResult(rows, scores, telemetry, flags)
