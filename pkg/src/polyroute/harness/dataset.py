"""Dataset records: SQuAD-style ingestion, JSONL storage, task building and splits."""

from __future__ import annotations

import hashlib
import json
import random
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from polyroute.config_space import Exemplar, LanguageTag, QueryTask
from polyroute.errors import InvalidInput, ParseError
from polyroute.langsim import PivotResolver

DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)
MAX_EXEMPLARS = 8


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    language: str
    context: str
    question: str
    answers: tuple[str, ...]

    def to_json(self) -> dict:
        d = asdict(self)
        d["answers"] = list(self.answers)
        return d

    @classmethod
    def from_json(cls, obj: dict, locus: str = "") -> "DatasetRecord":
        return _record(obj, obj.get("language"), locus)


def _record(qa: dict, language: Optional[str], locus: str, context: Optional[str] = None) -> DatasetRecord:
    if not isinstance(qa, dict):
        raise ParseError("record is not an object", locus)
    for key in ("id", "question"):
        if not isinstance(qa.get(key), str) or not qa[key].strip():
            raise ParseError(f"missing or empty {key!r}", locus)
    if "answers" not in qa:
        raise ParseError("missing 'answers'", locus)
    raw = qa["answers"]
    if not isinstance(raw, list) or not raw:
        raise ParseError("'answers' must be a non-empty list", locus)
    answers = []
    for a in raw:
        text = a.get("text") if isinstance(a, dict) else a
        if not isinstance(text, str) or not text.strip():
            raise ParseError("answer without text", locus)
        answers.append(text)
    language = qa.get("language", language)
    if not isinstance(language, str) or not language:
        raise ParseError("no language for record", locus)
    ctx = qa.get("context", context)
    if not isinstance(ctx, str) or not ctx.strip():
        raise ParseError("missing context passage", locus)
    return DatasetRecord(qa["id"], language, ctx, qa["question"], tuple(answers))


def load_dataset(path, format: str = "squad_json") -> list[DatasetRecord]:
    """Read records from a SQuAD-style JSON file or a flat JSONL file.

    ``squad_json`` is ``{"language"?, "data": [{"language"?, "paragraphs":
    [{"context", "qas": [{"id", "question", "answers": [{"text"}]}]}]}]}``;
    the language may sit at file, article or question level.
    """
    path = Path(path)
    if format == "jsonl":
        return _check_unique(read_records(path), str(path))
    if format != "squad_json":
        raise InvalidInput(f"unknown dataset format {format!r}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("data"), list):
        raise ParseError("top level must be an object with a 'data' list", str(path))
    out = []
    for ai, article in enumerate(doc["data"]):
        lang_a = article.get("language", doc.get("language"))
        for pi, para in enumerate(article.get("paragraphs", [])):
            ctx = para.get("context")
            for qi, qa in enumerate(para.get("qas", [])):
                out.append(_record(qa, lang_a, f"{path}:data[{ai}].paragraphs[{pi}].qas[{qi}]", ctx))
    return _check_unique(out, str(path))


def _check_unique(records: Sequence[DatasetRecord], where: str) -> list[DatasetRecord]:
    seen = set()
    for r in records:
        if r.id in seen:
            raise ParseError(f"duplicate record id {r.id!r}", where)
        seen.add(r.id)
    return list(records)


def write_records(records: Iterable[DatasetRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    return path


def read_records(path) -> list[DatasetRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", f"{path}:{n}") from exc
            out.append(DatasetRecord.from_json(obj, f"{path}:{n}"))
    return out


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- tasks


def language_tag(code: str, resolver: Optional[PivotResolver] = None) -> LanguageTag:
    resolver = resolver or PivotResolver()
    try:
        return resolver.profile(code)
    except KeyError:
        return LanguageTag(code)


def to_tasks(records: Sequence[DatasetRecord], resolver: Optional[PivotResolver] = None,
             gold_context: bool = True, max_exemplars: int = MAX_EXEMPLARS, seed: int = 0) -> list[QueryTask]:
    """Turn records into tasks; exemplars come from other records of the same language.

    With ``gold_context`` false the context is withheld so the strategy layer
    retrieves it through the configured embedding index.
    """
    resolver = resolver or PivotResolver()
    by_lang: dict[str, list[DatasetRecord]] = defaultdict(list)
    for r in records:
        by_lang[r.language].append(r)
    tags = {code: language_tag(code, resolver) for code in by_lang}
    tasks = []
    for r in records:
        pool = [o for o in by_lang[r.language] if o.id != r.id]
        rng = random.Random(f"{seed}:{r.id}")
        picked = rng.sample(pool, min(max_exemplars, len(pool)))
        exemplars = tuple(Exemplar(o.question, o.context, o.answers[0], o.id, r.language) for o in picked)
        tasks.append(QueryTask(r.id, tags[r.language], r.question, r.answers,
                               r.context if gold_context else None, exemplars))
    return tasks


# ---------------------------------------------------------------- splits


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder rounding of ``n * fractions``."""
    raw = [n * f for f in fractions]
    counts = [int(x) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split(records: Sequence[DatasetRecord], fractions: Sequence[float] = DEFAULT_FRACTIONS, seed: int = 0,
          stratify: bool = True, exclude_langs: Iterable[str] = ()):
    """Partition into (offline, online, test).

    Stratified mode keeps each language proportional in every part.  Languages in
    ``exclude_langs`` are dropped from the offline part only, for
    language-adaptation experiments.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise InvalidInput("need three non-negative split fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidInput(f"split fractions must sum to 1, got {sum(fractions)}")
    groups: dict[str, list[DatasetRecord]] = defaultdict(list)
    for r in records:
        groups[r.language if stratify else ""].append(r)
    # each record gets its within-group quantile; cutting the quantile order at
    # the global counts keeps every language proportional and the totals exact
    keyed = []
    for key in sorted(groups):
        members = sorted(groups[key], key=lambda r: r.id)
        random.Random(f"{seed}:{key}").shuffle(members)
        n = len(members)
        keyed.extend(((i + 0.5) / n, key, i, r) for i, r in enumerate(members))
    keyed.sort(key=lambda x: x[:3])
    ordered = [x[3] for x in keyed]
    parts: list[list[DatasetRecord]] = []
    start = 0
    for c in _allocate(len(ordered), fractions):
        parts.append(ordered[start:start + c])
        start += c
    excluded = set(exclude_langs)
    parts[0] = [r for r in parts[0] if r.language not in excluded]
    order = {r.id: i for i, r in enumerate(records)}
    return tuple(sorted(p, key=lambda r: order[r.id]) for p in parts)
