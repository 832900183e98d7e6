"""Chunking, exact cosine index and top-k search."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from polyroute.backends import Embedder
from polyroute.config_space import LanguageTag
from polyroute.errors import IndexMismatch, InvalidInput, ProtocolError

DEFAULT_K = 3


@dataclass(frozen=True)
class DocumentChunk:
    chunk_id: str
    doc_id: str
    language: LanguageTag
    text: str
    char_span: tuple[int, int]

    def to_json(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "language": {"code": self.language.code, "script": self.language.script,
                         "class": self.language.resource_class},
            "text": self.text,
            "char_span": list(self.char_span),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DocumentChunk":
        lang = obj["language"]
        return cls(obj["chunk_id"], obj["doc_id"], LanguageTag(lang["code"], lang["script"], lang["class"]),
                   obj["text"], tuple(obj["char_span"]))


@dataclass(frozen=True)
class RetrievalResult:
    chunk: DocumentChunk
    score: float


def chunk(doc: str, max_chars: int, overlap: int, doc_id: str = "doc",
          language: LanguageTag = LanguageTag("en", "latin", 5)) -> list[DocumentChunk]:
    """Fixed sliding window; consecutive chunks share ``overlap`` characters."""
    if not doc:
        raise InvalidInput("cannot chunk an empty document")
    if not max_chars > overlap >= 0:
        raise InvalidInput("need max_chars > overlap >= 0")
    out = []
    step = max_chars - overlap
    start = 0
    while True:
        end = min(start + max_chars, len(doc))
        out.append(DocumentChunk(f"{doc_id}#{len(out):04d}", doc_id, language, doc[start:end], (start, end)))
        if end == len(doc):
            break
        start += step
    return out


class VectorIndex:
    """Exhaustive cosine index over unit-normalised rows."""

    def __init__(self, provider_id: str, chunks: Sequence[DocumentChunk], vectors: np.ndarray):
        try:
            vectors = np.asarray(vectors, dtype=float)
        except ValueError as exc:
            raise ProtocolError(f"ragged embedding rows: {exc}") from None
        if vectors.ndim != 2 or len(vectors) != len(chunks):
            raise ProtocolError("one vector per chunk required")
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        self.provider_id = provider_id
        self.dimension = vectors.shape[1]
        self.chunks = list(chunks)
        self.matrix = np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)

    def __len__(self):
        return len(self.chunks)

    @property
    def rows(self):
        return [(c.chunk_id, v) for c, v in zip(self.chunks, self.matrix)]

    def similarities(self, query_vec: np.ndarray) -> np.ndarray:
        q = np.asarray(query_vec, dtype=float)
        if q.shape != (self.dimension,):
            raise IndexMismatch(f"query dimension {q.shape} != index dimension {self.dimension}")
        n = np.linalg.norm(q)
        if n == 0:
            return np.zeros(len(self))
        return np.clip(self.matrix @ (q / n), -1.0, 1.0)

    def top_k(self, query_vec: np.ndarray, k: int = DEFAULT_K) -> list[RetrievalResult]:
        if k < 1:
            raise InvalidInput("k must be >= 1")
        sims = self.similarities(query_vec)
        ids = np.array([c.chunk_id for c in self.chunks])
        # primary key descending score, ties by ascending chunk_id
        order = np.lexsort((ids, -sims))[:k]
        return [RetrievalResult(self.chunks[i], float(sims[i])) for i in order]

    def save(self, index_path: Path, chunk_path: Optional[Path] = None) -> None:
        index_path = Path(index_path)
        chunk_path = Path(chunk_path) if chunk_path else index_path.with_suffix(".chunks.jsonl")
        obj = {
            "provider": self.provider_id,
            "dimension": self.dimension,
            "rows": [{"chunk_id": cid, "vector": [float(x) for x in vec]} for cid, vec in self.rows],
        }
        index_path.write_text(json.dumps(obj), encoding="utf-8")
        with chunk_path.open("w", encoding="utf-8") as fh:
            for c in self.chunks:
                fh.write(json.dumps(c.to_json(), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, index_path: Path, chunk_path: Optional[Path] = None) -> "VectorIndex":
        index_path = Path(index_path)
        chunk_path = Path(chunk_path) if chunk_path else index_path.with_suffix(".chunks.jsonl")
        obj = json.loads(index_path.read_text(encoding="utf-8"))
        by_id = {}
        with chunk_path.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    c = DocumentChunk.from_json(json.loads(line))
                    by_id[c.chunk_id] = c
        chunks = [by_id[r["chunk_id"]] for r in obj["rows"]]
        vectors = np.array([r["vector"] for r in obj["rows"]], dtype=float).reshape(len(chunks), obj["dimension"])
        return cls(obj["provider"], chunks, vectors)


def build_index(chunks: Sequence[DocumentChunk], embedder: Embedder) -> VectorIndex:
    if not chunks:
        raise InvalidInput("cannot index zero chunks")
    vecs = embedder.embed([c.text for c in chunks])
    dims = {v.dimension for v in vecs}
    if len(dims) != 1:
        raise ProtocolError(f"mixed embedding dimensions {sorted(dims)}")
    return VectorIndex(embedder.provider_id, chunks, np.array([v.values for v in vecs]))


def search(index: VectorIndex, query_text: str, embedder: Embedder, k: int = DEFAULT_K) -> list[RetrievalResult]:
    if embedder.provider_id != index.provider_id:
        raise IndexMismatch(f"index built with {index.provider_id!r}, query embedder is {embedder.provider_id!r}")
    if k < 1:
        raise InvalidInput("k must be >= 1")
    q = embedder.embed([query_text])[0].as_array()
    return index.top_k(q, k)
