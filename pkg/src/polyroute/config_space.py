"""Configuration grid, index arithmetic and the shared task records."""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from polyroute.errors import IncompleteScores, InvalidConfiguration, InvalidInput


class Strategy(str, enum.Enum):
    MONO = "Mono"
    TRANS = "Trans"
    SIM = "Sim"
    AGG_SRC = "AggSrc"
    AGG_TRANS = "AggTrans"

    @classmethod
    def parse(cls, value) -> "Strategy":
        try:
            return cls(value)
        except ValueError:
            raise InvalidConfiguration(f"unknown strategy {value!r}") from None


DEFAULT_MODELS = ("gpt-4-turbo", "gpt-35-turbo", "mixtral-8x7b")
DEFAULT_EMBEDDINGS = ("ada-002", "ada-003", "xlmr-xxl", "cohere-multilingual-v3")
DEFAULT_STRATEGIES = tuple(s.value for s in Strategy)

_CODE_RE = re.compile(r"^[a-z]{2,3}$")


@dataclass(frozen=True)
class LanguageTag:
    code: str
    script: str = "non_latin"
    resource_class: int = 0

    def __post_init__(self):
        if not _CODE_RE.match(self.code):
            raise InvalidInput(f"language code must be 2-3 lowercase letters: {self.code!r}")
        if self.script not in ("latin", "non_latin"):
            raise InvalidInput(f"bad script {self.script!r}")
        if not 0 <= self.resource_class <= 5:
            raise InvalidInput(f"resource_class out of range: {self.resource_class}")

    @property
    def is_latin(self) -> bool:
        return self.script == "latin"


ENGLISH = LanguageTag("en", "latin", 5)


@dataclass(frozen=True)
class Configuration:
    model_id: str
    embedding_id: str
    strategy_id: str

    def as_tuple(self) -> tuple[str, str, str]:
        return (self.model_id, self.embedding_id, self.strategy_id)

    def canonical_text(self) -> str:
        return f"model={self.model_id};embedding={self.embedding_id};strategy={self.strategy_id}"

    def to_dict(self) -> dict:
        return {"model": self.model_id, "embedding": self.embedding_id, "strategy": self.strategy_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Configuration":
        return cls(d["model"], d["embedding"], d["strategy"])


@dataclass(frozen=True)
class ConfigurationSpace:
    """Row-major grid over (models, embeddings, strategies)."""

    models: tuple[str, ...] = DEFAULT_MODELS
    embeddings: tuple[str, ...] = DEFAULT_EMBEDDINGS
    strategies: tuple[str, ...] = DEFAULT_STRATEGIES

    def __post_init__(self):
        for name in ("models", "embeddings", "strategies"):
            axis = tuple(getattr(self, name))
            if not axis:
                raise InvalidConfiguration(f"axis {name} is empty")
            if len(set(axis)) != len(axis):
                raise InvalidConfiguration(f"axis {name} has duplicate ids")
            object.__setattr__(self, name, axis)
        for s in self.strategies:
            Strategy.parse(s)

    @property
    def axes(self) -> tuple[tuple[str, ...], ...]:
        return (self.models, self.embeddings, self.strategies)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def positions(self, config: Configuration) -> tuple[int, ...]:
        pos = []
        for axis, ident in zip(self.axes, config.as_tuple()):
            try:
                pos.append(axis.index(ident))
            except ValueError:
                raise InvalidConfiguration(f"unknown id {ident!r}") from None
        return tuple(pos)

    def linear_index(self, config: Configuration) -> int:
        return int(np.ravel_multi_index(self.positions(config), self.shape))

    def multi_index(self, k: int) -> Configuration:
        if not 0 <= k < self.size:
            raise IndexError(f"configuration index {k} out of range [0, {self.size})")
        pos = np.unravel_index(k, self.shape)
        return Configuration(*(axis[i] for axis, i in zip(self.axes, pos)))

    def enumerate(self) -> list[Configuration]:
        return [self.multi_index(k) for k in range(self.size)]

    def __iter__(self) -> Iterator[Configuration]:
        return iter(self.enumerate())

    def to_json(self) -> dict:
        return {
            "models": list(self.models),
            "embeddings": list(self.embeddings),
            "strategies": list(self.strategies),
        }

    @classmethod
    def from_json(cls, obj) -> "ConfigurationSpace":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls(tuple(obj["models"]), tuple(obj["embeddings"]), tuple(obj["strategies"]))


def linear_index(space: ConfigurationSpace, config: Configuration) -> int:
    return space.linear_index(config)


def multi_index(space: ConfigurationSpace, k: int) -> Configuration:
    return space.multi_index(k)


def enumerate_space(space: ConfigurationSpace) -> list[Configuration]:
    return space.enumerate()


@dataclass(frozen=True)
class Exemplar:
    question: str
    context: str
    answer: str
    id: str = ""
    language: Optional[str] = None


@dataclass(frozen=True)
class QueryTask:
    id: str
    language: LanguageTag
    question: str
    gold_answers: tuple[str, ...]
    context: Optional[str] = None
    exemplars: tuple[Exemplar, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))
        object.__setattr__(self, "exemplars", tuple(self.exemplars))
        if not self.gold_answers:
            raise InvalidInput(f"task {self.id}: gold_answers must be non-empty")
        for ex in self.exemplars:
            if ex.language not in (None, self.language.code):
                raise InvalidInput(f"task {self.id}: exemplars must share the task language")

    def description(self) -> str:
        """Text handed to the selector backbone."""
        return f"language: {self.language.code}\nquestion: {self.question}"


@dataclass
class ScoreTensor:
    """Scores over the configuration grid.

    ``known_mask`` marks entries that were measured. ``applicable_mask`` marks
    cells that can be executed at all (Sim without a pivot is not); inapplicable
    cells are never required to be known and never selected.
    """

    values: np.ndarray
    known_mask: np.ndarray = field(default=None)
    applicable_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.known_mask is None:
            self.known_mask = np.ones(self.values.shape, dtype=bool)
        if self.applicable_mask is None:
            self.applicable_mask = np.ones(self.values.shape, dtype=bool)
        self.known_mask = np.asarray(self.known_mask, dtype=bool)
        self.applicable_mask = np.asarray(self.applicable_mask, dtype=bool)
        if self.known_mask.shape != self.values.shape or self.applicable_mask.shape != self.values.shape:
            raise InvalidInput("mask shape differs from values shape")
        self.known_mask = self.known_mask & self.applicable_mask
        known = self.values[self.known_mask]
        if known.size and (np.any(~np.isfinite(known)) or known.min() < 0 or known.max() > 1):
            raise InvalidInput("known scores must lie in [0, 1]")
        self.values = np.where(self.known_mask, self.values, 0.0)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def is_dense(self) -> bool:
        return bool(np.all(self.known_mask[self.applicable_mask]))

    def require_dense(self) -> "ScoreTensor":
        if not self.is_dense:
            raise IncompleteScores("score tensor has unknown entries")
        return self

    def to_json(self) -> dict:
        flat = self.values.ravel()
        known = self.known_mask.ravel()
        return {
            "shape": list(self.shape),
            "values": [round(float(v), 12) if k else None for v, k in zip(flat, known)],
            "inapplicable": [int(i) for i in np.flatnonzero(~self.applicable_mask.ravel())],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScoreTensor":
        shape = tuple(obj["shape"])
        raw = obj["values"]
        values = np.array([0.0 if v is None else v for v in raw], dtype=float).reshape(shape)
        known = np.array([v is not None for v in raw]).reshape(shape)
        applicable = np.ones(math.prod(shape), dtype=bool)
        applicable[list(obj.get("inapplicable", []))] = False
        return cls(values, known, applicable.reshape(shape))


def make_space(models: Sequence[str], embeddings: Sequence[str], strategies: Sequence[str]) -> ConfigurationSpace:
    return ConfigurationSpace(tuple(models), tuple(embeddings), tuple(strategies))
