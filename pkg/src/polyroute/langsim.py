"""Similar high-resource language selection for the Sim (pivot) strategy.

Candidates must have resource class >= ``cls_threshold``; each candidate is
scored as ``w * mean(d) / class`` where ``w`` is ``w_latin`` for Latin-script
languages and 1 otherwise, and kept when the score is <= ``dist_threshold``.
The pivot is the kept candidate with the lowest score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional

from polyroute.config_space import LanguageTag
from polyroute.errors import IneligibleLanguage, InvalidInput, UnknownLanguage

FEATURES = ("syntactic", "genetic", "geographic")


@dataclass(frozen=True)
class SimilarityParams:
    w_latin: float = 0.9
    cls_threshold: int = 3
    dist_threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.w_latin <= 1:
            raise InvalidInput("w_latin must be in (0, 1]")


class DistanceTable:
    """Symmetric per-feature distances between language codes."""

    def __init__(self, features: Iterable[str], entries: Mapping[tuple[str, str, str], float],
                 languages: Iterable[LanguageTag] = ()):
        self.features = tuple(features)
        self._d: dict[tuple[str, str, str], float] = {}
        self._codes: set[str] = set()
        for (a, b, feat), d in entries.items():
            if feat not in self.features:
                raise InvalidInput(f"unknown feature {feat!r}")
            if not 0.0 <= d <= 1.0:
                raise InvalidInput(f"distance out of [0,1]: {a}|{b} {feat}={d}")
            self._d[self._key(a, b, feat)] = float(d)
            self._codes.update((a, b))
        self.languages = {t.code: t for t in languages}
        self._codes.update(self.languages)

    @staticmethod
    def _key(a, b, feat):
        return (a, b, feat) if a <= b else (b, a, feat)

    def __contains__(self, code: str) -> bool:
        return code in self._codes

    def distance(self, a: str, b: str, feature: str) -> Optional[float]:
        if a == b:
            return 0.0
        return self._d.get(self._key(a, b, feature))

    def mean_distance(self, a: str, b: str) -> Optional[float]:
        ds = [self.distance(a, b, f) for f in self.features]
        if any(d is None for d in ds):
            return None
        return sum(ds) / len(ds)

    @classmethod
    def from_json(cls, obj) -> "DistanceTable":
        if isinstance(obj, (str, Path)):
            obj = json.loads(Path(obj).read_text(encoding="utf-8"))
        entries = {}
        for feat, table in obj["distances"].items():
            for pair, d in table.items():
                a, b = pair.split("|")
                entries[(a, b, feat)] = d
        langs = [
            LanguageTag(x["code"], x["script"], int(x["class"])) for x in obj.get("languages", [])
        ]
        return cls(obj["features"], entries, langs)

    @classmethod
    def packaged(cls) -> "DistanceTable":
        text = resources.files("polyroute.data").joinpath("lang_distances.json").read_text("utf-8")
        return cls.from_json(json.loads(text))


def relevance_score(d_avg: float, cls: int, is_latin: bool, params: SimilarityParams = SimilarityParams()) -> float:
    if cls <= 0:
        raise IneligibleLanguage(f"resource class {cls} cannot be scored")
    if d_avg < 0:
        raise InvalidInput("distance must be non-negative")
    w = params.w_latin if is_latin else 1.0
    return w * d_avg / cls


def _profile_map(profiles) -> dict[str, LanguageTag]:
    if isinstance(profiles, Mapping):
        return dict(profiles)
    return {p.code: p for p in profiles}


def scored_candidates(source: LanguageTag, table: DistanceTable, profiles,
                      params: SimilarityParams = SimilarityParams()) -> dict[str, float]:
    """Relevance score of every eligible candidate (before the threshold test)."""
    if source.code not in table:
        raise UnknownLanguage(source.code)
    out = {}
    for code, prof in sorted(_profile_map(profiles).items()):
        if code == source.code or prof.resource_class < params.cls_threshold:
            continue
        d = table.mean_distance(source.code, code)
        if d is None:
            continue
        out[code] = relevance_score(d, prof.resource_class, prof.is_latin, params)
    return out


def similar_languages(source: LanguageTag, table: DistanceTable, profiles,
                      params: SimilarityParams = SimilarityParams()) -> set[LanguageTag]:
    pm = _profile_map(profiles)
    scores = scored_candidates(source, table, pm, params)
    return {pm[c] for c, s in scores.items() if s <= params.dist_threshold}


def pick_pivot(source: LanguageTag, candidates, table: DistanceTable, profiles,
               params: SimilarityParams = SimilarityParams()) -> Optional[LanguageTag]:
    if not candidates:
        return None
    pm = _profile_map(profiles)
    best = None
    for cand in candidates:
        prof = pm.get(cand.code, cand)
        score = relevance_score(table.mean_distance(source.code, cand.code), prof.resource_class,
                                prof.is_latin, params)
        key = (score, cand.code)
        if best is None or key < best[0]:
            best = (key, cand)
    return best[1]


class PivotResolver:
    """Caches the pivot per source language over one table and profile set."""

    def __init__(self, table: Optional[DistanceTable] = None, profiles=None,
                 params: SimilarityParams = SimilarityParams()):
        self.table = table or DistanceTable.packaged()
        self.profiles = _profile_map(profiles if profiles is not None else self.table.languages.values())
        self.params = params
        self._cache: dict[str, Optional[LanguageTag]] = {}

    def profile(self, code: str) -> LanguageTag:
        try:
            return self.profiles[code]
        except KeyError:
            raise UnknownLanguage(code) from None

    def pivot(self, source: LanguageTag) -> Optional[LanguageTag]:
        if source.code not in self._cache:
            if source.code not in self.table:
                self._cache[source.code] = None
            else:
                cands = similar_languages(source, self.table, self.profiles, self.params)
                self._cache[source.code] = pick_pivot(source, cands, self.table, self.profiles, self.params)
        return self._cache[source.code]
