"""Planted score landscapes for exercising the selector without live backends.

Every task carries two planted features, a language and a question type.  The
best configuration is a deterministic function of those features: the language
picks the preferred model, the question type picks the preferred strategy, and
the pair picks the preferred embedding.  Scores add per-axis bonuses on top of
a small fixed per-cell baseline plus bounded noise, so the argmax is unique
with a margin larger than the noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from polyroute.config_space import ConfigurationSpace, LanguageTag, QueryTask, ScoreTensor

QUESTION_TYPES = {
    "person": "who led the",
    "date": "when did the",
    "place": "where was the",
    "count": "how many people joined the",
    "reason": "why did the",
}
FILLER = ("council", "river", "festival", "railway", "museum", "treaty", "harbour", "village", "temple",
          "market", "bridge", "school", "league", "library", "fortress", "orchestra")

BASE_LANGUAGES = ("hi", "bn", "mr", "gu", "pa", "ur", "or", "as")
SHIFT_LANGUAGES = ("ta", "te", "kn", "ml")


@dataclass
class Landscape:
    """Preference tables and bonus sizes defining a planted score function."""

    space: ConfigurationSpace
    model_pref: dict[str, int]
    strategy_pref: dict[str, int]
    embedding_pref: dict[tuple[str, str], int]
    base: np.ndarray
    floor: float = 0.2
    model_bonus: float = 0.2
    strategy_bonus: float = 0.25
    embedding_bonus: float = 0.1
    noise: float = 0.02
    inapplicable_sim: frozenset = field(default_factory=frozenset)

    def scores(self, language: str, qtype: str, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        n_m, n_e, n_s = self.space.shape
        y = self.floor + self.base.copy()
        y[self.model_pref[language], :, :] += self.model_bonus
        y[:, :, self.strategy_pref[qtype]] += self.strategy_bonus
        y[:, self.embedding_pref[(language, qtype)], :] += self.embedding_bonus
        if rng is not None and self.noise > 0:
            y += rng.uniform(-self.noise, self.noise, size=y.shape)
        return np.clip(y, 0.0, 1.0)

    def applicable(self, language: str) -> np.ndarray:
        mask = np.ones(self.space.shape, dtype=bool)
        if language in self.inapplicable_sim and "Sim" in self.space.strategies:
            mask[:, :, self.space.strategies.index("Sim")] = False
        return mask

    def best_index(self, language: str, qtype: str) -> int:
        y = np.where(self.applicable(language), self.scores(language, qtype), -np.inf)
        return int(np.argmax(y))


def make_landscape(space: Optional[ConfigurationSpace] = None, languages: Sequence[str] = BASE_LANGUAGES,
                   seed: int = 0, inapplicable_sim: Sequence[str] = ()) -> Landscape:
    space = space or ConfigurationSpace()
    n_m, n_e, n_s = space.shape
    rng = np.random.default_rng(seed)
    qtypes = list(QUESTION_TYPES)
    # preferences cycle deterministically through the axes so every value is used
    model_pref = {lang: i % n_m for i, lang in enumerate(languages)}
    strategy_pref = {q: i % n_s for i, q in enumerate(qtypes)}
    embedding_pref = {(lang, q): (i + 2 * j) % n_e for i, lang in enumerate(languages) for j, q in enumerate(qtypes)}
    base = rng.uniform(0.0, 0.05, size=space.shape)
    return Landscape(space, model_pref, strategy_pref, embedding_pref, base,
                     inapplicable_sim=frozenset(inapplicable_sim))


def shifted(land: Landscape, languages: Sequence[str] = SHIFT_LANGUAGES, offset: int = 1,
            strategy_offset: int = 0) -> Landscape:
    """Same landscape family over new languages; model, embedding and optionally
    strategy preferences are rotated by the given offsets."""
    n_m, n_e, n_s = land.space.shape
    qtypes = list(land.strategy_pref)
    strategy_pref = {q: (s + strategy_offset) % n_s for q, s in land.strategy_pref.items()}
    model_pref = {lang: (i + offset) % n_m for i, lang in enumerate(languages)}
    embedding_pref = {(lang, q): (i + 2 * j + offset) % n_e for i, lang in enumerate(languages)
                      for j, q in enumerate(qtypes)}
    return Landscape(land.space, model_pref, strategy_pref, embedding_pref, land.base.copy(),
                     land.floor, land.model_bonus, land.strategy_bonus, land.embedding_bonus, land.noise,
                     land.inapplicable_sim)


def generate(land: Landscape, n_tasks: int, seed: int = 0, prefix: str = "syn") -> list[tuple[QueryTask, ScoreTensor]]:
    """Draw ``n_tasks`` tasks uniformly over (language, question type) with full score tensors."""
    rng = np.random.default_rng(seed)
    languages = list(land.model_pref)
    qtypes = list(land.strategy_pref)
    out = []
    for i in range(n_tasks):
        lang = languages[rng.integers(len(languages))]
        qtype = qtypes[rng.integers(len(qtypes))]
        words = rng.choice(FILLER, size=2, replace=False)
        question = f"{QUESTION_TYPES[qtype]} {words[0]} {words[1]}?"
        task = QueryTask(id=f"{prefix}-{i:05d}", language=LanguageTag(lang), question=question,
                         gold_answers=("n/a",))
        y = ScoreTensor(land.scores(lang, qtype, rng), applicable_mask=land.applicable(lang))
        out.append((task, y))
    return out
