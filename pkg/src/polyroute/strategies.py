"""Prompting strategies: Mono, Trans, Sim and the two aggregations.

Every strategy returns a :class:`StrategyOutcome` whose ``final_answer`` is in
the task language, together with the audit trail of intermediate texts.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

from polyroute.backends import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    BackendUnavailable,
    ChatBackend,
    ChatRequest,
    Embedder,
    Translator,
    TranslationJob,
)
from polyroute.config_space import ENGLISH, Configuration, Exemplar, LanguageTag, QueryTask, Strategy
from polyroute.errors import (
    BackendError,
    InvalidConfiguration,
    StrategyFailed,
    StrategyInapplicable,
)
from polyroute.langsim import PivotResolver
from polyroute.retrieval import DEFAULT_K, VectorIndex, search

DEFAULT_SHOTS = 3
DEFAULT_SEED = 0


@dataclass(frozen=True)
class ShotMode:
    kind: str = "few"
    n_examples: int = DEFAULT_SHOTS
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.kind not in ("zero", "few"):
            raise ValueError(f"shot kind must be 'zero' or 'few', got {self.kind!r}")
        if self.kind == "few" and self.n_examples < 1:
            raise ValueError("few-shot needs n_examples >= 1")

    @classmethod
    def zero(cls) -> "ShotMode":
        return cls("zero", 0)

    @classmethod
    def few(cls, n: int = DEFAULT_SHOTS, seed: int = DEFAULT_SEED) -> "ShotMode":
        return cls("few", n, seed)

    def pick(self, task: QueryTask) -> list[Exemplar]:
        if self.kind == "zero" or not task.exemplars:
            return []
        rng = random.Random(f"{self.seed}:{task.id}")
        return rng.sample(list(task.exemplars), min(self.n_examples, len(task.exemplars)))


@dataclass(frozen=True)
class Step:
    label: str
    language: str
    text: str


@dataclass
class StrategyOutcome:
    final_answer: str
    language: str
    config_used: Optional[Configuration] = None
    intermediates: list[Step] = field(default_factory=list)


class PromptTemplates:
    """Instruction text per (strategy, language); English is the fallback.

    Missing languages are localized by translating the English instruction
    once through the configured translator (the translator cache keeps it).
    """

    def __init__(self, system: str, instructions: Mapping[str, Mapping[str, str]]):
        self.system = system
        self.instructions = {k: dict(v) for k, v in instructions.items()}
        for s in Strategy:
            if "en" not in self.instructions.get(s.value, {}):
                raise InvalidConfiguration(f"template for {s.value} lacks an English instruction")

    @classmethod
    def load(cls, path=None) -> "PromptTemplates":
        if path is None:
            text = resources.files("polyroute.data").joinpath("templates.json").read_text("utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        obj = json.loads(text)
        return cls(obj["system"], obj["instructions"])

    def instruction(self, strategy: Strategy, lang: LanguageTag, translator: Optional[Translator]) -> str:
        table = self.instructions[strategy.value]
        if lang.code in table:
            return table[lang.code]
        if translator is None:
            raise StrategyFailed(strategy.value, f"no {lang.code} instruction and no translator")
        return translator.translate(TranslationJob(table["en"], ENGLISH, lang))


@dataclass
class Providers:
    """Everything a strategy run needs besides the task."""

    chat: Mapping[str, ChatBackend]
    translator: Optional[Translator] = None
    pivots: Optional[PivotResolver] = None
    embedders: Mapping[str, Embedder] = field(default_factory=dict)
    indexes: Mapping[str, VectorIndex] = field(default_factory=dict)
    templates: PromptTemplates = field(default_factory=PromptTemplates.load)
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    k: int = DEFAULT_K

    def chat_for(self, model_id: str) -> ChatBackend:
        try:
            return self.chat[model_id]
        except KeyError:
            if "*" in self.chat:
                return self.chat["*"]
            raise InvalidConfiguration(f"no chat backend for model {model_id!r}") from None

    def chat_backends(self) -> list[ChatBackend]:
        return list({id(b): b for b in self.chat.values()}.values())


# ---------------------------------------------------------------- rendering


def render_qa(instruction: str, context: str, question: str, exemplars: Sequence[Exemplar]) -> str:
    parts = [instruction.strip(), ""]
    for i, ex in enumerate(exemplars, 1):
        parts += [f"### Example {i}", f"Context: {ex.context}", f"Question: {ex.question}", f"Answer: {ex.answer}", ""]
    parts += ["### Task", f"Context: {context}", f"Question: {question}", "Answer:"]
    return "\n".join(parts)


def render_aggregate(instruction: str, context: str, question: str, candidates: Sequence[str]) -> str:
    parts = [instruction.strip(), "", "### Task", f"Context: {context}", f"Question: {question}", "Candidates:"]
    parts += [f"[{i}] {c}" for i, c in enumerate(candidates, 1)]
    return "\n".join(parts)


def _chat(providers: Providers, model: str, user_text: str) -> str:
    req = ChatRequest(model, providers.templates.system, user_text, providers.temperature, providers.max_tokens)
    return providers.chat_for(model).complete(req).strip()


def _translate(providers: Providers, text: str, src: LanguageTag, dst: LanguageTag, strategy: Strategy) -> str:
    if providers.translator is None:
        raise StrategyFailed(strategy.value, "no translator configured")
    try:
        return providers.translator.translate(TranslationJob(text, src, dst))
    except BackendError as exc:
        raise StrategyFailed(strategy.value, f"translation {src.code}->{dst.code} failed: {exc}") from exc


def _require_context(task: QueryTask, strategy: Strategy) -> str:
    if task.context is None:
        raise StrategyFailed(strategy.value, "task has no context; call run() to attach retrieval")
    return task.context


# ---------------------------------------------------------------- strategies


def run_mono(task: QueryTask, model: str, shots: ShotMode, providers: Providers) -> StrategyOutcome:
    context = _require_context(task, Strategy.MONO)
    instr = providers.templates.instruction(Strategy.MONO, task.language, providers.translator)
    prompt = render_qa(instr, context, task.question, shots.pick(task))
    answer = _chat(providers, model, prompt)
    return StrategyOutcome(answer, task.language.code, intermediates=[
        Step("prompt", task.language.code, prompt), Step("answer", task.language.code, answer)])


def _roundtrip(task: QueryTask, model: str, shots: ShotMode, providers: Providers,
               pivot: LanguageTag, strategy: Strategy) -> StrategyOutcome:
    src = task.language
    context = _require_context(task, strategy)
    exemplars = shots.pick(task)
    steps: list[Step] = []
    if pivot.code == src.code:
        instr = providers.templates.instruction(strategy, src, providers.translator)
        prompt = render_qa(instr, context, task.question, exemplars)
        answer = _chat(providers, model, prompt)
        steps += [Step("prompt", src.code, prompt), Step("answer", src.code, answer),
                  Step("roundtrip-skipped", src.code, "")]
        return StrategyOutcome(answer, src.code, intermediates=steps)

    def fwd(text):
        return _translate(providers, text, src, pivot, strategy)

    t_context, t_question = fwd(context), fwd(task.question)
    steps += [Step(f"translate:{src.code}->{pivot.code}:context", pivot.code, t_context),
              Step(f"translate:{src.code}->{pivot.code}:question", pivot.code, t_question)]
    t_exemplars = [Exemplar(fwd(ex.question), fwd(ex.context), fwd(ex.answer), ex.id, pivot.code) for ex in exemplars]
    instr = providers.templates.instruction(strategy, pivot, providers.translator)
    prompt = render_qa(instr, t_context, t_question, t_exemplars)
    pivot_answer = _chat(providers, model, prompt)
    steps += [Step("prompt", pivot.code, prompt), Step("answer", pivot.code, pivot_answer)]
    answer = _translate(providers, pivot_answer, pivot, src, strategy)
    steps.append(Step(f"translate:{pivot.code}->{src.code}:answer", src.code, answer))
    return StrategyOutcome(answer, src.code, intermediates=steps)


def run_trans(task: QueryTask, model: str, shots: ShotMode, providers: Providers) -> StrategyOutcome:
    return _roundtrip(task, model, shots, providers, ENGLISH, Strategy.TRANS)


def resolve_pivot(task: QueryTask, providers: Providers) -> Optional[LanguageTag]:
    if providers.pivots is None:
        return None
    return providers.pivots.pivot(task.language)


def run_sim(task: QueryTask, model: str, shots: ShotMode, providers: Providers,
            pivot: Optional[LanguageTag] = None) -> StrategyOutcome:
    if pivot is None:
        pivot = resolve_pivot(task, providers)
    if pivot is None:
        raise StrategyInapplicable(Strategy.SIM.value, f"no similar high-resource language for {task.language.code}")
    return _roundtrip(task, model, shots, providers, pivot, Strategy.SIM)


def _base_candidates(task, model, shots, providers, strategy: Strategy) -> tuple[list[str], list[Step]]:
    answers, steps = [], []
    for name, fn in (("Mono", run_mono), ("Trans", run_trans), ("Sim", run_sim)):
        try:
            out = fn(task, model, shots, providers)
        except StrategyInapplicable:
            steps.append(Step(f"candidate:{name}:inapplicable", task.language.code, ""))
            continue
        except StrategyFailed as exc:
            steps.append(Step(f"candidate:{name}:failed", task.language.code, exc.reason))
            continue
        answers.append(out.final_answer)
        steps.append(Step(f"candidate:{name}", task.language.code, out.final_answer))
    if len(answers) < 2:
        raise StrategyFailed(strategy.value, f"only {len(answers)} base strategies succeeded")
    return answers, steps


def run_agg_src(task: QueryTask, model: str, shots: ShotMode, providers: Providers) -> StrategyOutcome:
    candidates, steps = _base_candidates(task, model, shots, providers, Strategy.AGG_SRC)
    instr = providers.templates.instruction(Strategy.AGG_SRC, task.language, providers.translator)
    prompt = render_aggregate(instr, task.context, task.question, candidates)
    answer = _chat(providers, model, prompt)
    steps += [Step("prompt", task.language.code, prompt), Step("answer", task.language.code, answer)]
    return StrategyOutcome(answer, task.language.code, intermediates=steps)


def run_agg_trans(task: QueryTask, model: str, shots: ShotMode, providers: Providers) -> StrategyOutcome:
    strategy = Strategy.AGG_TRANS
    src = task.language
    candidates, steps = _base_candidates(task, model, shots, providers, strategy)
    if src.code == ENGLISH.code:
        en_cands, en_context, en_question = candidates, task.context, task.question
    else:
        en_cands = [_translate(providers, c, src, ENGLISH, strategy) for c in candidates]
        en_context = _translate(providers, task.context, src, ENGLISH, strategy)
        en_question = _translate(providers, task.question, src, ENGLISH, strategy)
        steps += [Step(f"translate:{src.code}->en:candidate", "en", c) for c in en_cands]
    instr = providers.templates.instruction(strategy, ENGLISH, providers.translator)
    prompt = render_aggregate(instr, en_context, en_question, en_cands)
    en_answer = _chat(providers, model, prompt)
    steps += [Step("prompt", "en", prompt), Step("answer", "en", en_answer)]
    if src.code == ENGLISH.code:
        return StrategyOutcome(en_answer, src.code, intermediates=steps)
    answer = _translate(providers, en_answer, ENGLISH, src, strategy)
    steps.append(Step(f"translate:en->{src.code}:answer", src.code, answer))
    return StrategyOutcome(answer, src.code, intermediates=steps)


_DISPATCH = {
    Strategy.MONO: run_mono,
    Strategy.TRANS: run_trans,
    Strategy.SIM: run_sim,
    Strategy.AGG_SRC: run_agg_src,
    Strategy.AGG_TRANS: run_agg_trans,
}


def attach_context(task: QueryTask, embedding_id: str, providers: Providers) -> QueryTask:
    """Fill in retrieved context when the task carries none (gold-passage tasks pass through)."""
    if task.context is not None:
        return task
    try:
        index = providers.indexes[embedding_id]
        embedder = providers.embedders[embedding_id]
    except KeyError:
        raise InvalidConfiguration(f"no retrieval index for embedding {embedding_id!r}") from None
    hits = search(index, task.question, embedder, providers.k)
    return replace(task, context="\n".join(h.chunk.text for h in hits))


def run(strategy_id, task: QueryTask, config: Configuration, providers: Providers,
        shots: ShotMode = ShotMode.few()) -> StrategyOutcome:
    strategy = Strategy.parse(strategy_id)
    task = attach_context(task, config.embedding_id, providers)
    try:
        outcome = _DISPATCH[strategy](task, config.model_id, shots, providers)
    except BackendUnavailable as exc:
        raise StrategyFailed(strategy.value, str(exc)) from exc
    outcome.config_used = config
    return outcome
