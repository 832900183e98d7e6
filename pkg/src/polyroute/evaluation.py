"""Answer scoring: multilingual token F1, LLM-judge enrichment, human scores."""

from __future__ import annotations

import collections
import enum
import json
import logging
import unicodedata
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from polyroute.backends import ChatBackend, ChatRequest
from polyroute.config_space import LanguageTag
from polyroute.errors import JudgeProtocolError

log = logging.getLogger(__name__)

# scripts written without spaces between words; scored per character
_CHAR_TOKEN_LANGS = {"zh", "ja", "th", "lo", "km", "my"}


class Verdict(str, enum.Enum):
    YES = "Yes"
    NO = "No"
    PARTIAL = "Partial"


@dataclass(frozen=True)
class NormalizedAnswer:
    tokens: tuple[str, ...]

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class EnrichedGroundTruth:
    original: str
    accepted: tuple[str, ...]


@lru_cache(maxsize=None)
def article_table() -> dict[str, frozenset[str]]:
    text = resources.files("polyroute.data").joinpath("articles.json").read_text("utf-8")
    return {k: frozenset(v) for k, v in json.loads(text).items()}


def judge_system_prompt() -> str:
    return resources.files("polyroute.data").joinpath("judge_system.txt").read_text("utf-8").strip()


def _lang_code(lang) -> str:
    return lang.code if isinstance(lang, LanguageTag) else str(lang)


def _is_cjk(ch: str) -> bool:
    return unicodedata.category(ch) == "Lo" and unicodedata.east_asian_width(ch) in ("W", "F")


def normalize(text: str, lang) -> NormalizedAnswer:
    code = _lang_code(lang)
    text = text.lower()
    text = "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))
    tokens = []
    articles = article_table().get(code, frozenset())
    for tok in text.split():
        if tok in articles:
            continue
        if code in _CHAR_TOKEN_LANGS:
            buf = ""
            for ch in tok:
                if _is_cjk(ch):
                    if buf:
                        tokens.append(buf)
                        buf = ""
                    tokens.append(ch)
                else:
                    buf += ch
            if buf:
                tokens.append(buf)
        else:
            tokens.append(tok)
    return NormalizedAnswer(tuple(tokens))


def token_f1(pred: NormalizedAnswer, gold: NormalizedAnswer) -> float:
    if not pred.tokens and not gold.tokens:
        return 1.0
    if not pred.tokens or not gold.tokens:
        return 0.0
    common = collections.Counter(pred.tokens) & collections.Counter(gold.tokens)
    same = sum(common.values())
    if same == 0:
        return 0.0
    precision = same / len(pred.tokens)
    recall = same / len(gold.tokens)
    return 2 * precision * recall / (precision + recall)


def mlqa_f1(pred: str, golds: Sequence[str], lang) -> float:
    """Best token F1 of ``pred`` against any gold answer."""
    p = normalize(pred, lang)
    return max(token_f1(p, normalize(g, lang)) for g in golds)


def parse_verdict(reply: str) -> Verdict:
    word = reply.strip().strip(".!\"'`*").strip().lower()
    for v in Verdict:
        if word == v.value.lower():
            return v
    raise JudgeProtocolError(reply)


def judge_user_message(question: str, context: str, gt: str, answer: str) -> str:
    return (
        f"Question: {question}\n"
        f"Passage: {context}\n"
        f"Reference answer: {gt}\n"
        f"Candidate answer: {answer}"
    )


def gpt_annotate(question: str, context: str, gt: str, answers: Sequence[str], judge: ChatBackend,
                 judge_model: str = "judge", strict: bool = True,
                 flagged: Optional[list[int]] = None) -> list[Verdict]:
    """One judge verdict per answer.

    With ``strict`` an unparseable reply raises ``JudgeProtocolError``;
    otherwise it becomes ``No`` and its position is appended to ``flagged``.
    """
    system = judge_system_prompt()
    out = []
    for i, ans in enumerate(answers):
        reply = judge.complete(ChatRequest(judge_model, system, judge_user_message(question, context or "", gt, ans)))
        try:
            out.append(parse_verdict(reply))
        except JudgeProtocolError:
            if strict:
                raise
            log.warning("judge reply %r for answer %d unparseable; treating as No", reply, i)
            if flagged is not None:
                flagged.append(i)
            out.append(Verdict.NO)
    return out


def enrich(gt: str, answers: Sequence[str], verdicts: Sequence[Verdict]) -> EnrichedGroundTruth:
    if len(answers) != len(verdicts):
        raise ValueError("answers and verdicts differ in length")
    accepted = [gt]
    for ans, v in zip(answers, verdicts):
        if Verdict(v) is Verdict.YES and ans not in accepted:
            accepted.append(ans)
    return EnrichedGroundTruth(gt, tuple(accepted))


def gptannotator_f1(pred: str, enriched: EnrichedGroundTruth, lang) -> float:
    return mlqa_f1(pred, enriched.accepted, lang)


def human_score(verdict: Verdict, pred: str, gt: str, lang, partial: str = "f1") -> float:
    verdict = Verdict(verdict)
    if verdict is Verdict.YES:
        return 1.0
    if verdict is Verdict.NO:
        return 0.0
    if partial == "half":
        return 0.5
    if partial != "f1":
        raise ValueError(f"partial must be 'f1' or 'half', got {partial!r}")
    return token_f1(normalize(pred, lang), normalize(gt, lang))


def load_human_annotations(path) -> dict[tuple[str, str], Verdict]:
    """Read ``{task_id, answer_id, verdict}`` JSONL records."""
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                out[(str(rec["task_id"]), str(rec["answer_id"]))] = parse_verdict(rec["verdict"])
            except (KeyError, JudgeProtocolError) as exc:
                raise ValueError(f"{path}:{n}: bad annotation record ({exc})") from exc
    return out


def score_pool(gt: str, answers: Iterable[str], verdicts: Sequence[Verdict], lang) -> list[float]:
    """Re-score every pooled answer against the enriched ground truth."""
    answers = list(answers)
    enriched = enrich(gt, answers, verdicts)
    return [gptannotator_f1(a, enriched, lang) for a in answers]


class OverlapJudge(ChatBackend):
    """Offline judge: compares reference and candidate by token F1.

    Replies ``Yes`` at or above ``yes_at``, ``Partial`` for any overlap, ``No``
    otherwise.  Stands in for an LLM judge in tests and dry runs.
    """

    def __init__(self, provider_id: str = "overlap-judge", yes_at: float = 0.5, cache=None, **kw):
        super().__init__(provider_id, cache, **kw)
        self.yes_at = yes_at

    def _complete(self, req):
        fields = {}
        for line in req.user_text.splitlines():
            key, _, value = line.partition(": ")
            fields[key] = value
        ref = normalize(fields.get("Reference answer", ""), "en")
        cand = normalize(fields.get("Candidate answer", ""), "en")
        f1 = token_f1(cand, ref)
        if f1 >= self.yes_at:
            return "Yes"
        return "Partial" if f1 > 0 else "No"
