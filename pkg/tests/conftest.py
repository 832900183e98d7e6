from pathlib import Path

import pytest

from polyroute.backends import EchoChat, ExtractiveMockChat, HashedEmbedder, TaggingTranslator
from polyroute.config_space import Exemplar, LanguageTag, QueryTask
from polyroute.langsim import DistanceTable, PivotResolver
from polyroute.strategies import Providers

FIXTURES = Path(__file__).parent / "fixtures"

HINDI = LanguageTag("hi", "non_latin", 4)
TAMIL = LanguageTag("ta", "non_latin", 3)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def mini_squad():
    return FIXTURES / "mini_squad.json"


def toy_table():
    """Hand-built distances: ta is far from everything, hi is close to bn and fr."""
    langs = [
        {"code": "hi", "class": 4, "script": "non_latin"},
        {"code": "bn", "class": 3, "script": "non_latin"},
        {"code": "fr", "class": 5, "script": "latin"},
        {"code": "sw", "class": 2, "script": "latin"},
        {"code": "ta", "class": 3, "script": "non_latin"},
    ]
    d = {"hi|bn": 0.2, "hi|fr": 0.6, "hi|sw": 0.1, "bn|fr": 0.5, "bn|sw": 0.4, "fr|sw": 0.3}
    return DistanceTable.from_json({
        "features": ["syntactic", "genetic", "geographic"],
        "languages": langs,
        "distances": {f: dict(d) for f in ("syntactic", "genetic", "geographic")},
    })


@pytest.fixture
def table():
    return toy_table()


def make_task(lang=HINDI, context="The fort was built by Akbar in 1565. It stands on the river bank.",
              question="Who built the fort?", gold=("Akbar",), n_exemplars=4, task_id="t1"):
    exemplars = tuple(
        Exemplar(f"question {i}?", f"context sentence {i}.", f"answer {i}", f"ex{i}", lang.code)
        for i in range(n_exemplars)
    )
    return QueryTask(task_id, lang, question, gold, context, exemplars)


def mock_providers(chat=None, translator=None, pivots=None, **kw):
    return Providers(
        chat={"*": chat or ExtractiveMockChat()},
        translator=translator or TaggingTranslator(),
        pivots=pivots if pivots is not None else PivotResolver(toy_table()),
        embedders=kw.pop("embedders", {"ada-002": HashedEmbedder("ada-002", 32)}),
        **kw,
    )


@pytest.fixture
def echo_providers():
    return mock_providers(chat=EchoChat())


# acceptance criteria append "PASS/FAIL" lines here; printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
